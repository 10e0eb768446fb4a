//! Interleaved metadata/value target sequences.
//!
//! A chain is `start, (<metric>, value) × k, end` where every metric appears
//! at most once. Absent labels are simply left out of the chain.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::registry::{MetricValue, Registry};
use crate::vocab::{Token, TokenKind, TokenVocabulary, Tokenizer, VocabError, END, START};

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("label set is empty")]
    EmptyLabels,
    #[error("order policy names unknown metric {0}")]
    UnknownMetricInPolicy(String),
    #[error("order policy lists metric {0} twice")]
    DuplicateInPolicy(usize),
    #[error("fixed order does not cover metric {0}")]
    PolicyIncomplete(usize),
    #[error("malformed chain at position {position}: {reason}")]
    Malformed { position: usize, reason: String },
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

fn malformed(position: usize, reason: impl Into<String>) -> ChainError {
    ChainError::Malformed {
        position,
        reason: reason.into(),
    }
}

/// Partial map from metric index to a validated raw value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    values: BTreeMap<usize, MetricValue>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        registry: &Registry,
        metric: usize,
        value: MetricValue,
    ) -> Result<(), VocabError> {
        let spec = registry
            .get(metric)
            .ok_or_else(|| crate::registry::RegistryError::UnknownMetric(metric.to_string()))?;
        spec.validate_value(&value)?;
        self.values.insert(metric, value);
        Ok(())
    }

    pub fn from_named<'a>(
        registry: &Registry,
        entries: impl IntoIterator<Item = (&'a str, MetricValue)>,
    ) -> Result<Self, VocabError> {
        let mut set = LabelSet::new();
        for (name, value) in entries {
            let idx = registry.by_name(name)?.index;
            set.insert(registry, idx, value)?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, metric: usize) -> Option<&MetricValue> {
        self.values.get(&metric)
    }

    pub fn contains(&self, metric: usize) -> bool {
        self.values.contains_key(&metric)
    }

    pub fn metrics(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &MetricValue)> {
        self.values.iter().map(|(&k, v)| (k, v))
    }

    pub fn remove(&mut self, metric: usize) -> Option<MetricValue> {
        self.values.remove(&metric)
    }

    /// Encodes every value to its local token id.
    pub fn tokenize(&self, tokenizer: &Tokenizer) -> Result<TokenLabels, VocabError> {
        self.values
            .iter()
            .map(|(&m, v)| Ok((m, tokenizer.encode(m, v)?)))
            .collect()
    }
}

/// Metric index → local value id.
pub type TokenLabels = BTreeMap<usize, u32>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChainSequence {
    tokens: Vec<Token>,
}

impl ChainSequence {
    /// Wraps raw ids without checking; use [`parse`] to validate.
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    /// Frames a `(metric, local value)` list with start and end tokens.
    pub fn from_pairs(vocab: &TokenVocabulary, pairs: &[(usize, u32)]) -> Self {
        let mut tokens = Vec::with_capacity(pairs.len() * 2 + 2);
        tokens.push(START);
        for &(m, v) in pairs {
            tokens.push(vocab.metadata(m));
            tokens.push(vocab.value(m, v));
        }
        tokens.push(END);
        Self { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Tokens between the start and end markers, if both are present.
    pub fn body(&self) -> &[Token] {
        let t = &self.tokens;
        let a = usize::from(t.first() == Some(&START));
        let b = if t.len() > a && t.last() == Some(&END) {
            t.len() - 1
        } else {
            t.len()
        };
        &t[a..b]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderPolicy {
    /// Uniform permutation drawn from `seed`.
    RandomPermutation { seed: u64 },
    /// Present metrics in list order; every labeled metric must be listed.
    Fixed(Vec<usize>),
    /// Present metrics in list order; labeled metrics not listed are dropped.
    SubsetFixed(Vec<usize>),
}

fn check_list(list: &[usize], k: usize) -> Result<(), ChainError> {
    let mut seen = HashSet::new();
    for &m in list {
        if m >= k {
            return Err(ChainError::UnknownMetricInPolicy(m.to_string()));
        }
        if !seen.insert(m) {
            return Err(ChainError::DuplicateInPolicy(m));
        }
    }
    Ok(())
}

/// Deterministic uniform permutation of `metrics`.
pub fn random_order(metrics: &[usize], seed: u64) -> Vec<usize> {
    let mut out = metrics.to_vec();
    out.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    out
}

/// Metric visit order that `policy` assigns to the labeled metrics.
pub fn target_order(
    present: &[usize],
    k: usize,
    policy: &OrderPolicy,
) -> Result<Vec<usize>, ChainError> {
    if present.is_empty() {
        return Err(ChainError::EmptyLabels);
    }
    match policy {
        OrderPolicy::RandomPermutation { seed } => Ok(random_order(present, *seed)),
        OrderPolicy::Fixed(list) => {
            check_list(list, k)?;
            if let Some(&m) = present.iter().find(|m| !list.contains(m)) {
                return Err(ChainError::PolicyIncomplete(m));
            }
            Ok(list.iter().copied().filter(|m| present.contains(m)).collect())
        }
        OrderPolicy::SubsetFixed(list) => {
            check_list(list, k)?;
            let order: Vec<usize> = list.iter().copied().filter(|m| present.contains(m)).collect();
            if order.is_empty() {
                return Err(ChainError::EmptyLabels);
            }
            Ok(order)
        }
    }
}

/// Builds the training target for already tokenized labels.
pub fn build_from_tokens(
    vocab: &TokenVocabulary,
    labels: &TokenLabels,
    policy: &OrderPolicy,
) -> Result<ChainSequence, ChainError> {
    let present: Vec<usize> = labels.keys().copied().collect();
    for &m in &present {
        if m >= vocab.num_metrics() {
            return Err(ChainError::UnknownMetricInPolicy(m.to_string()));
        }
    }
    let order = target_order(&present, vocab.num_metrics(), policy)?;
    let pairs: Vec<(usize, u32)> = order.iter().map(|&m| (m, labels[&m])).collect();
    Ok(ChainSequence::from_pairs(vocab, &pairs))
}

/// Builds the interleaved metadata/value target for `labels`.
pub fn build_target(
    tokenizer: &Tokenizer,
    labels: &LabelSet,
    policy: &OrderPolicy,
) -> Result<ChainSequence, ChainError> {
    if labels.is_empty() {
        return Err(ChainError::EmptyLabels);
    }
    let tokens = labels.tokenize(tokenizer)?;
    build_from_tokens(tokenizer.vocab(), &tokens, policy)
}

/// Result of parsing a framed chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedChain {
    pub values: TokenLabels,
    pub order: Vec<usize>,
}

impl ParsedChain {
    pub fn pairs(&self) -> Vec<(usize, u32)> {
        self.order.iter().map(|&m| (m, self.values[&m])).collect()
    }

    /// Decodes local ids back to metric values (bin centroids for numerical
    /// metrics).
    pub fn decode(&self, tokenizer: &Tokenizer) -> Result<LabelSet, VocabError> {
        let mut set = LabelSet::new();
        for (&m, &v) in &self.values {
            set.values.insert(m, tokenizer.decode(m, v)?);
        }
        Ok(set)
    }
}

/// Parses a full chain: start, alternating pairs, end.
pub fn parse(vocab: &TokenVocabulary, seq: &ChainSequence) -> Result<ParsedChain, ChainError> {
    let t = seq.tokens();
    if t.first() != Some(&START) {
        return Err(malformed(0, "missing start token"));
    }
    if t.len() < 2 || t.last() != Some(&END) {
        return Err(malformed(t.len(), "missing end token"));
    }
    let state = ChainState::scan(vocab, &t[1..t.len() - 1]).map_err(|e| match e {
        ChainError::Malformed { position, reason } => malformed(position + 1, reason),
        other => other,
    })?;
    if state.pending.is_some() {
        return Err(malformed(t.len() - 1, "dangling metadata token"));
    }
    if state.order.is_empty() {
        return Err(malformed(1, "chain has no metric"));
    }
    Ok(ParsedChain {
        values: state.pairs.iter().copied().collect(),
        order: state.order,
    })
}

/// Structural summary of a chain prefix (body tokens, optionally led by
/// the start token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub visited: Vec<bool>,
    pub order: Vec<usize>,
    pub pairs: Vec<(usize, u32)>,
    /// Metric whose metadata token ends the prefix, awaiting its value.
    pub pending: Option<usize>,
}

impl ChainState {
    pub fn scan(vocab: &TokenVocabulary, prefix: &[Token]) -> Result<Self, ChainError> {
        let mut state = ChainState {
            visited: vec![false; vocab.num_metrics()],
            order: Vec::new(),
            pairs: Vec::new(),
            pending: None,
        };
        let body = if prefix.first() == Some(&START) {
            &prefix[1..]
        } else {
            prefix
        };
        for (i, &tok) in body.iter().enumerate() {
            let kind = vocab
                .kind(tok)
                .ok_or_else(|| malformed(i, format!("unknown token id {}", tok.0)))?;
            match (state.pending, kind) {
                (None, TokenKind::Metadata { metric }) => {
                    if state.visited[metric] {
                        return Err(malformed(i, format!("metric {metric} repeated")));
                    }
                    state.pending = Some(metric);
                }
                (Some(p), TokenKind::Value { metric, local }) if metric == p => {
                    state.visited[metric] = true;
                    state.order.push(metric);
                    state.pairs.push((metric, local));
                    state.pending = None;
                }
                (Some(p), TokenKind::Value { metric, .. }) => {
                    return Err(malformed(
                        i,
                        format!("value of metric {metric} after metadata of metric {p}"),
                    ));
                }
                (None, TokenKind::Value { .. }) => {
                    return Err(malformed(i, "value token without metadata"));
                }
                (Some(_), TokenKind::Metadata { .. }) => {
                    return Err(malformed(i, "metadata token where a value is expected"));
                }
                (_, TokenKind::Start) => return Err(malformed(i, "unexpected start token")),
                (_, TokenKind::End) => return Err(malformed(i, "unexpected end token")),
            }
        }
        Ok(state)
    }

    pub fn last_pair(&self) -> Option<(usize, u32)> {
        self.pairs.last().copied()
    }

    pub fn remaining(&self) -> impl Iterator<Item = usize> + '_ {
        self.visited
            .iter()
            .enumerate()
            .filter(|(_, v)| !**v)
            .map(|(i, _)| i)
    }
}

/// A named static metric order read from a one-name-per-line file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderPreset {
    pub name: String,
    pub metrics: Vec<String>,
}

const ORDER_MR: &str = include_str!("../presets/order-mr.txt");
const ORDER_C2F: &str = include_str!("../presets/order-c2f.txt");

impl OrderPreset {
    /// Blank lines and `#` comments are ignored. Names must be unique.
    pub fn parse(name: &str, text: &str) -> Result<Self, ChainError> {
        let mut metrics = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen.insert(line.to_string()) {
                return Err(malformed(lineno + 1, format!("metric `{line}` listed twice")));
            }
            metrics.push(line.to_string());
        }
        Ok(OrderPreset {
            name: name.to_string(),
            metrics,
        })
    }

    /// `order-mr` (matching-required metrics first) or `order-c2f`
    /// (coarse-to-fine).
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "order-mr" => ORDER_MR,
            "order-c2f" => ORDER_C2F,
            _ => return None,
        };
        Some(Self::parse(name, text).expect("bundled presets are well formed"))
    }

    /// Registry indices in preset order; names the registry lacks are skipped.
    pub fn resolve(&self, registry: &Registry) -> Vec<usize> {
        self.metrics
            .iter()
            .filter_map(|n| registry.index_of(n))
            .collect()
    }
}
