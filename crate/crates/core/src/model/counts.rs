//! Count-based reference models.
//!
//! * `Marginal`: per-metric value frequencies and context-free metric
//!   frequencies. No dependence on features or earlier pairs.
//! * `Conditional`: value counts keyed by (feature bucket, previous pair,
//!   current metric), backing off to (feature bucket, current metric) and
//!   then to the marginal. Metric-choice counts are keyed by (feature
//!   bucket, previous metric).
//!
//! Each backoff level is a Dirichlet posterior whose prior is the level
//! below: `p(v) = (c(v) + β·p_lower(v)) / (n + β)`. A context with no
//! observations therefore reproduces the lower level exactly. The bottom
//! level uses additive smoothing `α`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    legal_next, EndPolicy, FeatureQuantizer, ModelError, NextTokenDistribution, SequenceModel,
    MODEL_FORMAT_VERSION,
};
use crate::chain::{random_order, ChainError, ChainState};
use crate::dataset::UtteranceRecord;
use crate::vocab::{Token, TokenVocabulary, Tokenizer, END};

const FORMAT_TAG: &str = "metric-chain-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Marginal,
    #[default]
    Conditional,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marginal" => Ok(ModelKind::Marginal),
            "conditional" => Ok(ModelKind::Conditional),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Additive smoothing at the bottom level.
    pub alpha: f64,
    /// Prior strength `β` tying each backoff level to the one below.
    pub backoff_mass: f64,
    /// Quantile buckets per quantized feature dimension.
    pub feature_buckets: usize,
    /// Number of leading feature dimensions that key the count tables.
    pub feature_dims: usize,
    /// Resolution of the previous value in pair contexts; 0 keeps the exact
    /// value token.
    pub context_bins: usize,
    /// Random metric orders sampled per record for order-dependent counts.
    pub orders_per_record: usize,
    pub end_policy: EndPolicy,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Conditional,
            alpha: 0.5,
            backoff_mass: 1.0,
            feature_buckets: 4,
            feature_dims: 2,
            context_bins: 0,
            orders_per_record: 4,
            end_policy: EndPolicy::Scored,
            seed: 0,
        }
    }
}

impl ModelConfig {
    fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.backoff_mass.is_finite() && self.backoff_mass > 0.0) {
            return bad("backoff_mass must be positive");
        }
        if self.orders_per_record == 0 {
            return bad("orders_per_record must be at least 1");
        }
        if self.feature_buckets == 0 || self.feature_dims > 8 {
            return bad("feature quantizer shape");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Table {
    counts: BTreeMap<u32, u32>,
    total: u64,
}

impl Table {
    fn add(&mut self, local: u32) {
        *self.counts.entry(local).or_insert(0) += 1;
        self.total += 1;
    }

    /// Posterior over `lower.len()` outcomes with `lower` as prior mean.
    fn smooth(&self, lower: Vec<f64>, mass: f64) -> Vec<f64> {
        if self.total == 0 {
            return lower;
        }
        let denom = self.total as f64 + mass;
        let mut out: Vec<f64> = lower.iter().map(|p| mass * p / denom).collect();
        for (&k, &c) in &self.counts {
            out[k as usize] += c as f64 / denom;
        }
        out
    }
}

fn smooth_opt(table: Option<&Table>, lower: Vec<f64>, mass: f64) -> Vec<f64> {
    match table {
        Some(t) => t.smooth(lower, mass),
        None => lower,
    }
}

fn additive(counts: &[u32], alpha: f64) -> Vec<f64> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    let denom = total as f64 + alpha * counts.len() as f64;
    counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
}

/// SplitMix64 finalizer, used to derive per-record order seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn order_seed(seed: u64, record: usize, draw: usize) -> u64 {
    mix(mix(seed ^ mix(record as u64)) ^ draw as u64)
}

/// A trained count model. Immutable; `next_dist` is pure.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    config: ModelConfig,
    vocab: TokenVocabulary,
    vocab_hash: String,
    feature_dim: usize,
    quantizer: FeatureQuantizer,
    value_marginal: Vec<Vec<u32>>,
    value_by_bucket: BTreeMap<(u32, u32), Table>,
    value_by_pair: BTreeMap<(u32, u32, u32, u32), Table>,
    /// Index K stands for the end token.
    meta_marginal: Vec<u32>,
    /// Keyed by (bucket, previous metric); previous metric K means "start".
    meta_by_context: BTreeMap<(u32, u32), Table>,
}

impl TrainedModel {
    pub fn train(
        tokenizer: &Tokenizer,
        records: &[UtteranceRecord],
        config: &ModelConfig,
    ) -> Result<Self, ModelError> {
        config.check()?;
        let vocab = tokenizer.vocab().clone();
        let k = vocab.num_metrics();
        let feature_dim = records.first().map(|r| r.features.len()).unwrap_or(0);
        for r in records {
            if r.features.len() != feature_dim {
                return Err(ModelError::DimensionMismatch {
                    expected: feature_dim,
                    found: r.features.len(),
                });
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteFeature);
            }
        }
        if records.iter().all(|r| r.labels.is_empty()) {
            return Err(ModelError::EmptyDataset);
        }

        let quantizer = match config.kind {
            ModelKind::Marginal => FeatureQuantizer::trivial(),
            ModelKind::Conditional => {
                let rows: Vec<&[f64]> = records.iter().map(|r| r.features.as_slice()).collect();
                FeatureQuantizer::fit(&rows, config.feature_dims.min(feature_dim), config.feature_buckets)
            }
        };

        let mut model = TrainedModel {
            config: config.clone(),
            vocab_hash: tokenizer.hash().to_string(),
            feature_dim,
            quantizer,
            value_marginal: vocab.block_sizes().map(|s| vec![0; s]).collect(),
            value_by_bucket: BTreeMap::new(),
            value_by_pair: BTreeMap::new(),
            meta_marginal: vec![0; k + 1],
            meta_by_context: BTreeMap::new(),
            vocab,
        };
        let conditional = config.kind == ModelKind::Conditional;

        for (i, rec) in records.iter().enumerate() {
            if rec.labels.is_empty() {
                continue;
            }
            let tokens = rec
                .labels
                .tokenize(tokenizer)
                .map_err(|e| ModelError::Chain(ChainError::Vocab(e)))?;
            let fb = model.quantizer.bucket(&rec.features);
            for (&m, &v) in &tokens {
                model.value_marginal[m][v as usize] += 1;
                if conditional {
                    model
                        .value_by_bucket
                        .entry((fb, m as u32))
                        .or_default()
                        .add(v);
                }
            }
            let present: Vec<usize> = tokens.keys().copied().collect();
            for draw in 0..config.orders_per_record {
                let order = random_order(&present, order_seed(config.seed, i, draw));
                let mut prev: Option<(usize, u32)> = None;
                for &m in &order {
                    let v = tokens[&m];
                    model.count_meta(fb, prev.map(|p| p.0), m as u32);
                    if let (true, Some((pm, pv))) = (conditional, prev) {
                        let ctx = model.context_of(pm, pv);
                        model
                            .value_by_pair
                            .entry((fb, pm as u32, ctx, m as u32))
                            .or_default()
                            .add(v);
                    }
                    prev = Some((m, v));
                }
                model.count_meta(fb, prev.map(|p| p.0), k as u32);
            }
        }
        Ok(model)
    }

    fn count_meta(&mut self, fb: u32, prev_metric: Option<usize>, next: u32) {
        let k = self.vocab.num_metrics();
        self.meta_marginal[next as usize] += 1;
        if self.config.kind == ModelKind::Conditional {
            let prev = prev_metric.unwrap_or(k) as u32;
            self.meta_by_context.entry((fb, prev)).or_default().add(next);
        }
    }

    fn context_size(&self, metric: usize) -> usize {
        let size = self.vocab.block_size(metric);
        match self.config.context_bins {
            0 => size,
            c => c.min(size),
        }
    }

    fn context_of(&self, metric: usize, local: u32) -> u32 {
        let size = self.vocab.block_size(metric);
        match self.config.context_bins {
            0 => local,
            c if c >= size => local,
            c => (local as u64 * c as u64 / size as u64) as u32,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn quantizer(&self) -> &FeatureQuantizer {
        &self.quantizer
    }

    /// Value distribution of `metric` as a dense vector over its block.
    fn value_probs(&self, fb: u32, metric: usize, last: Option<(usize, u32)>) -> Vec<f64> {
        let mut p = additive(&self.value_marginal[metric], self.config.alpha);
        if self.config.kind == ModelKind::Conditional {
            let beta = self.config.backoff_mass;
            p = smooth_opt(self.value_by_bucket.get(&(fb, metric as u32)), p, beta);
            if let Some((pm, pv)) = last {
                let key = (fb, pm as u32, self.context_of(pm, pv), metric as u32);
                p = smooth_opt(self.value_by_pair.get(&key), p, beta);
            }
        }
        p
    }

    /// Next-metric distribution over `K+1` outcomes (index K = end), before
    /// structural masking.
    fn meta_probs(&self, fb: u32, last_metric: Option<usize>) -> Vec<f64> {
        let k = self.vocab.num_metrics();
        let mut q = additive(&self.meta_marginal, self.config.alpha);
        if self.config.kind == ModelKind::Conditional {
            let prev = last_metric.unwrap_or(k) as u32;
            q = smooth_opt(self.meta_by_context.get(&(fb, prev)), q, self.config.backoff_mass);
        }
        q
    }

    pub fn to_json(&self) -> String {
        let art = ModelArtifact {
            format: FORMAT_TAG.to_string(),
            version: MODEL_FORMAT_VERSION,
            vocab_hash: self.vocab_hash.clone(),
            config: self.config.clone(),
            feature_dim: self.feature_dim,
            block_sizes: self.vocab.block_sizes().collect(),
            quantizer: self.quantizer.clone(),
            value_marginal: self.value_marginal.clone(),
            value_by_bucket: self
                .value_by_bucket
                .iter()
                .map(|(&(a, b), t)| TableEntry::new([a, b], t))
                .collect(),
            value_by_pair: self
                .value_by_pair
                .iter()
                .map(|(&(a, b, c, d), t)| TableEntry::new([a, b, c, d], t))
                .collect(),
            meta_marginal: self.meta_marginal.clone(),
            meta_by_context: self
                .meta_by_context
                .iter()
                .map(|(&(a, b), t)| TableEntry::new([a, b], t))
                .collect(),
        };
        serde_json::to_string(&art).expect("model serializes")
    }

    /// Parses an artifact and checks its internal consistency, without
    /// binding it to a tokenizer.
    pub fn parse_unverified(text: &str) -> Result<Self, ModelError> {
        let head: ArtifactHead =
            serde_json::from_str(text).map_err(|e| ModelError::CorruptArtifact(e.to_string()))?;
        if head.format != FORMAT_TAG || head.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch(format!(
                "found {} v{}, expected {FORMAT_TAG} v{MODEL_FORMAT_VERSION}",
                head.format, head.version
            )));
        }
        let art: ModelArtifact =
            serde_json::from_str(text).map_err(|e| ModelError::CorruptArtifact(e.to_string()))?;
        art.into_model()
    }

    /// Loads an artifact trained on `tokenizer`.
    pub fn from_json(text: &str, tokenizer: &Tokenizer) -> Result<Self, ModelError> {
        let model = Self::parse_unverified(text)?;
        if model.vocab_hash != tokenizer.hash() {
            return Err(ModelError::VersionMismatch(format!(
                "vocabulary hash {} does not match tokenizer {}",
                model.vocab_hash,
                tokenizer.hash()
            )));
        }
        if model.vocab != *tokenizer.vocab() {
            return Err(ModelError::VersionMismatch("vocabulary layout differs".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: impl AsRef<Path>, tokenizer: &Tokenizer) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::CorruptArtifact(e.to_string()))?;
        Self::from_json(&text, tokenizer)
    }
}

impl SequenceModel for TrainedModel {
    fn vocab(&self) -> &TokenVocabulary {
        &self.vocab
    }

    fn end_policy(&self) -> EndPolicy {
        self.config.end_policy
    }

    fn next_dist(
        &self,
        prefix: &[Token],
        features: &[f64],
    ) -> Result<NextTokenDistribution, ModelError> {
        if features.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature);
        }
        let state = ChainState::scan(&self.vocab, prefix).map_err(ModelError::MalformedPrefix)?;
        let fb = self.quantizer.bucket(features);

        if let Some(metric) = state.pending {
            let probs = self.value_probs(fb, metric, state.last_pair());
            let entries = self
                .vocab
                .value_block(metric)
                .map(Token)
                .zip(probs)
                .collect();
            return Ok(NextTokenDistribution::from_sorted(entries));
        }

        let legal = legal_next(&self.vocab, &state, self.config.end_policy);
        if legal == [END] {
            return Ok(NextTokenDistribution::from_sorted(vec![(END, 1.0)]));
        }
        let k = self.vocab.num_metrics();
        let q = self.meta_probs(fb, state.order.last().copied());
        let weighted = legal
            .into_iter()
            .map(|t| {
                let idx = if t == END { k } else { (t.0 - 2) as usize };
                (t, q[idx])
            })
            .collect();
        Ok(NextTokenDistribution::normalized(weighted))
    }
}

#[derive(Deserialize)]
struct ArtifactHead {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry<K> {
    key: K,
    counts: Vec<[u32; 2]>,
}

impl<K> TableEntry<K> {
    fn new(key: K, t: &Table) -> Self {
        TableEntry {
            key,
            counts: t.counts.iter().map(|(&a, &b)| [a, b]).collect(),
        }
    }

    fn table(&self, outcomes: usize) -> Result<Table, ModelError> {
        let mut t = Table::default();
        for &[k, c] in &self.counts {
            if k as usize >= outcomes || c == 0 || t.counts.insert(k, c).is_some() {
                return Err(ModelError::CorruptArtifact("bad count entry".into()));
            }
            t.total += c as u64;
        }
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelArtifact {
    format: String,
    version: u32,
    vocab_hash: String,
    config: ModelConfig,
    feature_dim: usize,
    block_sizes: Vec<usize>,
    quantizer: FeatureQuantizer,
    value_marginal: Vec<Vec<u32>>,
    value_by_bucket: Vec<TableEntry<[u32; 2]>>,
    value_by_pair: Vec<TableEntry<[u32; 4]>>,
    meta_marginal: Vec<u32>,
    meta_by_context: Vec<TableEntry<[u32; 2]>>,
}

impl ModelArtifact {
    fn into_model(self) -> Result<TrainedModel, ModelError> {
        let corrupt = |m: &str| ModelError::CorruptArtifact(m.to_string());
        self.config.check().map_err(|e| corrupt(&e.to_string()))?;
        let k = self.block_sizes.len();
        if k == 0 || k > 1 << 16 || self.block_sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(corrupt("block sizes"));
        }
        if !self.quantizer.is_well_formed()
            || self.quantizer.dims() > self.feature_dim
            || (self.config.kind == ModelKind::Marginal && self.quantizer.dims() > 0)
        {
            return Err(corrupt("feature quantizer"));
        }
        if self.value_marginal.len() != k
            || self
                .value_marginal
                .iter()
                .zip(&self.block_sizes)
                .any(|(v, &s)| v.len() != s)
        {
            return Err(corrupt("value marginal shape"));
        }
        if self.meta_marginal.len() != k + 1 {
            return Err(corrupt("metadata marginal shape"));
        }
        let conditional = self.config.kind == ModelKind::Conditional;
        if !conditional
            && !(self.value_by_bucket.is_empty()
                && self.value_by_pair.is_empty()
                && self.meta_by_context.is_empty())
        {
            return Err(corrupt("marginal model with context tables"));
        }

        let vocab = TokenVocabulary::new(&self.block_sizes);
        let mut model = TrainedModel {
            config: self.config,
            vocab,
            vocab_hash: self.vocab_hash,
            feature_dim: self.feature_dim,
            quantizer: self.quantizer,
            value_marginal: self.value_marginal,
            value_by_bucket: BTreeMap::new(),
            value_by_pair: BTreeMap::new(),
            meta_marginal: self.meta_marginal,
            meta_by_context: BTreeMap::new(),
        };
        let buckets = model.quantizer.num_buckets() as u32;
        let duplicate = || corrupt("duplicate table key");

        for e in &self.value_by_bucket {
            let [fb, m] = e.key;
            if fb >= buckets || m as usize >= k {
                return Err(corrupt("bucket table key"));
            }
            let t = e.table(model.vocab.block_size(m as usize))?;
            if model.value_by_bucket.insert((fb, m), t).is_some() {
                return Err(duplicate());
            }
        }
        for e in &self.value_by_pair {
            let [fb, pm, ctx, m] = e.key;
            if fb >= buckets
                || pm as usize >= k
                || m as usize >= k
                || pm == m
                || ctx as usize >= model.context_size(pm as usize)
            {
                return Err(corrupt("pair table key"));
            }
            let t = e.table(model.vocab.block_size(m as usize))?;
            if model.value_by_pair.insert((fb, pm, ctx, m), t).is_some() {
                return Err(duplicate());
            }
        }
        for e in &self.meta_by_context {
            let [fb, prev] = e.key;
            if fb >= buckets || prev as usize > k {
                return Err(corrupt("metadata table key"));
            }
            let t = e.table(k + 1)?;
            if model.meta_by_context.insert((fb, prev), t).is_some() {
                return Err(duplicate());
            }
        }
        Ok(model)
    }
}
