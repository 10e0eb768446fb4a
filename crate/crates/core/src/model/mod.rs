//! Autoregressive next-token distributions over chains.
//!
//! A [`SequenceModel`] scores chain prefixes conditioned on a feature
//! vector. Structural legality is enforced inside `next_dist`: tokens that
//! cannot follow the prefix get exactly zero probability.

mod counts;
mod quantizer;

pub use counts::{ModelConfig, ModelKind, TrainedModel};
pub use quantizer::FeatureQuantizer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, ChainSequence, ChainState};
use crate::vocab::{Token, TokenVocabulary, END};

/// Artifact format version written by [`TrainedModel::to_json`].
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset has no labeled record")]
    EmptyDataset,
    #[error("feature dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature value")]
    NonFiniteFeature,
    #[error("malformed prefix: {0}")]
    MalformedPrefix(ChainError),
    #[error("malformed sequence: {0}")]
    MalformedSequence(ChainError),
    #[error("artifact version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt model artifact: {0}")]
    CorruptArtifact(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Whether the end token is a predicted event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EndPolicy {
    /// After at least one pair, `end` competes with the unvisited metadata
    /// tokens and its probability is part of sequence likelihoods.
    #[default]
    Scored,
    /// `end` only follows a chain that visited every metric; it is framing
    /// and contributes nothing to likelihoods.
    Implicit,
}

/// Probability over the legal next tokens. Tokens not listed have
/// probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    entries: Vec<(Token, f64)>,
}

impl NextTokenDistribution {
    /// `entries` must be sorted by token id.
    pub fn from_sorted(entries: Vec<(Token, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    /// Builds a distribution from unnormalized non-negative weights.
    pub fn normalized(mut entries: Vec<(Token, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let total: f64 = entries.iter().map(|e| e.1).sum();
        for e in &mut entries {
            e.1 /= total;
        }
        Self { entries }
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.entries
            .binary_search_by_key(&token, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn entries(&self) -> &[(Token, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Most probable token; ties go to the lower id.
    pub fn argmax(&self) -> Option<(Token, f64)> {
        let mut best: Option<(Token, f64)> = None;
        for &(t, p) in &self.entries {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((t, p));
            }
        }
        best
    }

    /// The `n` most probable tokens, descending, ties by lower id.
    pub fn top(&self, n: usize) -> Vec<(Token, f64)> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(n);
        v
    }
}

pub trait SequenceModel {
    fn vocab(&self) -> &TokenVocabulary;

    fn end_policy(&self) -> EndPolicy {
        EndPolicy::Scored
    }

    /// `P(x_t | prefix, features)` where `prefix` holds body tokens (an
    /// optional leading start token is accepted).
    fn next_dist(
        &self,
        prefix: &[Token],
        features: &[f64],
    ) -> Result<NextTokenDistribution, ModelError>;
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn vocab(&self) -> &TokenVocabulary {
        (**self).vocab()
    }
    fn end_policy(&self) -> EndPolicy {
        (**self).end_policy()
    }
    fn next_dist(
        &self,
        prefix: &[Token],
        features: &[f64],
    ) -> Result<NextTokenDistribution, ModelError> {
        (**self).next_dist(prefix, features)
    }
}

/// A model whose weights come from a closure over the parsed prefix.
///
/// `weight(state, token)` is called for every legal next token and must
/// return a positive finite number; the results are normalized. Handy for
/// hand-built models and randomized test models.
pub struct FnModel<F> {
    vocab: TokenVocabulary,
    end: EndPolicy,
    weight: F,
}

impl<F> FnModel<F>
where
    F: Fn(&ChainState, Token) -> f64,
{
    pub fn new(vocab: TokenVocabulary, end: EndPolicy, weight: F) -> Self {
        Self { vocab, end, weight }
    }
}

impl<F> SequenceModel for FnModel<F>
where
    F: Fn(&ChainState, Token) -> f64,
{
    fn vocab(&self) -> &TokenVocabulary {
        &self.vocab
    }

    fn end_policy(&self) -> EndPolicy {
        self.end
    }

    fn next_dist(
        &self,
        prefix: &[Token],
        _features: &[f64],
    ) -> Result<NextTokenDistribution, ModelError> {
        let state = ChainState::scan(&self.vocab, prefix).map_err(ModelError::MalformedPrefix)?;
        let legal = legal_next(&self.vocab, &state, self.end);
        if legal.is_empty() {
            return Err(ModelError::MalformedPrefix(ChainError::Malformed {
                position: prefix.len(),
                reason: "no legal continuation".into(),
            }));
        }
        let entries = legal
            .into_iter()
            .map(|t| (t, (self.weight)(&state, t)))
            .collect();
        Ok(NextTokenDistribution::normalized(entries))
    }
}

/// Tokens that may legally follow a prefix in state `state`.
pub fn legal_next(vocab: &TokenVocabulary, state: &ChainState, end: EndPolicy) -> Vec<Token> {
    if let Some(m) = state.pending {
        return vocab.value_block(m).map(Token).collect();
    }
    let mut out = Vec::new();
    let complete = state.visited.iter().all(|&v| v);
    if complete || (end == EndPolicy::Scored && !state.order.is_empty()) {
        out.push(END);
    }
    out.extend(state.remaining().map(|m| vocab.metadata(m)));
    out
}

/// Sum of log next-token probabilities over `body`.
pub fn prefix_loglik<M: SequenceModel + ?Sized>(
    model: &M,
    body: &[Token],
    features: &[f64],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for i in 0..body.len() {
        let dist = model.next_dist(&body[..i], features)?;
        total += dist.prob(body[i]).ln();
    }
    Ok(total)
}

/// Log-likelihood of a complete framed chain, including the end token when
/// the model scores it.
pub fn sequence_loglik<M: SequenceModel + ?Sized>(
    model: &M,
    seq: &ChainSequence,
    features: &[f64],
) -> Result<f64, ModelError> {
    crate::chain::parse(model.vocab(), seq).map_err(ModelError::MalformedSequence)?;
    let body = seq.body();
    let mut total = prefix_loglik(model, body, features)?;
    if model.end_policy() == EndPolicy::Scored {
        total += model.next_dist(body, features)?.prob(END).ln();
    }
    Ok(total)
}
