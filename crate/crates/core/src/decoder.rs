//! Two-step confidence-oriented decoding.
//!
//! For every live hypothesis and every metric still to predict:
//!
//! 1. append the metric's metadata token and read the value distribution;
//!    its argmax is the provisional value and its probability the
//!    confidence;
//! 2. score the top-`width` value candidates by the log-likelihood of the
//!    whole extended prefix and keep the best.
//!
//! Extensions from all hypotheses are pooled and the best `beam` survive
//! to the next round. Static orders run the same search over a fixed
//! metric sequence; teacher forcing replaces each chosen value with the
//! ground truth before continuing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainState, TokenLabels};
use crate::model::{ModelError, SequenceModel};
use crate::registry::MetricValue;
use crate::vocab::{Token, TokenKind, Tokenizer, VocabError};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("static order does not cover queried metric {0}")]
    StaticOrderIncomplete(usize),
    #[error("metric {0} is already decided in this hypothesis")]
    MetricAlreadyDecided(usize),
    #[error("no ground truth for metric {0}")]
    MissingGroundTruth(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderMode {
    /// The search picks the metric order.
    Dynamic,
    /// Metrics are visited in list order (restricted to the query).
    Static(Vec<usize>),
}

/// What each (hypothesis, metric) expansion contributes to the beam pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    /// Only the best candidate value.
    #[default]
    BestPerPair,
    /// Every top-`width` candidate value.
    AllCandidates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRequest {
    pub query: Vec<usize>,
    pub order: OrderMode,
    /// Hypotheses kept after each round.
    pub beam: usize,
    /// Candidate values re-scored per expansion; defaults to `beam`.
    pub candidates: Option<usize>,
    /// Pooling for dynamic order. Static orders always pool every candidate.
    pub pool: PoolMode,
    /// Include metadata-token log-probabilities in ranking scores.
    pub score_metadata: bool,
}

impl DecodeRequest {
    pub fn dynamic(query: Vec<usize>, beam: usize) -> Self {
        DecodeRequest {
            query,
            order: OrderMode::Dynamic,
            beam,
            candidates: None,
            pool: PoolMode::BestPerPair,
            score_metadata: true,
        }
    }

    pub fn fixed(order: Vec<usize>, beam: usize) -> Self {
        DecodeRequest {
            query: order.clone(),
            order: OrderMode::Static(order),
            ..Self::dynamic(Vec::new(), beam)
        }
    }

    fn width(&self) -> usize {
        self.candidates.unwrap_or(self.beam)
    }
}

/// One decided metric inside a hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub metric: usize,
    /// Chosen local value id.
    pub value: u32,
    /// Step 1 argmax and its probability.
    pub provisional: u32,
    pub confidence: f64,
    /// Probability of the chosen value under the same distribution.
    pub chosen_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub body: Vec<Token>,
    /// Log-probability of `body` under the model.
    pub loglik: f64,
    /// Ranking score; equals `loglik` unless metadata terms are excluded.
    pub score: f64,
    pub decided: Vec<Decision>,
    pub remaining: BTreeSet<usize>,
}

impl Hypothesis {
    pub fn empty(query: impl IntoIterator<Item = usize>) -> Self {
        Hypothesis {
            body: Vec::new(),
            loglik: 0.0,
            score: 0.0,
            decided: Vec::new(),
            remaining: query.into_iter().collect(),
        }
    }

    pub fn order(&self) -> Vec<usize> {
        self.decided.iter().map(|d| d.metric).collect()
    }
}

/// Best-first: higher score, then lexicographically smaller token sequence
/// (metric index first, then value id).
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.body.cmp(&b.body))
}

/// Outcome of the two steps for one (hypothesis, metric) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub provisional: u32,
    pub confidence: f64,
    /// Candidate extensions, best first.
    pub candidates: Vec<Hypothesis>,
}

impl Expansion {
    pub fn best(&self) -> &Hypothesis {
        &self.candidates[0]
    }

    pub fn into_best(mut self) -> Hypothesis {
        self.candidates.swap_remove(0)
    }
}

pub fn expand_metric<M: SequenceModel + ?Sized>(
    model: &M,
    features: &[f64],
    hyp: &Hypothesis,
    metric: usize,
    width: usize,
    score_metadata: bool,
) -> Result<Expansion, DecodeError> {
    if !hyp.remaining.contains(&metric) {
        return Err(if hyp.decided.iter().any(|d| d.metric == metric) {
            DecodeError::MetricAlreadyDecided(metric)
        } else {
            DecodeError::InvalidRequest(format!("metric {metric} is not queried"))
        });
    }
    if width == 0 {
        return Err(DecodeError::InvalidRequest("candidate width must be ≥ 1".into()));
    }
    let vocab = model.vocab();
    let meta = vocab.metadata(metric);
    let meta_lp = model.next_dist(&hyp.body, features)?.prob(meta).ln();

    // Step 1: provisional value.
    let mut pre = hyp.body.clone();
    pre.push(meta);
    let dist = model.next_dist(&pre, features)?;
    let (prov_tok, confidence) = dist
        .argmax()
        .ok_or_else(|| DecodeError::InvalidRequest("empty value distribution".into()))?;
    let local = |t: Token| match vocab.kind(t) {
        Some(TokenKind::Value { local, .. }) => local,
        _ => unreachable!("value distribution over a value block"),
    };
    let provisional = local(prov_tok);

    // Step 2: rescore the top candidates by full prefix log-likelihood.
    let mut candidates: Vec<Hypothesis> = dist
        .top(width)
        .into_iter()
        .map(|(tok, p)| {
            let mut body = pre.clone();
            body.push(tok);
            let loglik = hyp.loglik + meta_lp + p.ln();
            let score = hyp.score + if score_metadata { meta_lp } else { 0.0 } + p.ln();
            let mut decided = hyp.decided.clone();
            decided.push(Decision {
                metric,
                value: local(tok),
                provisional,
                confidence,
                chosen_prob: p,
            });
            let mut remaining = hyp.remaining.clone();
            remaining.remove(&metric);
            Hypothesis {
                body,
                loglik,
                score,
                decided,
                remaining,
            }
        })
        .collect();
    candidates.sort_by(rank);
    Ok(Expansion {
        provisional,
        confidence,
        candidates,
    })
}

fn check_query(query: &[usize], k: usize) -> Result<(), DecodeError> {
    if query.is_empty() {
        return Err(DecodeError::EmptyQuery);
    }
    let mut seen = HashSet::new();
    for &m in query {
        if m >= k {
            return Err(DecodeError::InvalidRequest(format!("unknown metric {m}")));
        }
        if !seen.insert(m) {
            return Err(DecodeError::InvalidRequest(format!("metric {m} queried twice")));
        }
    }
    Ok(())
}

/// Static list restricted to the query; errors if it misses a queried metric.
fn static_sequence(list: &[usize], query: &[usize]) -> Result<Vec<usize>, DecodeError> {
    let seq: Vec<usize> = list.iter().copied().filter(|m| query.contains(m)).collect();
    if let Some(&m) = query.iter().find(|m| !seq.contains(m)) {
        return Err(DecodeError::StaticOrderIncomplete(m));
    }
    let unique: HashSet<_> = seq.iter().collect();
    if unique.len() != seq.len() {
        return Err(DecodeError::InvalidRequest("static order repeats a metric".into()));
    }
    Ok(seq)
}

/// Runs the search and returns every surviving hypothesis, best first.
pub fn decode_beam<M: SequenceModel + ?Sized>(
    model: &M,
    features: &[f64],
    req: &DecodeRequest,
) -> Result<Vec<Hypothesis>, DecodeError> {
    check_query(&req.query, model.vocab().num_metrics())?;
    if req.beam == 0 {
        return Err(DecodeError::InvalidRequest("beam must be ≥ 1".into()));
    }
    let width = req.width();
    let mut beams = vec![Hypothesis::empty(req.query.iter().copied())];

    match &req.order {
        OrderMode::Dynamic => {
            for _ in 0..req.query.len() {
                let mut pool = Vec::new();
                for hyp in &beams {
                    for &m in &hyp.remaining {
                        let exp = expand_metric(model, features, hyp, m, width, req.score_metadata)?;
                        match req.pool {
                            PoolMode::BestPerPair => pool.push(exp.into_best()),
                            PoolMode::AllCandidates => pool.extend(exp.candidates),
                        }
                    }
                }
                pool.sort_by(rank);
                pool.truncate(req.beam);
                beams = pool;
            }
        }
        OrderMode::Static(list) => {
            for m in static_sequence(list, &req.query)? {
                let mut pool = Vec::new();
                for hyp in &beams {
                    let exp = expand_metric(model, features, hyp, m, width, req.score_metadata)?;
                    pool.extend(exp.candidates);
                }
                pool.sort_by(rank);
                pool.truncate(req.beam);
                beams = pool;
            }
        }
    }
    Ok(beams)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricPrediction {
    pub metric: usize,
    pub value: u32,
    pub confidence: f64,
    pub chosen_prob: f64,
    /// 0-based visit position.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// Sorted by metric index.
    pub predictions: Vec<MetricPrediction>,
    pub order: Vec<usize>,
    pub loglik: f64,
    pub score: f64,
    pub body: Vec<Token>,
}

impl PredictionSet {
    fn from_hypothesis(h: &Hypothesis) -> Self {
        let mut predictions: Vec<MetricPrediction> = h
            .decided
            .iter()
            .enumerate()
            .map(|(pos, d)| MetricPrediction {
                metric: d.metric,
                value: d.value,
                confidence: d.confidence,
                chosen_prob: d.chosen_prob,
                position: pos,
            })
            .collect();
        predictions.sort_by_key(|p| p.metric);
        PredictionSet {
            predictions,
            order: h.order(),
            loglik: h.loglik,
            score: h.score,
            body: h.body.clone(),
        }
    }

    pub fn get(&self, metric: usize) -> Option<&MetricPrediction> {
        self.predictions.iter().find(|p| p.metric == metric)
    }

    pub fn token_labels(&self) -> TokenLabels {
        self.predictions.iter().map(|p| (p.metric, p.value)).collect()
    }

    /// Decoded metric values (bin centroids or labels), by metric index.
    pub fn values(&self, tokenizer: &Tokenizer) -> Result<BTreeMap<usize, MetricValue>, VocabError> {
        self.predictions
            .iter()
            .map(|p| Ok((p.metric, tokenizer.decode(p.metric, p.value)?)))
            .collect()
    }
}

pub fn decode<M: SequenceModel + ?Sized>(
    model: &M,
    features: &[f64],
    req: &DecodeRequest,
) -> Result<PredictionSet, DecodeError> {
    let beams = decode_beam(model, features, req)?;
    Ok(PredictionSet::from_hypothesis(&beams[0]))
}

/// Decodes with ground-truth injection: each metric's prediction is read
/// from the model, then the true value token is appended instead.
///
/// A static order is followed as given; a dynamic order picks, at every
/// step, the metric whose best one-step extension scores highest.
pub fn decode_teacher_forced<M: SequenceModel + ?Sized>(
    model: &M,
    features: &[f64],
    truth: &TokenLabels,
    query: &[usize],
    order: &OrderMode,
) -> Result<PredictionSet, DecodeError> {
    check_query(query, model.vocab().num_metrics())?;
    if let Some(&m) = query.iter().find(|m| !truth.contains_key(m)) {
        return Err(DecodeError::MissingGroundTruth(m));
    }
    let vocab = model.vocab();
    let fixed = match order {
        OrderMode::Static(list) => Some(static_sequence(list, query)?),
        OrderMode::Dynamic => None,
    };
    let mut hyp = Hypothesis::empty(query.iter().copied());
    for step in 0..query.len() {
        let exp = match &fixed {
            Some(seq) => expand_metric(model, features, &hyp, seq[step], 1, true)?,
            None => {
                let mut best: Option<Expansion> = None;
                for &m in &hyp.remaining {
                    let e = expand_metric(model, features, &hyp, m, 1, true)?;
                    if best
                        .as_ref()
                        .is_none_or(|b| rank(e.best(), b.best()) == Ordering::Less)
                    {
                        best = Some(e);
                    }
                }
                best.expect("remaining metrics are non-empty")
            }
        };
        let predicted = exp.into_best();
        let d = predicted.decided.last().expect("expansion decides a metric").clone();
        let true_tok = vocab.value(d.metric, truth[&d.metric]);

        let meta = vocab.metadata(d.metric);
        let meta_lp = model.next_dist(&hyp.body, features)?.prob(meta).ln();
        let mut pre = hyp.body.clone();
        pre.push(meta);
        let true_lp = model.next_dist(&pre, features)?.prob(true_tok).ln();

        hyp.body = pre;
        hyp.body.push(true_tok);
        hyp.loglik += meta_lp + true_lp;
        hyp.score = hyp.loglik;
        hyp.remaining.remove(&d.metric);
        hyp.decided.push(d);
    }
    Ok(PredictionSet::from_hypothesis(&hyp))
}

/// Average visit position per metric over a set of decodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderTrace {
    /// (metric, mean 0-based position, number of decodes that visited it),
    /// ascending by mean position then metric index.
    pub ranking: Vec<(usize, f64, usize)>,
}

impl OrderTrace {
    pub fn position(&self, metric: usize) -> Option<f64> {
        self.ranking
            .iter()
            .find(|r| r.0 == metric)
            .map(|r| r.1)
    }
}

pub fn order_trace(decodes: &[PredictionSet]) -> Result<OrderTrace, DecodeError> {
    order_trace_from_orders(decodes.iter().map(|d| d.order.as_slice()))
}

/// [`order_trace`] over bare visit orders.
pub fn order_trace_from_orders<'a>(
    orders: impl IntoIterator<Item = &'a [usize]>,
) -> Result<OrderTrace, DecodeError> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut any = false;
    for order in orders {
        any = true;
        for (pos, &m) in order.iter().enumerate() {
            let e = sums.entry(m).or_insert((0.0, 0));
            e.0 += pos as f64;
            e.1 += 1;
        }
    }
    if !any {
        return Err(DecodeError::InvalidRequest("no decodes to trace".into()));
    }
    let mut ranking: Vec<(usize, f64, usize)> = sums
        .into_iter()
        .map(|(m, (s, n))| (m, s / n as f64, n))
        .collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(OrderTrace { ranking })
}

/// Structural check used by tests and the CLI: the hypothesis body is a
/// valid chain prefix whose visited metrics match its decisions.
pub fn hypothesis_is_consistent<M: SequenceModel + ?Sized>(model: &M, h: &Hypothesis) -> bool {
    match ChainState::scan(model.vocab(), &h.body) {
        Ok(state) => state.pending.is_none() && state.order == h.order(),
        Err(_) => false,
    }
}
