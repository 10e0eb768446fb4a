//! Shared fixtures and brute-force oracles for integration tests.
#![allow(dead_code)]

use metric_chain::chain::ChainState;
use metric_chain::model::{prefix_loglik, EndPolicy, FnModel};
use metric_chain::registry::{MetricKind, Registry};
use metric_chain::tokenizer::Codec;
use metric_chain::vocab::{Token, TokenVocabulary, Tokenizer, END};
use metric_chain::SequenceModel;

/// Categorical metrics `m0, m1, …` with labels `v0, v1, …`.
pub fn toy_tokenizer(blocks: &[usize]) -> Tokenizer {
    let mut reg = Registry::new();
    let mut codecs = Vec::new();
    for (i, &n) in blocks.iter().enumerate() {
        let labels: Vec<String> = (0..n).map(|j| format!("v{j}")).collect();
        let name = format!("m{i}");
        reg = reg
            .with(name.clone(), MetricKind::categorical(labels.clone()))
            .unwrap();
        codecs.push(Codec::categorical(name, labels));
    }
    Tokenizer::new(reg, codecs).unwrap()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A model whose weights are pseudo-random functions of the whole prefix.
pub fn random_model(
    vocab: TokenVocabulary,
    seed: u64,
    end: EndPolicy,
) -> FnModel<impl Fn(&ChainState, Token) -> f64> {
    FnModel::new(vocab, end, move |state: &ChainState, tok: Token| {
        let mut h = splitmix(seed);
        for &(m, v) in &state.pairs {
            h = splitmix(h ^ ((m as u64) << 32 | v as u64));
        }
        if let Some(p) = state.pending {
            h = splitmix(h ^ (0xABCD_0000 + p as u64));
        }
        h = splitmix(h ^ tok.0 as u64);
        // Cubing spreads the weights so distributions are far from flat.
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        0.01 + u * u * u
    })
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Every ordered, non-empty subset of `metrics`.
pub fn ordered_subsets(metrics: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 1u32..(1 << metrics.len()) {
        let chosen: Vec<usize> = metrics
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &m)| m)
            .collect();
        out.extend(permutations(&chosen));
    }
    out
}

pub fn all_orders(metrics: &[usize]) -> Vec<Vec<usize>> {
    permutations(metrics)
}

/// Bodies for every value assignment along `order`.
pub fn value_assignments(vocab: &TokenVocabulary, order: &[usize]) -> Vec<Vec<Token>> {
    let mut bodies = vec![Vec::new()];
    for &m in order {
        let mut next = Vec::new();
        for b in &bodies {
            for v in vocab.value_block(m) {
                let mut nb: Vec<Token> = b.clone();
                nb.push(vocab.metadata(m));
                nb.push(Token(v));
                next.push(nb);
            }
        }
        bodies = next;
    }
    bodies
}

/// Sum of exp(loglik) over every complete chain the model can emit.
pub fn total_chain_mass<M: SequenceModel>(model: &M, features: &[f64]) -> f64 {
    let vocab = model.vocab();
    let metrics: Vec<usize> = (0..vocab.num_metrics()).collect();
    let orders = match model.end_policy() {
        EndPolicy::Scored => ordered_subsets(&metrics),
        EndPolicy::Implicit => permutations(&metrics),
    };
    let mut total = 0.0;
    for order in orders {
        for body in value_assignments(vocab, &order) {
            let mut ll = prefix_loglik(model, &body, features).unwrap();
            if model.end_policy() == EndPolicy::Scored {
                ll += model.next_dist(&body, features).unwrap().prob(END).ln();
            }
            total += ll.exp();
        }
    }
    total
}

/// Greedy value path along a fixed order: each value is the most probable
/// one (lowest id on ties) given the prefix built so far.
pub fn greedy_path<M: SequenceModel>(model: &M, features: &[f64], order: &[usize]) -> Vec<Token> {
    let vocab = model.vocab();
    let mut body = Vec::new();
    for &m in order {
        body.push(vocab.metadata(m));
        let d = model.next_dist(&body, features).unwrap();
        let mut best = (Token(u32::MAX), f64::NEG_INFINITY);
        for v in vocab.value_block(m) {
            let p = d.prob(Token(v));
            if p > best.1 {
                best = (Token(v), p);
            }
        }
        body.push(best.0);
    }
    body
}

/// Best completion over every order where each value is the per-step
/// argmax. Ties go to the lexicographically smaller body.
pub fn best_reachable<M: SequenceModel>(
    model: &M,
    features: &[f64],
    query: &[usize],
) -> (f64, Vec<Token>) {
    let mut best: Option<(f64, Vec<Token>)> = None;
    for order in permutations(query) {
        let body = greedy_path(model, features, &order);
        let ll = prefix_loglik(model, &body, features).unwrap();
        let better = match &best {
            None => true,
            Some((bl, bb)) => ll > *bl || (ll == *bl && body < *bb),
        };
        if better {
            best = Some((ll, body));
        }
    }
    best.unwrap()
}

/// Repeatedly appends the (metric, value) pair whose one-step extension
/// has the highest log-likelihood.
pub fn one_step_greedy<M: SequenceModel>(model: &M, features: &[f64], query: &[usize]) -> Vec<Token> {
    let vocab = model.vocab();
    let mut body: Vec<Token> = Vec::new();
    let mut remaining = query.to_vec();
    while !remaining.is_empty() {
        let mut best: Option<(f64, Vec<Token>, usize)> = None;
        for (i, &m) in remaining.iter().enumerate() {
            for v in vocab.value_block(m) {
                let mut cand = body.clone();
                cand.push(vocab.metadata(m));
                cand.push(Token(v));
                let ll = prefix_loglik(model, &cand, features).unwrap();
                let better = match &best {
                    None => true,
                    Some((bl, bb, _)) => ll > *bl || (ll == *bl && cand < *bb),
                };
                if better {
                    best = Some((ll, cand, i));
                }
            }
        }
        let (_, b, i) = best.unwrap();
        body = b;
        remaining.remove(i);
    }
    body
}

/// Two binary metrics. A prefers value 0 (0.55 vs 0.45), but B is nearly
/// certain after A = 1 and uniform-ish after A = 0.
pub fn lookahead_model() -> FnModel<impl Fn(&ChainState, Token) -> f64> {
    let tk = toy_tokenizer(&[2, 4]);
    let v = tk.vocab().clone();
    let b0 = v.value(1, 0);
    let a0 = v.value(0, 0);
    let a_block = v.value_block(0);
    let b_block = v.value_block(1);
    let meta_a = v.metadata(0);
    FnModel::new(v, EndPolicy::Implicit, move |state: &ChainState, t: Token| {
        match state.pending {
            Some(0) if a_block.contains(&t.0) => {
                if t == a0 {
                    0.55
                } else {
                    0.45
                }
            }
            Some(1) if b_block.contains(&t.0) => match state.last_pair() {
                Some((0, 1)) => {
                    if t == b0 {
                        0.97
                    } else {
                        0.01
                    }
                }
                _ => 0.25,
            },
            // Always start with A.
            None if state.order.is_empty() => {
                if t == meta_a {
                    1.0
                } else {
                    1e-9
                }
            }
            _ => 1.0,
        }
    })
}

/// Tau-b from explicit pair enumeration.
pub fn naive_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0u64, 0u64);
    let mut pairs = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tie_x += 1;
            }
            if dy == 0.0 {
                tie_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let (ux, uy) = (pairs - tie_x, pairs - tie_y);
    if ux == 0 || uy == 0 {
        return None;
    }
    Some(((conc - disc) as f64 / (ux as f64 * uy as f64).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks by counting smaller and equal values.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count();
            let eq = x.iter().filter(|&&w| w == v).count();
            less as f64 + (eq as f64 + 1.0) / 2.0
        })
        .collect()
}

/// Spearman from naive ranks, Pearson written out independently.
pub fn naive_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (naive_ranks(x), naive_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
