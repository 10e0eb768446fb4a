use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use metric_chain::chain::OrderPreset;
use metric_chain::dataset::{coverage, read_dataset, write_dataset};
use metric_chain::decoder::{order_trace_from_orders, PoolMode};
use metric_chain::eval::{aggregate, score_metric, PairedSeries, ScoreReport};
use metric_chain::model::ModelError;
use metric_chain::registry::{MetricKind, MetricSpec};
use metric_chain::synthetic::{generate, split};
use metric_chain::tokenizer::{reconstruction_report, CodecError};
use metric_chain::{
    decode, decode_teacher_forced, Codec, DecodeRequest, MetricValue, NumericCodec, OrderMode,
    Registry, Strategy, Tokenizer, TrainedModel, UtteranceRecord,
};
use serde::{Deserialize, Serialize};

use crate::config::{Loaded, Pool, RunConfig};
use crate::manifest::Recorder;

/// Inputs that exist but do not belong together (exit code 3).
#[derive(Debug)]
pub struct ArtifactMismatch(pub String);

impl fmt::Display for ArtifactMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "artifact mismatch: {}", self.0)
    }
}

impl std::error::Error for ArtifactMismatch {}

const SPLIT_SALT: u64 = 0x5eed_5b17;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_registry(cfg: &RunConfig, rec: &mut Recorder) -> Result<Registry> {
    let path = &cfg.paths.registry;
    let reg = Registry::from_json(&read_text(path)?).with_context(|| format!("{}", path.display()))?;
    rec.input(path);
    Ok(reg)
}

fn read_split(
    cfg: &RunConfig,
    registry: &Registry,
    split: &str,
    rec: &mut Recorder,
) -> Result<Vec<UtteranceRecord>> {
    let path = cfg.split_path(split);
    let records = read_dataset(&read_text(&path)?, registry).with_context(|| format!("{}", path.display()))?;
    rec.input(&path);
    Ok(records)
}

fn codec_path(dir: &Path, spec: &MetricSpec) -> PathBuf {
    let safe: String = spec
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    dir.join(format!("{:03}-{safe}.json", spec.index))
}

fn load_tokenizer(cfg: &RunConfig, registry: Registry, rec: &mut Recorder) -> Result<Tokenizer> {
    let mut codecs = Vec::new();
    for spec in registry.iter() {
        let path = codec_path(&cfg.paths.codec_dir, spec);
        let codec = Codec::from_json_for(&read_text(&path)?, spec).map_err(|e| match e {
            CodecError::MetricMismatch { .. } | CodecError::KindMismatch => {
                anyhow!(ArtifactMismatch(format!("{}: {e}", path.display())))
            }
            other => anyhow!("{}: {other}", path.display()),
        })?;
        rec.input(&path);
        codecs.push(codec);
    }
    Tokenizer::new(registry, codecs).map_err(|e| anyhow!(ArtifactMismatch(e.to_string())))
}

fn load_model(cfg: &RunConfig, tokenizer: &Tokenizer, rec: &mut Recorder) -> Result<TrainedModel> {
    let path = &cfg.paths.model;
    let model = TrainedModel::from_json(&read_text(path)?, tokenizer).map_err(|e| match e {
        ModelError::VersionMismatch(m) => anyhow!(ArtifactMismatch(format!("{}: {m}", path.display()))),
        other => anyhow!("{}: {other}", path.display()),
    })?;
    rec.input(path);
    Ok(model)
}

fn resolve_query(cfg: &RunConfig, registry: &Registry) -> Result<Vec<usize>> {
    if cfg.decode.query.is_empty() {
        return Ok((0..registry.len()).collect());
    }
    cfg.decode
        .query
        .iter()
        .map(|name| Ok(registry.by_name(name.trim())?.index))
        .collect()
}

fn resolve_order(cfg: &RunConfig, registry: &Registry, rec: &mut Recorder) -> Result<OrderMode> {
    let Some(name) = &cfg.decode.order_preset else {
        return Ok(OrderMode::Dynamic);
    };
    let preset = match name.strip_prefix("file:") {
        Some(p) => {
            let path = PathBuf::from(p);
            let preset = OrderPreset::parse(name, &read_text(&path)?)
                .with_context(|| format!("{}", path.display()))?;
            rec.input(path);
            preset
        }
        None => OrderPreset::builtin(name)
            .ok_or_else(|| anyhow!("unknown order preset `{name}` (order-mr, order-c2f or file:PATH)"))?,
    };
    Ok(OrderMode::Static(preset.resolve(registry)))
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Left-aligned first column, right-aligned others.
fn table(head: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = head.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<String>| {
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(head.iter().map(|h| h.to_string()).collect());
    for r in rows {
        line(r.clone());
    }
    out
}

pub fn simulate(loaded: &Loaded) -> Result<()> {
    let cfg = &loaded.config;
    let mut rec = Recorder::new(loaded, "simulate");
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [simulate] section"))?;
    let registry = load_registry(cfg, &mut rec)?;
    let data = generate(&sim.generator(cfg.seed), &registry, sim.n)?;
    let parts = split(&data, sim.ratios, cfg.seed ^ SPLIT_SALT)?;
    let named = [("train", &parts.train), ("dev", &parts.dev), ("test", &parts.test)];
    for (name, part) in named {
        let path = cfg.split_path(name);
        write_text(&path, &write_dataset(part, &registry))?;
        rec.output(path);
    }

    let covs: Vec<_> = named.iter().map(|(_, p)| coverage(p, &registry)).collect();
    let all = coverage(&data, &registry);
    let rows: Vec<Vec<String>> = registry
        .iter()
        .map(|spec| {
            let i = spec.index;
            let mut row = vec![
                spec.name.clone(),
                match &spec.kind {
                    MetricKind::Numerical { direction, .. } => direction.to_string(),
                    MetricKind::Categorical { .. } => "categorical".into(),
                },
            ];
            row.extend(covs.iter().map(|c| pct(c[i].2)));
            row.push(all[i].1.to_string());
            row.push(pct(all[i].2));
            row
        })
        .collect();
    let text = format!(
        "records: train {}, dev {}, test {}\n\n{}",
        parts.train.len(),
        parts.dev.len(),
        parts.test.len(),
        table(&["metric", "direction", "train", "dev", "test", "count", "coverage"], &rows)
    );
    print!("{text}");
    let path = cfg.paths.output_dir.join("coverage.txt");
    write_text(&path, &text)?;
    rec.output(path);
    rec.finish()?;
    Ok(())
}

fn numbers(records: &[UtteranceRecord], metric: usize) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| r.labels.get(metric).and_then(MetricValue::as_number))
        .collect()
}

pub fn fit_codecs(loaded: &Loaded) -> Result<()> {
    let cfg = &loaded.config;
    let mut rec = Recorder::new(loaded, "fit-codecs");
    let registry = load_registry(cfg, &mut rec)?;
    let train = read_split(cfg, &registry, "train", &mut rec)?;
    let (strategy, bins) = (cfg.tokenizer.strategy, cfg.tokenizer.bins);
    let mut codecs = Vec::new();
    let mut rows = Vec::new();
    for spec in registry.iter() {
        let samples = numbers(&train, spec.index);
        let codec = match Codec::fit_for(spec, strategy, bins, &samples) {
            Ok(c) => c,
            Err(e) => match &spec.kind {
                MetricKind::Numerical { lo, hi, .. } if lo.is_finite() && hi.is_finite() => {
                    eprintln!("warning: {}: {e}; using linear bins over [{lo}, {hi}]", spec.name);
                    Codec::numeric(&spec.name, NumericCodec::fit_linear(*lo, *hi, bins)?)
                }
                _ => bail!("{}: cannot fit codec from {} training values: {e}", spec.name, samples.len()),
            },
        };
        let path = codec_path(&cfg.paths.codec_dir, spec);
        write_text(&path, &(codec.to_json() + "\n"))?;
        rec.output(&path);
        let (kind, strat) = match codec.as_numeric() {
            Some(n) => ("numerical", format!("{:?}", n.strategy).to_lowercase()),
            None => ("categorical", "direct".into()),
        };
        rows.push(vec![
            spec.name.clone(),
            kind.into(),
            strat,
            codec.block_size().to_string(),
            samples.len().to_string(),
        ]);
        codecs.push(codec);
    }
    let tokenizer = Tokenizer::new(registry, codecs)?;
    print!("{}", table(&["metric", "kind", "strategy", "tokens", "samples"], &rows));
    println!("vocabulary: {} tokens, hash {}", tokenizer.vocab().len(), tokenizer.hash());
    rec.finish()?;
    Ok(())
}

pub fn train(loaded: &Loaded) -> Result<()> {
    let cfg = &loaded.config;
    let mut rec = Recorder::new(loaded, "train");
    let registry = load_registry(cfg, &mut rec)?;
    let train = read_split(cfg, &registry, "train", &mut rec)?;
    let tokenizer = load_tokenizer(cfg, registry, &mut rec)?;
    let model = TrainedModel::train(&tokenizer, &train, &cfg.model)?;
    let path = &cfg.paths.model;
    write_text(path, &model.to_json())?;
    rec.output(path);
    println!(
        "trained {:?} model on {} records ({} feature dims, {} buckets) -> {}",
        model.kind(),
        train.len(),
        model.feature_dim(),
        model.quantizer().num_buckets(),
        path.display()
    );
    rec.finish()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedMetric {
    pub name: String,
    pub value: MetricValue,
    pub token: u32,
    pub confidence: f64,
    pub chosen_prob: f64,
    pub position: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub id: String,
    pub order: Vec<String>,
    pub loglik: f64,
    pub metrics: Vec<PredictedMetric>,
}

fn predictions_path(cfg: &RunConfig, teacher_forced: bool) -> PathBuf {
    let name = if teacher_forced { "predictions-tf.jsonl" } else { "predictions.jsonl" };
    cfg.paths.output_dir.join(name)
}

pub fn run_decode(loaded: &Loaded) -> Result<()> {
    let cfg = &loaded.config;
    let tf = cfg.decode.teacher_forced;
    let mut rec = Recorder::new(loaded, if tf { "decode-tf" } else { "decode" });
    let registry = load_registry(cfg, &mut rec)?;
    let records = read_split(cfg, &registry, &cfg.decode.split, &mut rec)?;
    let tokenizer = load_tokenizer(cfg, registry, &mut rec)?;
    let model = load_model(cfg, &tokenizer, &mut rec)?;
    let reg = tokenizer.registry();
    let query = resolve_query(cfg, reg)?;
    let order = resolve_order(cfg, reg, &mut rec)?;
    let request = DecodeRequest {
        query: query.clone(),
        order: order.clone(),
        beam: cfg.decode.beam,
        candidates: cfg.decode.candidates,
        pool: match cfg.decode.pool {
            Pool::Best => PoolMode::BestPerPair,
            Pool::All => PoolMode::AllCandidates,
        },
        score_metadata: cfg.decode.score_metadata,
    };

    let mut out = String::new();
    let mut skipped = 0usize;
    for r in &records {
        let result = if tf {
            let truth = r.labels.tokenize(&tokenizer)?;
            let q: Vec<usize> = query.iter().copied().filter(|m| truth.contains_key(m)).collect();
            if q.is_empty() {
                skipped += 1;
                continue;
            }
            decode_teacher_forced(&model, &r.features, &truth, &q, &order)
        } else {
            decode(&model, &r.features, &request)
        }
        .with_context(|| format!("decoding record `{}`", r.id))?;
        let values = result.values(&tokenizer)?;
        let line = PredictionLine {
            id: r.id.clone(),
            order: result.order.iter().map(|&m| reg.specs()[m].name.clone()).collect(),
            loglik: result.loglik,
            metrics: result
                .predictions
                .iter()
                .map(|p| PredictedMetric {
                    name: reg.specs()[p.metric].name.clone(),
                    value: values[&p.metric].clone(),
                    token: p.value,
                    confidence: p.confidence,
                    chosen_prob: p.chosen_prob,
                    position: p.position,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    let path = predictions_path(cfg, tf);
    write_text(&path, &out)?;
    rec.output(&path);
    println!(
        "decoded {} records ({} mode, {}, beam {}){} -> {}",
        records.len() - skipped,
        if tf { "teacher-forced" } else { "free" },
        match &order {
            OrderMode::Dynamic => "dynamic order".to_string(),
            OrderMode::Static(_) => format!("static order {}", cfg.decode.order_preset.as_deref().unwrap_or("")),
        },
        cfg.decode.beam,
        if skipped > 0 { format!(", {skipped} without labels skipped") } else { String::new() },
        path.display()
    );
    rec.finish()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}: line {}", path.display(), i + 1))
        })
        .collect()
}

fn report_paths(cfg: &RunConfig, teacher_forced: bool) -> (PathBuf, PathBuf) {
    let stem = if teacher_forced { "report-tf" } else { "report" };
    (
        cfg.paths.output_dir.join(format!("{stem}.json")),
        cfg.paths.output_dir.join(format!("{stem}.txt")),
    )
}

pub fn evaluate(loaded: &Loaded) -> Result<ScoreReport> {
    let cfg = &loaded.config;
    let tf = cfg.decode.teacher_forced;
    let mut rec = Recorder::new(loaded, if tf { "evaluate-tf" } else { "evaluate" });
    let registry = load_registry(cfg, &mut rec)?;
    let truth = read_split(cfg, &registry, &cfg.decode.split, &mut rec)?;
    let tokenizer = load_tokenizer(cfg, registry, &mut rec)?;
    let reg = tokenizer.registry();
    let pred_path = predictions_path(cfg, tf);
    let preds = read_predictions(&pred_path)?;
    rec.input(&pred_path);

    let by_id: BTreeMap<&str, &UtteranceRecord> = truth.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut num: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); reg.len()];
    let mut cat: Vec<(Vec<String>, Vec<String>)> = vec![(Vec::new(), Vec::new()); reg.len()];
    for (line, p) in preds.iter().enumerate() {
        let r = by_id.get(p.id.as_str()).ok_or_else(|| {
            anyhow!("{}: line {}: id `{}` not in the {} split", pred_path.display(), line + 1, p.id, cfg.decode.split)
        })?;
        for m in &p.metrics {
            let spec = reg
                .by_name(&m.name)
                .with_context(|| format!("{}: line {}", pred_path.display(), line + 1))?;
            let Some(t) = r.labels.get(spec.index) else { continue };
            match (t, &m.value) {
                (MetricValue::Number(a), MetricValue::Number(b)) => {
                    num[spec.index].0.push(*a);
                    num[spec.index].1.push(*b);
                }
                (MetricValue::Label(a), MetricValue::Label(b)) => {
                    cat[spec.index].0.push(a.clone());
                    cat[spec.index].1.push(b.clone());
                }
                _ => bail!("{}: line {}: `{}` has the wrong value kind", pred_path.display(), line + 1, m.name),
            }
        }
    }
    let mut reports = Vec::new();
    for spec in reg.iter() {
        let i = spec.index;
        let series = if spec.kind.is_numerical() {
            if num[i].0.is_empty() {
                continue;
            }
            PairedSeries::numerical(num[i].0.clone(), num[i].1.clone())?
        } else {
            if cat[i].0.is_empty() {
                continue;
            }
            PairedSeries::categorical(cat[i].0.clone(), cat[i].1.clone())?
        };
        reports.push(score_metric(&spec.name, &series, tokenizer.codec(i).as_numeric())?);
    }
    let report = aggregate(reports)?;
    let (json, txt) = report_paths(cfg, tf);
    write_text(&json, &(report.to_json() + "\n"))?;
    let table = report.to_table();
    write_text(&txt, &table)?;
    rec.output(&json);
    rec.output(&txt);
    print!("{table}");
    rec.finish()?;
    Ok(report)
}

#[derive(Serialize)]
struct TraceRow {
    rank: usize,
    metric: String,
    avg_position: f64,
    decodes: usize,
}

pub fn order_trace(loaded: &Loaded) -> Result<()> {
    let cfg = &loaded.config;
    let mut rec = Recorder::new(loaded, "order-trace");
    let registry = load_registry(cfg, &mut rec)?;
    let path = predictions_path(cfg, false);
    let preds = read_predictions(&path)?;
    rec.input(&path);
    let mut orders = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let order = p
            .order
            .iter()
            .map(|n| Ok(registry.by_name(n)?.index))
            .collect::<Result<Vec<usize>, metric_chain::registry::RegistryError>>()
            .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        orders.push(order);
    }
    let trace = order_trace_from_orders(orders.iter().map(Vec::as_slice))?;
    let rows: Vec<TraceRow> = trace
        .ranking
        .iter()
        .enumerate()
        .map(|(i, &(m, pos, n))| TraceRow {
            rank: i + 1,
            metric: registry.specs()[m].name.clone(),
            avg_position: pos,
            decodes: n,
        })
        .collect();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                r.metric.clone(),
                format!("{:.3}", r.avg_position),
                r.decodes.to_string(),
            ]
        })
        .collect();
    let k = (rows.len() / 2).clamp(1, 5);
    let names = |it: &mut dyn Iterator<Item = &TraceRow>| {
        it.map(|r| format!("{} ({:.2})", r.metric, r.avg_position))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let text = format!(
        "{}\ntop {k}: {}\nbottom {k}: {}\n",
        table(&["rank", "metric", "avg pos", "decodes"], &cells),
        names(&mut rows.iter().take(k)),
        names(&mut rows.iter().rev().take(k))
    );
    print!("{text}");
    let json = cfg.paths.output_dir.join("order-trace.json");
    let txt = cfg.paths.output_dir.join("order-trace.txt");
    write_text(&json, &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    write_text(&txt, &text)?;
    rec.output(&json);
    rec.output(&txt);
    rec.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct ReconRow {
    metric: String,
    strategy: Strategy,
    bins: usize,
    effective_bins: usize,
    train_rmse: f64,
    train_mae: f64,
    test_rmse: Option<f64>,
    test_mae: Option<f64>,
}

pub fn recon_study(loaded: &Loaded) -> Result<()> {
    let cfg = &loaded.config;
    let mut rec = Recorder::new(loaded, "recon-study");
    let registry = load_registry(cfg, &mut rec)?;
    let train = read_split(cfg, &registry, "train", &mut rec)?;
    let test = read_split(cfg, &registry, "test", &mut rec)?;
    let t = cfg.tokenizer.bins;
    let mut rows = Vec::new();
    for spec in registry.iter().filter(|s| s.kind.is_numerical()) {
        let (fit, held) = (numbers(&train, spec.index), numbers(&test, spec.index));
        for strategy in [Strategy::Linear, Strategy::Percentile] {
            for bins in [t, 2 * t] {
                let codec = match Codec::fit_for(spec, strategy, bins, &fit) {
                    Ok(c) => c,
                    Err(e) => {
                        eprintln!("warning: {}: skipped ({e})", spec.name);
                        continue;
                    }
                };
                let c = codec.as_numeric().expect("numerical codec");
                let a = reconstruction_report(c, &fit)?;
                let b = reconstruction_report(c, &held).ok();
                rows.push(ReconRow {
                    metric: spec.name.clone(),
                    strategy,
                    bins,
                    effective_bins: c.num_bins(),
                    train_rmse: a.rmse,
                    train_mae: a.mae,
                    test_rmse: b.map(|r| r.rmse),
                    test_mae: b.map(|r| r.mae),
                });
            }
        }
    }
    let f = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.5}"));
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.metric.clone(),
                format!("{:?}", r.strategy).to_lowercase(),
                r.bins.to_string(),
                r.effective_bins.to_string(),
                f(Some(r.train_rmse)),
                f(Some(r.train_mae)),
                f(r.test_rmse),
                f(r.test_mae),
            ]
        })
        .collect();
    let text = table(
        &["metric", "strategy", "bins", "effective", "train RMSE", "train MAE", "test RMSE", "test MAE"],
        &cells,
    );
    print!("{text}");
    let json = cfg.paths.output_dir.join("recon.json");
    let txt = cfg.paths.output_dir.join("recon.txt");
    write_text(&json, &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    write_text(&txt, &text)?;
    rec.output(&json);
    rec.output(&txt);
    rec.finish()?;
    Ok(())
}

/// The whole pipeline: data, codecs, model, free and teacher-forced
/// decoding with their reports, order trace and reconstruction study.
pub fn run_all(loaded: &Loaded) -> Result<()> {
    simulate(loaded)?;
    fit_codecs(loaded)?;
    train(loaded)?;
    let mut free = loaded.clone();
    free.config.decode.teacher_forced = false;
    let mut forced = loaded.clone();
    forced.config.decode.teacher_forced = true;
    run_decode(&free)?;
    let a = evaluate(&free)?;
    run_decode(&forced)?;
    let b = evaluate(&forced)?;
    order_trace(&free)?;
    recon_study(loaded)?;
    if let (Some(x), Some(y)) = (&a.numerical, &b.numerical) {
        println!("macro MSE: free {:.5}, teacher-forced {:.5}", x.mse, y.mse);
    }
    Ok(())
}
