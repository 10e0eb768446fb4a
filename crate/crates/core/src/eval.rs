//! Regression, rank and classification scores with macro aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::tokenizer::NumericCodec;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("series is empty")]
    EmptySeries,
    #[error("truth has {truth} entries, prediction {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("non-finite value in series")]
    NonFinite,
    #[error("score needs a {expected} series")]
    KindMismatch { expected: &'static str },
    #[error("rank scores need at least 2 points")]
    TooShort,
    #[error("a side of the series is constant")]
    ZeroVariance,
    #[error("no metric to aggregate")]
    NothingToAggregate,
}

/// Aligned (truth, prediction) values for one metric.
#[derive(Debug, Clone, PartialEq)]
pub enum PairedSeries {
    Numerical { truth: Vec<f64>, pred: Vec<f64> },
    Categorical { truth: Vec<String>, pred: Vec<String> },
}

fn check_lengths(truth: usize, pred: usize) -> Result<(), EvalError> {
    if truth != pred {
        return Err(EvalError::LengthMismatch { truth, pred });
    }
    if truth == 0 {
        return Err(EvalError::EmptySeries);
    }
    Ok(())
}

impl PairedSeries {
    pub fn numerical(truth: Vec<f64>, pred: Vec<f64>) -> Result<Self, EvalError> {
        check_lengths(truth.len(), pred.len())?;
        if truth.iter().chain(&pred).any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        Ok(PairedSeries::Numerical { truth, pred })
    }

    pub fn categorical(truth: Vec<String>, pred: Vec<String>) -> Result<Self, EvalError> {
        check_lengths(truth.len(), pred.len())?;
        Ok(PairedSeries::Categorical { truth, pred })
    }

    pub fn len(&self) -> usize {
        match self {
            PairedSeries::Numerical { truth, .. } => truth.len(),
            PairedSeries::Categorical { truth, .. } => truth.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn as_numerical(&self) -> Result<(&[f64], &[f64]), EvalError> {
        match self {
            PairedSeries::Numerical { truth, pred } => Ok((truth, pred)),
            _ => Err(EvalError::KindMismatch { expected: "numerical" }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionScores {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub bmae: f64,
}

/// MSE, RMSE, MAE and balanced MAE. BMAE averages the per-class MAE over
/// the truth classes present: codec bins when `bins` is given, otherwise
/// distinct truth values.
pub fn regression_scores(
    series: &PairedSeries,
    bins: Option<&NumericCodec>,
) -> Result<RegressionScores, EvalError> {
    let (truth, pred) = series.as_numerical()?;
    let n = truth.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    // class key -> (abs error sum, count); f64 keys go through their bits.
    let mut classes: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        let d = t - p;
        se += d * d;
        ae += d.abs();
        let key = match bins {
            Some(codec) => codec.encode(t).map_err(|_| EvalError::NonFinite)? as u64,
            None => (t + 0.0).to_bits(),
        };
        let e = classes.entry(key).or_insert((0.0, 0));
        e.0 += d.abs();
        e.1 += 1;
    }
    let mse = se / n;
    let bmae = classes.values().map(|(s, c)| s / *c as f64).sum::<f64>() / classes.len() as f64;
    Ok(RegressionScores {
        mse,
        rmse: mse.sqrt(),
        mae: ae / n,
        bmae,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankScores {
    pub lcc: f64,
    pub srcc: f64,
    pub ktau: f64,
}

/// Pearson correlation, or `None` if either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = start as f64 + ((end - start) as f64 + 1.0) / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Integer ingredients of tau-b: concordant minus discordant pairs, and
/// the pair counts untied in each variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TauCounts {
    pub numerator: i64,
    pub untied_x: u64,
    pub untied_y: u64,
}

impl TauCounts {
    pub fn tau_b(self) -> Option<f64> {
        if self.untied_x == 0 || self.untied_y == 0 {
            return None;
        }
        let t = self.numerator as f64 / (self.untied_x as f64 * self.untied_y as f64).sqrt();
        Some(t.clamp(-1.0, 1.0))
    }
}

fn tie_pairs(sorted: impl Iterator<Item = bool>) -> u64 {
    // `sorted` yields whether each element equals its predecessor.
    let mut total = 0u64;
    let mut run = 1u64;
    for same in sorted {
        if same {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts discordant inversions while merge-sorting `v` ascending.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall pair counts in O(n log n).
pub fn tau_counts(x: &[f64], y: &[f64]) -> TauCounts {
    let n = x.len() as u64;
    let n0 = n * n.saturating_sub(1) / 2;
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(y).map(|(&a, &b)| (a + 0.0, b + 0.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n1 = tie_pairs(pairs.windows(2).map(|w| w[0].0 == w[1].0));
    let n3 = tie_pairs(pairs.windows(2).map(|w| w[0] == w[1]));
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs(ys.windows(2).map(|w| w[0] == w[1]));
    TauCounts {
        numerator: n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64,
        untied_x: n0 - n1,
        untied_y: n0 - n2,
    }
}

pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    tau_counts(x, y).tau_b()
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn rank_scores(series: &PairedSeries) -> Result<RankScores, EvalError> {
    let (truth, pred) = series.as_numerical()?;
    if truth.len() < 2 {
        return Err(EvalError::TooShort);
    }
    let undefined = || EvalError::ZeroVariance;
    Ok(RankScores {
        lcc: pearson(truth, pred).ok_or_else(undefined)?,
        srcc: spearman(truth, pred).ok_or_else(undefined)?,
        ktau: kendall_tau_b(truth, pred).ok_or_else(undefined)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationScores {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy plus precision, recall and F1 macro-averaged over every class
/// seen in truth or prediction. Undefined per-class ratios count as 0.
pub fn classification_scores(series: &PairedSeries) -> Result<ClassificationScores, EvalError> {
    let (truth, pred) = match series {
        PairedSeries::Categorical { truth, pred } => (truth, pred),
        _ => return Err(EvalError::KindMismatch { expected: "categorical" }),
    };
    let n = truth.len();
    let classes: BTreeSet<&str> = truth.iter().chain(pred).map(String::as_str).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in &classes {
        let tp = truth.iter().zip(pred).filter(|(t, p)| t == c && p == c).count();
        let predicted = pred.iter().filter(|p| p == c).count();
        let actual = truth.iter().filter(|t| t == c).count();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = classes.len() as f64;
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(ClassificationScores {
        acc: ratio(correct, n),
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricScores {
    Numerical {
        regression: RegressionScores,
        /// `None` when undefined (constant side or fewer than two points).
        rank: Option<RankScores>,
    },
    Categorical(ClassificationScores),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub n: usize,
    pub scores: MetricScores,
}

/// Scores one metric. Rank scores that are undefined are recorded as such.
pub fn score_metric(
    name: &str,
    series: &PairedSeries,
    bins: Option<&NumericCodec>,
) -> Result<MetricReport, EvalError> {
    let scores = match series {
        PairedSeries::Numerical { .. } => MetricScores::Numerical {
            regression: regression_scores(series, bins)?,
            rank: match rank_scores(series) {
                Ok(r) => Some(r),
                Err(EvalError::ZeroVariance | EvalError::TooShort) => None,
                Err(e) => return Err(e),
            },
        },
        PairedSeries::Categorical { .. } => MetricScores::Categorical(classification_scores(series)?),
    };
    Ok(MetricReport {
        name: name.to_string(),
        n: series.len(),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericalMacro {
    pub metrics: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub bmae: f64,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub ktau: Option<f64>,
    /// Metrics whose rank scores were undefined and left out.
    pub rank_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalMacro {
    pub metrics: usize,
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub metrics: Vec<MetricReport>,
    pub numerical: Option<NumericalMacro>,
    pub categorical: Option<CategoricalMacro>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(reports: Vec<MetricReport>) -> Result<ScoreReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NothingToAggregate);
    }
    let regs: Vec<(&RegressionScores, Option<&RankScores>)> = reports
        .iter()
        .filter_map(|r| match &r.scores {
            MetricScores::Numerical { regression, rank } => Some((regression, rank.as_ref())),
            _ => None,
        })
        .collect();
    let cats: Vec<&ClassificationScores> = reports
        .iter()
        .filter_map(|r| match &r.scores {
            MetricScores::Categorical(c) => Some(c),
            _ => None,
        })
        .collect();
    let numerical = (!regs.is_empty()).then(|| {
        let ranks: Vec<&RankScores> = regs.iter().filter_map(|r| r.1).collect();
        NumericalMacro {
            metrics: regs.len(),
            mse: mean(regs.iter().map(|r| r.0.mse)).unwrap(),
            rmse: mean(regs.iter().map(|r| r.0.rmse)).unwrap(),
            mae: mean(regs.iter().map(|r| r.0.mae)).unwrap(),
            bmae: mean(regs.iter().map(|r| r.0.bmae)).unwrap(),
            lcc: mean(ranks.iter().map(|r| r.lcc)),
            srcc: mean(ranks.iter().map(|r| r.srcc)),
            ktau: mean(ranks.iter().map(|r| r.ktau)),
            rank_excluded: regs.len() - ranks.len(),
        }
    });
    let categorical = (!cats.is_empty()).then(|| CategoricalMacro {
        metrics: cats.len(),
        acc: mean(cats.iter().map(|c| c.acc)).unwrap(),
        precision: mean(cats.iter().map(|c| c.precision)).unwrap(),
        recall: mean(cats.iter().map(|c| c.recall)).unwrap(),
        f1: mean(cats.iter().map(|c| c.f1)).unwrap(),
    });
    Ok(ScoreReport {
        metrics: reports,
        numerical,
        categorical,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one row per metric plus macro rows.
    pub fn to_table(&self) -> String {
        let head = [
            "metric", "n", "MSE", "LCC", "KTAU", "Acc", "F1", "RMSE", "MAE", "BMAE", "SRCC", "Prec",
            "Rec",
        ];
        let mut rows: Vec<Vec<String>> = Vec::new();
        let numeric_row = |name: String, n: String, r: (f64, f64, f64, f64), k: [Option<f64>; 3]| {
            vec![
                name,
                n,
                cell(Some(r.0)),
                cell(k[0]),
                cell(k[2]),
                "-".into(),
                "-".into(),
                cell(Some(r.1)),
                cell(Some(r.2)),
                cell(Some(r.3)),
                cell(k[1]),
                "-".into(),
                "-".into(),
            ]
        };
        let cat_row = |name: String, n: String, c: [f64; 4]| {
            let mut row = vec![name, n];
            row.extend(["-", "-", "-"].map(String::from));
            row.push(cell(Some(c[0])));
            row.push(cell(Some(c[3])));
            row.extend(["-", "-", "-", "-"].map(String::from));
            row.push(cell(Some(c[1])));
            row.push(cell(Some(c[2])));
            row
        };
        for m in &self.metrics {
            rows.push(match &m.scores {
                MetricScores::Numerical { regression: g, rank } => numeric_row(
                    m.name.clone(),
                    m.n.to_string(),
                    (g.mse, g.rmse, g.mae, g.bmae),
                    [rank.map(|r| r.lcc), rank.map(|r| r.srcc), rank.map(|r| r.ktau)],
                ),
                MetricScores::Categorical(c) => {
                    cat_row(m.name.clone(), m.n.to_string(), [c.acc, c.precision, c.recall, c.f1])
                }
            });
        }
        if let Some(g) = &self.numerical {
            let label = if g.rank_excluded > 0 {
                format!("macro-numerical ({} rank-excluded)", g.rank_excluded)
            } else {
                "macro-numerical".to_string()
            };
            rows.push(numeric_row(
                label,
                g.metrics.to_string(),
                (g.mse, g.rmse, g.mae, g.bmae),
                [g.lcc, g.srcc, g.ktau],
            ));
        }
        if let Some(c) = &self.categorical {
            rows.push(cat_row(
                "macro-categorical".into(),
                c.metrics.to_string(),
                [c.acc, c.precision, c.recall, c.f1],
            ));
        }
        let mut widths: Vec<usize> = head.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        };
        line(&mut out, &head.map(String::from));
        for r in &rows {
            line(&mut out, r);
        }
        out
    }
}
