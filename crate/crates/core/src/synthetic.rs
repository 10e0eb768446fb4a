//! Latent-factor generator for desk-scale multi-metric datasets.
//!
//! Each record draws `q ~ N(0, I_d)`. Features are `A·q + noise`; metric
//! `j` projects `w_j·q + σ_j·ε_j` and maps it through its transform.
//! Labels are then dropped independently at each metric's missingness rate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::chain::LabelSet;
use crate::dataset::UtteranceRecord;
use crate::registry::{MetricKind, MetricValue, Registry};

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios(Vec<f64>),
}

/// How a metric's latent projection becomes a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// `exp(z)`: right-skewed.
    Exponential,
    /// `shift + scale·z`, then clamped to the metric's declared range.
    Affine { scale: f64, shift: f64 },
    /// `lo + (hi − lo)·Φ(z / sd(z))`: uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Label `i` is drawn where the standardized projection falls in the
    /// `i`-th slice of a normal split into the given probabilities
    /// (equiprobable when empty).
    Categorical {
        #[serde(default)]
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetric {
    pub name: String,
    /// Weights on the latent dimensions; missing entries are zero.
    pub loadings: Vec<f64>,
    #[serde(default)]
    pub noise: f64,
    pub transform: Transform,
    #[serde(default)]
    pub missing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub feature_dim: usize,
    /// Standard deviation of the entries of the feature matrix `A`.
    #[serde(default = "one")]
    pub loading_scale: f64,
    #[serde(default)]
    pub feature_noise: f64,
    pub seed: u64,
    pub metrics: Vec<SyntheticMetric>,
}

fn one() -> f64 {
    1.0
}

/// A metric prepared for sampling.
struct Prepared {
    index: usize,
    loadings: Vec<f64>,
    noise: f64,
    missing: f64,
    map: Mapping,
}

enum Mapping {
    Identity(Bounds),
    Exponential(Bounds),
    Affine { scale: f64, shift: f64, bounds: Bounds },
    Uniform { lo: f64, hi: f64, sd: f64 },
    Categorical { cuts: Vec<f64>, labels: Vec<String>, sd: f64 },
}

#[derive(Clone, Copy)]
struct Bounds(f64, f64);

impl Bounds {
    fn clamp(self, v: f64) -> f64 {
        v.max(self.0).min(self.1)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl GeneratorConfig {
    fn prepare(&self, registry: &Registry) -> Result<Vec<Prepared>, SyntheticError> {
        let bad = |m: String| SyntheticError::InvalidConfig(m);
        if self.latent_dim == 0 || self.feature_dim == 0 {
            return Err(bad("latent and feature dimensions must be ≥ 1".into()));
        }
        if !(self.loading_scale.is_finite() && self.feature_noise.is_finite())
            || self.loading_scale < 0.0
            || self.feature_noise < 0.0
        {
            return Err(bad("loading scale and feature noise must be finite and ≥ 0".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for m in &self.metrics {
            let spec = registry.by_name(&m.name).map_err(|e| bad(e.to_string()))?;
            if !seen.insert(spec.index) {
                return Err(bad(format!("metric `{}` configured twice", m.name)));
            }
            if m.loadings.len() > self.latent_dim || m.loadings.iter().any(|w| !w.is_finite()) {
                return Err(bad(format!(
                    "`{}`: loadings must be finite and at most {} long",
                    m.name, self.latent_dim
                )));
            }
            if !(m.noise.is_finite() && m.noise >= 0.0) {
                return Err(bad(format!("`{}`: noise must be finite and ≥ 0", m.name)));
            }
            if !(0.0..1.0).contains(&m.missing) {
                return Err(bad(format!("`{}`: missingness must be in [0, 1)", m.name)));
            }
            let mut loadings = m.loadings.clone();
            loadings.resize(self.latent_dim, 0.0);
            let sd = (loadings.iter().map(|w| w * w).sum::<f64>() + m.noise * m.noise).sqrt();
            let map = match (&m.transform, &spec.kind) {
                (Transform::Categorical { probs }, MetricKind::Categorical { labels }) => {
                    let k = labels.len();
                    let probs = if probs.is_empty() {
                        vec![1.0 / k as f64; k]
                    } else {
                        probs.clone()
                    };
                    let total: f64 = probs.iter().sum();
                    if probs.len() != k
                        || probs.iter().any(|p| !(p.is_finite() && *p > 0.0))
                        || (total - 1.0).abs() > 1e-9
                    {
                        return Err(bad(format!(
                            "`{}`: need {k} positive probabilities summing to 1",
                            m.name
                        )));
                    }
                    if sd == 0.0 && k > 1 {
                        return Err(bad(format!("`{}`: categorical metric has zero variance", m.name)));
                    }
                    let normal = std_normal();
                    let mut acc = 0.0;
                    let cuts = probs[..k - 1]
                        .iter()
                        .map(|p| {
                            acc += p;
                            normal.inverse_cdf(acc.min(1.0))
                        })
                        .collect();
                    Mapping::Categorical {
                        cuts,
                        labels: labels.clone(),
                        sd,
                    }
                }
                (Transform::Categorical { .. }, _) | (_, MetricKind::Categorical { .. }) => {
                    return Err(bad(format!(
                        "`{}`: transform does not match the metric kind",
                        m.name
                    )))
                }
                (t, MetricKind::Numerical { lo, hi, .. }) => {
                    let bounds = Bounds(*lo, *hi);
                    match *t {
                        Transform::Identity => Mapping::Identity(bounds),
                        Transform::Exponential => Mapping::Exponential(bounds),
                        Transform::Affine { scale, shift } => {
                            if !(scale.is_finite() && shift.is_finite()) {
                                return Err(bad(format!("`{}`: non-finite affine map", m.name)));
                            }
                            Mapping::Affine { scale, shift, bounds }
                        }
                        Transform::Uniform { lo: a, hi: b } => {
                            if !(a.is_finite() && b.is_finite() && a < b && a >= *lo && b <= *hi) {
                                return Err(bad(format!(
                                    "`{}`: uniform range must be finite, increasing and inside the metric range",
                                    m.name
                                )));
                            }
                            if sd == 0.0 {
                                return Err(bad(format!("`{}`: uniform metric has zero variance", m.name)));
                            }
                            Mapping::Uniform { lo: a, hi: b, sd }
                        }
                        Transform::Categorical { .. } => unreachable!(),
                    }
                }
            };
            out.push(Prepared {
                index: spec.index,
                loadings,
                noise: m.noise,
                missing: m.missing,
                map,
            });
        }
        Ok(out)
    }

    /// The feature matrix `A` (feature_dim × latent_dim).
    fn feature_matrix(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        (0..self.feature_dim)
            .map(|_| {
                (0..self.latent_dim)
                    .map(|_| self.loading_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

fn map_value(map: &Mapping, z: f64) -> MetricValue {
    match map {
        Mapping::Identity(b) => MetricValue::Number(b.clamp(z)),
        Mapping::Exponential(b) => MetricValue::Number(b.clamp(z.exp())),
        Mapping::Affine { scale, shift, bounds } => MetricValue::Number(bounds.clamp(shift + scale * z)),
        Mapping::Uniform { lo, hi, sd } => {
            let u = std_normal().cdf(z / sd);
            MetricValue::Number((lo + (hi - lo) * u).clamp(*lo, *hi))
        }
        Mapping::Categorical { cuts, labels, sd } => {
            let s = if *sd > 0.0 { z / sd } else { 0.0 };
            let i = cuts.partition_point(|&c| c <= s);
            MetricValue::Label(labels[i].clone())
        }
    }
}

/// Generates `n` records. Record `i` uses its own random stream derived
/// from `(seed, i)`, so output does not depend on generation order.
pub fn generate(
    config: &GeneratorConfig,
    registry: &Registry,
    n: usize,
) -> Result<Vec<UtteranceRecord>, SyntheticError> {
    if n == 0 {
        return Err(SyntheticError::InvalidConfig("n must be ≥ 1".into()));
    }
    let metrics = config.prepare(registry)?;
    let a = config.feature_matrix();
    let width = n.to_string().len().max(5);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let q: Vec<f64> = (0..config.latent_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let features: Vec<f64> = a
            .iter()
            .map(|row| {
                let clean: f64 = row.iter().zip(&q).map(|(w, x)| w * x).sum();
                clean + config.feature_noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mut labels = LabelSet::new();
        for m in &metrics {
            let eps: f64 = rng.sample(StandardNormal);
            let drop: f64 = rng.random();
            let z = m.loadings.iter().zip(&q).map(|(w, x)| w * x).sum::<f64>() + m.noise * eps;
            if drop < m.missing {
                continue;
            }
            labels
                .insert(registry, m.index, map_value(&m.map, z))
                .map_err(|e| SyntheticError::InvalidConfig(e.to_string()))?;
        }
        out.push(UtteranceRecord {
            id: format!("utt-{i:0width$}"),
            features,
            labels,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles indices with `seed`, cuts them at the ratio boundaries and
/// restores the original order within each part.
pub fn split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<Split<T>, SyntheticError> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(SyntheticError::BadRatios(ratios.to_vec()));
    }
    let n = items.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_dev = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut parts = [
        idx[..n_train].to_vec(),
        idx[n_train..n_train + n_dev].to_vec(),
        idx[n_train + n_dev..].to_vec(),
    ];
    let [train, dev, test] = parts.each_mut().map(|p| {
        p.sort_unstable();
        p.iter().map(|&i| items[i].clone()).collect::<Vec<T>>()
    });
    Ok(Split { train, dev, test })
}
