//! Value codecs: quantization of numerical metrics and direct label mapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{MetricKind, MetricSpec, MetricValue};

/// Default number of bins for numerical metrics.
pub const DEFAULT_BINS: usize = 500;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("at least 2 bins are required, got {0}")]
    TooFewBins(usize),
    #[error("sample has fewer than 2 distinct values")]
    DegenerateSample,
    #[error("token {token} is outside a block of {size}")]
    TokenOutOfBlock { token: u32, size: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("non-finite value")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("value kind does not match codec")]
    KindMismatch,
    #[error("codec is for metric `{found}`, expected `{expected}`")]
    MetricMismatch { expected: String, found: String },
    #[error("malformed codec artifact: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Equal-width bins over the value range.
    Linear,
    /// Equal-occupancy bins at empirical quantiles.
    #[default]
    Percentile,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" | "uniform" => Ok(Strategy::Linear),
            "percentile" => Ok(Strategy::Percentile),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Quantile of an ascending slice using linear interpolation between the
/// order statistics at `floor(p*(n-1))` and `ceil(p*(n-1))`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Bin layout of a numerical codec.
///
/// Bins are `[edge[i-1], edge[i])`, with the first bin starting at `clamp_lo`
/// and the last closed above at `clamp_hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericCodec {
    pub strategy: Strategy,
    /// Requested bin count; the effective count may be lower after collapsing
    /// duplicate quantile edges.
    pub requested_bins: usize,
    pub edges: Vec<f64>,
    pub centroids: Vec<f64>,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl NumericCodec {
    pub fn fit_linear(lo: f64, hi: f64, bins: usize) -> Result<Self, CodecError> {
        if bins < 2 {
            return Err(CodecError::TooFewBins(bins));
        }
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(CodecError::InvalidRange { lo, hi });
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (1..bins).map(|i| lo + i as f64 * width).collect();
        let centroids = (0..bins)
            .map(|i| {
                let a = if i == 0 { lo } else { edges[i - 1] };
                let b = if i == bins - 1 { hi } else { edges[i] };
                0.5 * (a + b)
            })
            .collect();
        Ok(NumericCodec {
            strategy: Strategy::Linear,
            requested_bins: bins,
            edges,
            centroids,
            clamp_lo: lo,
            clamp_hi: hi,
        })
    }

    /// Linear codec over the observed sample range.
    pub fn fit_linear_to_sample(samples: &[f64], bins: usize) -> Result<Self, CodecError> {
        let (lo, hi) = finite_min_max(samples)?;
        if lo == hi {
            return Err(CodecError::DegenerateSample);
        }
        Self::fit_linear(lo, hi, bins)
    }

    pub fn fit_percentile(samples: &[f64], bins: usize) -> Result<Self, CodecError> {
        if bins < 2 {
            return Err(CodecError::TooFewBins(bins));
        }
        let mut sorted = samples.to_vec();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite);
        }
        if sorted.is_empty() {
            return Err(CodecError::EmptyInput);
        }
        sorted.sort_by(f64::total_cmp);
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        if lo == hi {
            return Err(CodecError::DegenerateSample);
        }

        let mut edges: Vec<f64> = Vec::with_capacity(bins - 1);
        for t in 1..bins {
            let q = quantile_sorted(&sorted, t as f64 / bins as f64);
            // Edges equal to the minimum would open an empty first bin.
            if q > lo && edges.last().is_none_or(|&last| q > last) {
                edges.push(q);
            }
        }

        let mut sums = vec![0.0; edges.len() + 1];
        let mut counts = vec![0usize; edges.len() + 1];
        for &v in &sorted {
            let b = edges.partition_point(|&e| e <= v);
            sums[b] += v;
            counts[b] += 1;
        }
        let centroids = (0..=edges.len())
            .map(|i| {
                let a = if i == 0 { lo } else { edges[i - 1] };
                let b = if i == edges.len() { hi } else { edges[i] };
                if counts[i] == 0 {
                    0.5 * (a + b)
                } else {
                    (sums[i] / counts[i] as f64).clamp(a, b)
                }
            })
            .collect();

        Ok(NumericCodec {
            strategy: Strategy::Percentile,
            requested_bins: bins,
            edges,
            centroids,
            clamp_lo: lo,
            clamp_hi: hi,
        })
    }

    pub fn fit(strategy: Strategy, samples: &[f64], bins: usize) -> Result<Self, CodecError> {
        match strategy {
            Strategy::Linear => Self::fit_linear_to_sample(samples, bins),
            Strategy::Percentile => Self::fit_percentile(samples, bins),
        }
    }

    pub fn num_bins(&self) -> usize {
        self.centroids.len()
    }

    pub fn encode(&self, value: f64) -> Result<u32, CodecError> {
        if !value.is_finite() {
            return Err(CodecError::NonFinite);
        }
        let v = value.clamp(self.clamp_lo, self.clamp_hi);
        Ok(self.edges.partition_point(|&e| e <= v) as u32)
    }

    pub fn decode(&self, token: u32) -> Result<f64, CodecError> {
        self.centroids
            .get(token as usize)
            .copied()
            .ok_or(CodecError::TokenOutOfBlock {
                token,
                size: self.num_bins(),
            })
    }

    /// Value interval `[lo, hi)` of bin `token` (closed above for the last bin).
    pub fn bin_bounds(&self, token: u32) -> Result<(f64, f64), CodecError> {
        let i = token as usize;
        if i >= self.num_bins() {
            return Err(CodecError::TokenOutOfBlock {
                token,
                size: self.num_bins(),
            });
        }
        let a = if i == 0 { self.clamp_lo } else { self.edges[i - 1] };
        let b = if i == self.edges.len() {
            self.clamp_hi
        } else {
            self.edges[i]
        };
        Ok((a, b))
    }

    fn check(&self) -> Result<(), CodecError> {
        let corrupt = |m: &str| Err(CodecError::Corrupt(m.to_string()));
        if !(self.clamp_lo.is_finite() && self.clamp_hi.is_finite() && self.clamp_lo < self.clamp_hi)
        {
            return corrupt("clamp bounds");
        }
        if self.centroids.len() != self.edges.len() + 1 {
            return corrupt("centroid count must be edge count + 1");
        }
        if self.centroids.len() < 2 {
            return corrupt("fewer than 2 bins");
        }
        let mut prev = self.clamp_lo;
        for &e in &self.edges {
            if !e.is_finite() || e <= prev || e > self.clamp_hi {
                return corrupt("edges must be strictly increasing inside the clamp range");
            }
            prev = e;
        }
        for i in 0..self.centroids.len() {
            let (a, b) = self.bin_bounds(i as u32)?;
            let c = self.centroids[i];
            if !c.is_finite() || c < a || c > b {
                return corrupt("centroid outside its bin");
            }
        }
        Ok(())
    }
}

fn finite_min_max(samples: &[f64]) -> Result<(f64, f64), CodecError> {
    if samples.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in samples {
        if !v.is_finite() {
            return Err(CodecError::NonFinite);
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// Lossless label ↔ token mapping in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalCodec {
    pub labels: Vec<String>,
}

impl CategoricalCodec {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels }
    }

    pub fn encode(&self, label: &str) -> Result<u32, CodecError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| i as u32)
            .ok_or_else(|| CodecError::UnknownLabel(label.to_string()))
    }

    pub fn decode(&self, token: u32) -> Result<&str, CodecError> {
        self.labels
            .get(token as usize)
            .map(String::as_str)
            .ok_or(CodecError::TokenOutOfBlock {
                token,
                size: self.labels.len(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CodecKind {
    Numeric(NumericCodec),
    Categorical(CategoricalCodec),
}

/// A fitted codec bound to one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub metric: String,
    pub kind: CodecKind,
}

impl Codec {
    pub fn numeric(metric: impl Into<String>, codec: NumericCodec) -> Self {
        Codec {
            metric: metric.into(),
            kind: CodecKind::Numeric(codec),
        }
    }

    pub fn categorical(metric: impl Into<String>, labels: Vec<String>) -> Self {
        Codec {
            metric: metric.into(),
            kind: CodecKind::Categorical(CategoricalCodec::new(labels)),
        }
    }

    /// Fits the codec for `spec` from training values. Categorical metrics
    /// need no data.
    pub fn fit_for(
        spec: &MetricSpec,
        strategy: Strategy,
        bins: usize,
        samples: &[f64],
    ) -> Result<Self, CodecError> {
        match &spec.kind {
            MetricKind::Categorical { labels } => Ok(Codec::categorical(&spec.name, labels.clone())),
            MetricKind::Numerical { lo, hi, .. } => {
                let codec = match strategy {
                    Strategy::Percentile => NumericCodec::fit_percentile(samples, bins)?,
                    Strategy::Linear => {
                        let (smin, smax) = finite_min_max(samples)?;
                        let a = if lo.is_finite() { *lo } else { smin };
                        let b = if hi.is_finite() { *hi } else { smax };
                        NumericCodec::fit_linear(a, b, bins)?
                    }
                };
                Ok(Codec::numeric(&spec.name, codec))
            }
        }
    }

    pub fn block_size(&self) -> usize {
        match &self.kind {
            CodecKind::Numeric(c) => c.num_bins(),
            CodecKind::Categorical(c) => c.labels.len(),
        }
    }

    pub fn as_numeric(&self) -> Option<&NumericCodec> {
        match &self.kind {
            CodecKind::Numeric(c) => Some(c),
            CodecKind::Categorical(_) => None,
        }
    }

    pub fn encode(&self, value: &MetricValue) -> Result<u32, CodecError> {
        match (&self.kind, value) {
            (CodecKind::Numeric(c), MetricValue::Number(v)) => c.encode(*v),
            (CodecKind::Categorical(c), MetricValue::Label(l)) => c.encode(l),
            _ => Err(CodecError::KindMismatch),
        }
    }

    pub fn decode(&self, token: u32) -> Result<MetricValue, CodecError> {
        match &self.kind {
            CodecKind::Numeric(c) => c.decode(token).map(MetricValue::Number),
            CodecKind::Categorical(c) => c.decode(token).map(MetricValue::from),
        }
    }

    pub fn to_json(&self) -> String {
        let artifact = match &self.kind {
            CodecKind::Numeric(c) => CodecArtifact::Numeric {
                metric: self.metric.clone(),
                codec: c.clone(),
            },
            CodecKind::Categorical(c) => CodecArtifact::Categorical {
                metric: self.metric.clone(),
                labels: c.labels.clone(),
            },
        };
        serde_json::to_string_pretty(&artifact).expect("codec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CodecError> {
        let artifact: CodecArtifact =
            serde_json::from_str(text).map_err(|e| CodecError::Corrupt(e.to_string()))?;
        match artifact {
            CodecArtifact::Numeric { metric, codec } => {
                codec.check()?;
                Ok(Codec::numeric(metric, codec))
            }
            CodecArtifact::Categorical { metric, labels } => {
                if labels.is_empty() {
                    return Err(CodecError::Corrupt("empty label set".into()));
                }
                Ok(Codec::categorical(metric, labels))
            }
        }
    }

    /// Loads an artifact and checks it belongs to `spec`.
    pub fn from_json_for(text: &str, spec: &MetricSpec) -> Result<Self, CodecError> {
        let codec = Self::from_json(text)?;
        if codec.metric != spec.name {
            return Err(CodecError::MetricMismatch {
                expected: spec.name.clone(),
                found: codec.metric,
            });
        }
        let consistent = match (&codec.kind, &spec.kind) {
            (CodecKind::Numeric(_), MetricKind::Numerical { .. }) => true,
            (CodecKind::Categorical(c), MetricKind::Categorical { labels }) => &c.labels == labels,
            _ => false,
        };
        if !consistent {
            return Err(CodecError::KindMismatch);
        }
        Ok(codec)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum CodecArtifact {
    Numeric {
        metric: String,
        #[serde(flatten)]
        codec: NumericCodec,
    },
    Categorical {
        metric: String,
        labels: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reconstruction {
    pub rmse: f64,
    pub mae: f64,
}

/// Quantize→dequantize error of `codec` over `values`.
pub fn reconstruction_report(codec: &NumericCodec, values: &[f64]) -> Result<Reconstruction, CodecError> {
    if values.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    for &v in values {
        let r = codec.decode(codec.encode(v)?)?;
        let d = v - r;
        se += d * d;
        ae += d.abs();
    }
    let n = values.len() as f64;
    Ok(Reconstruction {
        rmse: (se / n).sqrt(),
        mae: ae / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_layout() {
        let c = NumericCodec::fit_linear(1.0, 5.0, 4).unwrap();
        assert_eq!(c.edges, vec![2.0, 3.0, 4.0]);
        assert_eq!(c.centroids, vec![1.5, 2.5, 3.5, 4.5]);
        assert_eq!(c.encode(1.0).unwrap(), 0);
        assert_eq!(c.encode(2.0).unwrap(), 1);
        assert_eq!(c.encode(5.0).unwrap(), 3);
        assert_eq!(c.encode(6.2).unwrap(), 3);
        assert_eq!(c.encode(-3.0).unwrap(), 0);
        assert_eq!(c.decode(2).unwrap(), 3.5);
        assert!(matches!(c.decode(4), Err(CodecError::TokenOutOfBlock { .. })));
        assert_eq!(c.encode(f64::NAN), Err(CodecError::NonFinite));
    }

    #[test]
    fn linear_errors() {
        assert_eq!(
            NumericCodec::fit_linear(1.0, 5.0, 1),
            Err(CodecError::TooFewBins(1))
        );
        assert!(matches!(
            NumericCodec::fit_linear(5.0, 1.0, 4),
            Err(CodecError::InvalidRange { .. })
        ));
        assert!(matches!(
            NumericCodec::fit_linear(f64::NEG_INFINITY, 1.0, 4),
            Err(CodecError::InvalidRange { .. })
        ));
    }

    #[test]
    fn percentile_median_edge() {
        // Sorted [1,2,3,4]: p=0.5 → h=1.5 → 2 + 0.5·(3−2).
        let c = NumericCodec::fit_percentile(&[4.0, 1.0, 3.0, 2.0], 2).unwrap();
        assert_eq!(c.edges, vec![2.5]);
        assert_eq!(c.encode(1.0).unwrap(), 0);
        assert_eq!(c.encode(4.0).unwrap(), 1);
        assert_eq!(c.centroids, vec![1.5, 3.5]);
        assert_eq!((c.clamp_lo, c.clamp_hi), (1.0, 4.0));
    }

    #[test]
    fn percentile_degenerate() {
        assert_eq!(
            NumericCodec::fit_percentile(&[5.0; 4], 4),
            Err(CodecError::DegenerateSample)
        );
        assert_eq!(
            NumericCodec::fit_percentile(&[1.0, 2.0], 1),
            Err(CodecError::TooFewBins(1))
        );
    }

    #[test]
    fn percentile_collapses_ties() {
        // Mass at zero, as with error-rate metrics.
        let mut samples = vec![0.0; 80];
        samples.extend((1..=20).map(|i| i as f64));
        let c = NumericCodec::fit_percentile(&samples, 10).unwrap();
        assert!(c.num_bins() < 10);
        assert!(c.edges.windows(2).all(|w| w[0] < w[1]));
        let mut counts = vec![0; c.num_bins()];
        for &v in &samples {
            counts[c.encode(v).unwrap() as usize] += 1;
        }
        assert!(counts.iter().all(|&n| n > 0), "{counts:?}");
        assert_eq!(c.decode(0).unwrap(), 0.0);
    }

    #[test]
    fn categorical_direct() {
        let c = CategoricalCodec::new(vec!["Male".into(), "Female".into()]);
        assert_eq!(c.encode("Female").unwrap(), 1);
        assert_eq!(c.decode(0).unwrap(), "Male");
        assert!(matches!(c.encode("Happy"), Err(CodecError::UnknownLabel(_))));
        for l in &c.labels {
            assert_eq!(c.decode(c.encode(l).unwrap()).unwrap(), l);
        }
    }

    #[test]
    fn reconstruction_at_centroids_is_exact() {
        let c = NumericCodec::fit_linear(1.0, 5.0, 4).unwrap();
        let r = reconstruction_report(&c, &c.centroids).unwrap();
        assert_eq!((r.rmse, r.mae), (0.0, 0.0));
        assert_eq!(reconstruction_report(&c, &[]), Err(CodecError::EmptyInput));
    }

    #[test]
    fn artifact_round_trip_and_rejection() {
        let samples: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 7.3).collect();
        let codec = Codec::numeric("PESQ", NumericCodec::fit_percentile(&samples, 16).unwrap());
        let back = Codec::from_json(&codec.to_json()).unwrap();
        assert_eq!(codec, back);

        let spec = MetricSpec {
            name: "STOI".into(),
            index: 0,
            kind: MetricKind::numerical(0.0, 1.0, crate::registry::Direction::HigherBetter),
        };
        assert!(matches!(
            Codec::from_json_for(&codec.to_json(), &spec),
            Err(CodecError::MetricMismatch { .. })
        ));
        assert!(matches!(Codec::from_json("[]"), Err(CodecError::Corrupt(_))));
    }

    proptest! {
        #[test]
        fn encode_is_monotone(
            samples in proptest::collection::vec(-50.0f64..50.0, 2..200),
            a in -80.0f64..80.0,
            b in -80.0f64..80.0,
            bins in 2usize..40,
        ) {
            prop_assume!(samples.iter().any(|&v| v != samples[0]));
            let c = NumericCodec::fit_percentile(&samples, bins).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.encode(lo).unwrap() <= c.encode(hi).unwrap());
        }

        #[test]
        fn decoded_value_shares_the_bin(
            samples in proptest::collection::vec(-50.0f64..50.0, 2..200),
            v in -80.0f64..80.0,
            bins in 2usize..40,
        ) {
            prop_assume!(samples.iter().any(|&x| x != samples[0]));
            let c = NumericCodec::fit_percentile(&samples, bins).unwrap();
            let t = c.encode(v).unwrap();
            let r = c.decode(t).unwrap();
            prop_assert_eq!(c.encode(r).unwrap(), t);
            let back = Codec::from_json(&Codec::numeric("m", c.clone()).to_json()).unwrap();
            prop_assert_eq!(back.as_numeric().unwrap(), &c);
        }
    }
}
