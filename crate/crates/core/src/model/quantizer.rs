use serde::{Deserialize, Serialize};

use crate::tokenizer::quantile_sorted;

/// Maps the leading feature dimensions to a single bucket id using
/// per-dimension training quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureQuantizer {
    pub buckets: usize,
    /// Interior cut points for each quantized dimension.
    pub edges: Vec<Vec<f64>>,
}

impl FeatureQuantizer {
    /// A quantizer that puts everything in bucket 0.
    pub fn trivial() -> Self {
        Self {
            buckets: 1,
            edges: Vec::new(),
        }
    }

    /// Fits `buckets` quantile buckets on each of the first `dims` columns.
    pub fn fit(rows: &[&[f64]], dims: usize, buckets: usize) -> Self {
        if dims == 0 || buckets < 2 || rows.is_empty() {
            return Self::trivial();
        }
        let edges = (0..dims)
            .map(|d| {
                let mut col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
                col.sort_by(f64::total_cmp);
                let mut cuts: Vec<f64> = Vec::new();
                for t in 1..buckets {
                    let q = quantile_sorted(&col, t as f64 / buckets as f64);
                    if cuts.last().is_none_or(|&c| q > c) {
                        cuts.push(q);
                    }
                }
                cuts
            })
            .collect();
        Self { buckets, edges }
    }

    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.pow(self.edges.len() as u32)
    }

    pub fn bucket(&self, features: &[f64]) -> u32 {
        let mut id = 0usize;
        for (d, cuts) in self.edges.iter().enumerate().rev() {
            let b = cuts.partition_point(|&c| c <= features[d]);
            id = id * self.buckets + b;
        }
        id as u32
    }

    pub(crate) fn is_well_formed(&self) -> bool {
        if self.buckets == 0 || self.edges.len() > 16 {
            return false;
        }
        if self.buckets.checked_pow(self.edges.len() as u32).is_none() {
            return false;
        }
        self.edges.iter().all(|cuts| {
            cuts.len() < self.buckets
                && cuts.iter().all(|c| c.is_finite())
                && cuts.windows(2).all(|w| w[0] < w[1])
        })
    }
}
