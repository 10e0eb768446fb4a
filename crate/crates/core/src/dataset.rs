//! Utterance records and their line-delimited JSON form.
//!
//! One object per line: `{"id": …, "features": [...], "metrics": {name: value}}`.
//! Absent metrics are omitted (or written as `null`).

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::LabelSet;
use crate::registry::{MetricValue, Registry};

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: LabelSet,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    features: Vec<f64>,
    #[serde(default)]
    metrics: serde_json::Map<String, serde_json::Value>,
}

struct MetricsOut<'a> {
    registry: &'a Registry,
    labels: &'a LabelSet,
}

impl Serialize for MetricsOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.labels.len()))?;
        for (m, v) in self.labels.iter() {
            map.serialize_entry(&self.registry.specs()[m].name, v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    features: &'a [f64],
    metrics: MetricsOut<'a>,
}

impl UtteranceRecord {
    /// Parses one dataset line. `line` is 1-based and only used in errors.
    pub fn parse_line(text: &str, registry: &Registry, line: usize) -> Result<Self, DatasetError> {
        let err = |message: String| DatasetError::Line { line, message };
        let raw: RawRecord = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if raw.features.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite feature".into()));
        }
        let mut labels = LabelSet::new();
        for (name, value) in raw.metrics {
            let spec = registry
                .by_name(&name)
                .map_err(|e| err(e.to_string()))?;
            let value = match value {
                serde_json::Value::Null => continue,
                serde_json::Value::Number(n) => MetricValue::Number(
                    n.as_f64().ok_or_else(|| err(format!("bad number for `{name}`")))?,
                ),
                serde_json::Value::String(s) => MetricValue::Label(s),
                other => return Err(err(format!("unsupported value {other} for `{name}`"))),
            };
            labels
                .insert(registry, spec.index, value)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(UtteranceRecord {
            id: raw.id,
            features: raw.features,
            labels,
        })
    }

    pub fn to_json_line(&self, registry: &Registry) -> String {
        let out = RecordOut {
            id: &self.id,
            features: &self.features,
            metrics: MetricsOut {
                registry,
                labels: &self.labels,
            },
        };
        serde_json::to_string(&out).expect("record serializes")
    }
}

/// Parses a whole dataset document; blank lines are skipped. All records
/// must share one feature dimension.
pub fn read_dataset(text: &str, registry: &Registry) -> Result<Vec<UtteranceRecord>, DatasetError> {
    let mut out: Vec<UtteranceRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = UtteranceRecord::parse_line(line, registry, i + 1)?;
        if let Some(first) = out.first() {
            if first.features.len() != rec.features.len() {
                return Err(DatasetError::Line {
                    line: i + 1,
                    message: format!(
                        "feature dimension {} differs from {}",
                        rec.features.len(),
                        first.features.len()
                    ),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_dataset(records: &[UtteranceRecord], registry: &Registry) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_json_line(registry));
        s.push('\n');
    }
    s
}

/// Per-metric label coverage: (metric index, labeled count, fraction).
pub fn coverage(records: &[UtteranceRecord], registry: &Registry) -> Vec<(usize, usize, f64)> {
    registry
        .iter()
        .map(|spec| {
            let n = records.iter().filter(|r| r.labels.contains(spec.index)).count();
            let frac = if records.is_empty() {
                0.0
            } else {
                n as f64 / records.len() as f64
            };
            (spec.index, n, frac)
        })
        .collect()
}
