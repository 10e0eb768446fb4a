//! Metric declarations: names, kinds, ranges and dense indices.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("metric `{0}` is already registered")]
    DuplicateName(String),
    #[error("invalid kind for metric `{name}`: {reason}")]
    InvalidKind { name: String, reason: String },
    #[error("value {value} is outside [{lo}, {hi}] for metric `{name}`")]
    OutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("label `{label}` is not declared for metric `{name}`")]
    UnknownLabel { name: String, label: String },
    #[error("non-finite value for metric `{0}`")]
    NonFinite(String),
    #[error("metric `{name}` expects a {expected} value")]
    KindMismatch { name: String, expected: &'static str },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("malformed registry document: {0}")]
    Parse(String),
}

/// Preferred direction of a numerical metric. Carried for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
    #[default]
    None,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::HigherBetter => "higher-better",
            Direction::LowerBetter => "lower-better",
            Direction::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    /// Real-valued metric; either bound may be infinite.
    Numerical { lo: f64, hi: f64, direction: Direction },
    /// Closed label set in canonical order.
    Categorical { labels: Vec<String> },
}

impl MetricKind {
    pub fn numerical(lo: f64, hi: f64, direction: Direction) -> Self {
        MetricKind::Numerical { lo, hi, direction }
    }

    pub fn unbounded(direction: Direction) -> Self {
        MetricKind::Numerical {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            direction,
        }
    }

    pub fn categorical<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        MetricKind::Categorical {
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, MetricKind::Numerical { .. })
    }

    fn check(&self, name: &str) -> Result<(), RegistryError> {
        let invalid = |reason: &str| RegistryError::InvalidKind {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        match self {
            MetricKind::Numerical { lo, hi, .. } => {
                if lo.is_nan() || hi.is_nan() {
                    return Err(invalid("bounds must not be NaN"));
                }
                if lo >= hi {
                    return Err(invalid("lower bound must be below upper bound"));
                }
                if *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                    return Err(invalid("bounds point the wrong way"));
                }
            }
            MetricKind::Categorical { labels } => {
                if labels.is_empty() {
                    return Err(invalid("label set is empty"));
                }
                let mut seen = std::collections::HashSet::new();
                for l in labels {
                    if !seen.insert(l.as_str()) {
                        return Err(invalid(&format!("duplicate label `{l}`")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A single metric value as it appears in datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Number(f64),
    Label(String),
}

impl MetricValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            MetricValue::Number(v) => Some(*v),
            MetricValue::Label(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            MetricValue::Label(l) => Some(l),
            MetricValue::Number(_) => None,
        }
    }
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Number(v)
    }
}

impl From<&str> for MetricValue {
    fn from(v: &str) -> Self {
        MetricValue::Label(v.to_string())
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Number(v) => write!(f, "{v}"),
            MetricValue::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub name: String,
    pub index: usize,
    pub kind: MetricKind,
}

impl MetricSpec {
    pub fn validate_value(&self, value: &MetricValue) -> Result<(), RegistryError> {
        match (&self.kind, value) {
            (MetricKind::Numerical { lo, hi, .. }, MetricValue::Number(v)) => {
                if !v.is_finite() {
                    return Err(RegistryError::NonFinite(self.name.clone()));
                }
                if v < lo || v > hi {
                    return Err(RegistryError::OutOfRange {
                        name: self.name.clone(),
                        value: *v,
                        lo: *lo,
                        hi: *hi,
                    });
                }
                Ok(())
            }
            (MetricKind::Categorical { labels }, MetricValue::Label(l)) => {
                if labels.iter().any(|x| x == l) {
                    Ok(())
                } else {
                    Err(RegistryError::UnknownLabel {
                        name: self.name.clone(),
                        label: l.clone(),
                    })
                }
            }
            (MetricKind::Numerical { .. }, MetricValue::Label(_)) => {
                Err(RegistryError::KindMismatch {
                    name: self.name.clone(),
                    expected: "numerical",
                })
            }
            (MetricKind::Categorical { .. }, MetricValue::Number(_)) => {
                Err(RegistryError::KindMismatch {
                    name: self.name.clone(),
                    expected: "categorical",
                })
            }
        }
    }
}

/// Ordered, immutable-after-build set of metric declarations.
///
/// Insertion order is canonical: it fixes metric indices, metadata token ids
/// and the serialization order.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    specs: Vec<MetricSpec>,
    by_name: HashMap<String, usize>,
}

impl PartialEq for Registry {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        kind: MetricKind,
    ) -> Result<usize, RegistryError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(RegistryError::DuplicateName(name));
        }
        kind.check(&name)?;
        let index = self.specs.len();
        self.by_name.insert(name.clone(), index);
        self.specs.push(MetricSpec { name, index, kind });
        Ok(index)
    }

    /// Builder-style variant of [`Registry::register`].
    pub fn with(mut self, name: impl Into<String>, kind: MetricKind) -> Result<Self, RegistryError> {
        self.register(name, kind)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[MetricSpec] {
        &self.specs
    }

    pub fn get(&self, index: usize) -> Option<&MetricSpec> {
        self.specs.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Result<&MetricSpec, RegistryError> {
        self.index_of(name)
            .map(|i| &self.specs[i])
            .ok_or_else(|| RegistryError::UnknownMetric(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetricSpec> {
        self.specs.iter()
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let entries: Vec<MetricEntry> =
            serde_json::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        let mut reg = Registry::new();
        for entry in entries {
            let kind = entry.kind()?;
            reg.register(entry.name, kind)?;
        }
        Ok(reg)
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<MetricEntry> = self.specs.iter().map(MetricEntry::from).collect();
        // Entries hold only strings and finite-or-null numbers.
        serde_json::to_string_pretty(&entries).expect("registry entries serialize")
    }
}

/// On-disk shape of one registry entry. Infinite bounds are written as `null`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricEntry {
    name: String,
    kind: EntryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<Direction>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EntryKind {
    Numerical,
    Categorical,
}

impl MetricEntry {
    fn kind(&self) -> Result<MetricKind, RegistryError> {
        let invalid = |reason: &str| RegistryError::InvalidKind {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        match self.kind {
            EntryKind::Numerical => {
                if self.labels.is_some() {
                    return Err(invalid("numerical metrics take no labels"));
                }
                Ok(MetricKind::Numerical {
                    lo: self.lo.unwrap_or(f64::NEG_INFINITY),
                    hi: self.hi.unwrap_or(f64::INFINITY),
                    direction: self.direction.unwrap_or_default(),
                })
            }
            EntryKind::Categorical => {
                if self.lo.is_some() || self.hi.is_some() {
                    return Err(invalid("categorical metrics take no bounds"));
                }
                let labels = self
                    .labels
                    .clone()
                    .ok_or_else(|| invalid("categorical metric without labels"))?;
                Ok(MetricKind::Categorical { labels })
            }
        }
    }
}

impl From<&MetricSpec> for MetricEntry {
    fn from(spec: &MetricSpec) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        match &spec.kind {
            MetricKind::Numerical { lo, hi, direction } => MetricEntry {
                name: spec.name.clone(),
                kind: EntryKind::Numerical,
                lo: finite(*lo),
                hi: finite(*hi),
                labels: None,
                direction: Some(*direction),
            },
            MetricKind::Categorical { labels } => MetricEntry {
                name: spec.name.clone(),
                kind: EntryKind::Categorical,
                lo: None,
                hi: None,
                labels: Some(labels.clone()),
                direction: None,
            },
        }
    }
}
