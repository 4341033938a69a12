use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Ordered label universe with one label designated as shared across tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    labels: Vec<String>,
    shared_label: String,
}

pub(crate) fn check_label_name(name: &str) -> Result<()> {
    if name.is_empty()
        || name.trim() != name
        || name.starts_with('*')
        || name.starts_with('#')
        || name.contains([',', '+', '\n', '\r'])
    {
        return Err(invalid(format!("unusable label name `{name}`")));
    }
    Ok(())
}

impl LabelScheme {
    pub fn new(labels: Vec<String>, shared_label: impl Into<String>) -> Result<Self> {
        let shared_label = shared_label.into();
        let mut seen = HashSet::new();
        for l in &labels {
            check_label_name(l)?;
            if !seen.insert(l.as_str()) {
                return Err(invalid(format!("duplicate label `{l}`")));
            }
        }
        if !seen.contains(shared_label.as_str()) {
            return Err(invalid(format!("shared label `{shared_label}` is not in the scheme")));
        }
        Ok(LabelScheme { labels, shared_label })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn shared_label(&self) -> &str {
        &self.shared_label
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| invalid(format!("label `{name}` is not in the scheme")))
    }

    pub fn shared_index(&self) -> usize {
        self.index_of(&self.shared_label).expect("validated on construction")
    }
}

/// A binary recognition task, e.g. Normal vs Dirt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub positive_label: String,
    pub negative_label: String,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let task = TaskSpec {
            name: name.into(),
            positive_label: positive.into(),
            negative_label: negative.into(),
        };
        if task.positive_label == task.negative_label {
            return Err(invalid(format!(
                "task `{}` uses `{}` as both classes",
                task.name, task.positive_label
            )));
        }
        if task.name.is_empty() || task.name.contains([',', ':', ' ']) {
            return Err(invalid(format!("unusable task name `{}`", task.name)));
        }
        Ok(task)
    }

    pub fn validate(&self, scheme: &LabelScheme) -> Result<()> {
        if self.positive_label == self.negative_label {
            return Err(invalid(format!("task `{}` has identical classes", self.name)));
        }
        scheme.require(&self.positive_label)?;
        scheme.require(&self.negative_label)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    scheme: LabelScheme,
    dim: usize,
    samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn new(scheme: LabelScheme, dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dimension must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(invalid(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label >= scheme.len() {
                return Err(invalid(format!("sample {i} has label index {} out of range", s.label)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("sample {i} has a non-finite feature")));
            }
        }
        Ok(LabeledDataset { scheme, dim, samples })
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_name(&self, sample: &Sample) -> &str {
        &self.scheme.labels()[sample.label]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scheme.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Samples of the named labels under a scheme restricted to them, in
    /// the original scheme order. The shared label must be kept.
    pub fn subset(&self, keep: &[&str]) -> Result<LabeledDataset> {
        for name in keep {
            self.scheme.require(name)?;
        }
        let labels: Vec<String> = self
            .scheme
            .labels()
            .iter()
            .filter(|l| keep.contains(&l.as_str()))
            .cloned()
            .collect();
        let scheme = LabelScheme::new(labels, self.scheme.shared_label())?;
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                scheme.index_of(self.label_name(s)).map(|label| Sample {
                    features: s.features.clone(),
                    label,
                })
            })
            .collect();
        LabeledDataset::new(scheme, self.dim, samples)
    }

    /// Same samples re-indexed against `scheme`, which must contain every
    /// label used here.
    pub fn reindex(&self, scheme: &LabelScheme) -> Result<LabeledDataset> {
        let map = self
            .scheme
            .labels()
            .iter()
            .map(|l| scheme.require(l))
            .collect::<Result<Vec<_>>>()?;
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                features: s.features.clone(),
                label: map[s.label],
            })
            .collect();
        LabeledDataset::new(scheme.clone(), self.dim, samples)
    }
}

/// Concatenate task datasets into one benchmark dataset.
///
/// Labels are reconciled by name, in order of first appearance. Exact
/// duplicate shared-label samples coming from different parts are merged;
/// everything else is kept.
pub fn concat_datasets(parts: &[LabeledDataset]) -> Result<LabeledDataset> {
    let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
    let shared = first.scheme.shared_label();
    let mut labels: Vec<String> = Vec::new();
    for part in parts {
        if part.dim != first.dim {
            return Err(invalid(format!(
                "feature dimension mismatch: {} vs {}",
                part.dim, first.dim
            )));
        }
        if part.scheme.shared_label() != shared {
            return Err(invalid(format!(
                "shared label mismatch: `{}` vs `{shared}`",
                part.scheme.shared_label()
            )));
        }
        for l in part.scheme.labels() {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
    }
    let scheme = LabelScheme::new(labels, shared)?;
    let shared_idx = scheme.shared_index();
    let key = |s: &Sample| -> Vec<u64> { s.features.iter().map(|v| v.to_bits()).collect() };
    // A shared-label sample survives as many times as it occurs in the part
    // holding the most copies of it.
    let mut keep: HashMap<Vec<u64>, usize> = HashMap::new();
    for part in parts {
        let mut here: HashMap<Vec<u64>, usize> = HashMap::new();
        for s in &part.samples {
            if part.label_name(s) == shared {
                *here.entry(key(s)).or_default() += 1;
            }
        }
        for (k, n) in here {
            let slot = keep.entry(k).or_default();
            *slot = (*slot).max(n);
        }
    }
    let mut samples = Vec::new();
    for part in parts {
        for s in &part.samples {
            let label = scheme.require(part.label_name(s))?;
            if label == shared_idx {
                let left = keep.get_mut(&key(s)).expect("counted above");
                if *left == 0 {
                    continue;
                }
                *left -= 1;
            }
            samples.push(Sample {
                features: s.features.clone(),
                label,
            });
        }
    }
    LabeledDataset::new(scheme, first.dim, samples)
}
