use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{DuetError, Result};

/// Ordered set of class identifiers. Order is significant: quadratic kappa
/// weights use the index distance between classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    classes: Vec<String>,
}

impl LabelSpace {
    pub fn new<I, S>(classes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.len() < 2 {
            return Err(DuetError::Argument(format!(
                "label space needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let unique: BTreeSet<&str> = classes.iter().map(String::as_str).collect();
        if unique.len() != classes.len() {
            return Err(DuetError::Argument("duplicate class identifier".into()));
        }
        Ok(Self { classes })
    }

    /// Classes named `c0`, `c1`, ...
    pub fn indexed(k: usize) -> Result<Self> {
        Self::new((0..k).map(|c| format!("c{c}")))
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn contains(&self, label: usize) -> bool {
        label < self.classes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub annotator_id: String,
    pub label: usize,
}

/// Votes cast on one sample. Annotator ids are unique within a sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    votes: Vec<Vote>,
}

impl AnnotationSet {
    pub fn new(votes: Vec<Vote>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for v in &votes {
            if !seen.insert(v.annotator_id.as_str()) {
                return Err(DuetError::Argument(format!(
                    "annotator {} voted twice on one sample",
                    v.annotator_id
                )));
            }
        }
        Ok(Self { votes })
    }

    /// Anonymous votes `a0`, `a1`, ... in the given order.
    pub fn from_labels(labels: &[usize]) -> Self {
        Self {
            votes: labels
                .iter()
                .enumerate()
                .map(|(j, &label)| Vote {
                    annotator_id: format!("a{j}"),
                    label,
                })
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn n(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn votes(&self) -> &[Vote] {
        &self.votes
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.votes.iter().map(|v| v.label)
    }

    /// Per-class vote counts over `k` classes.
    pub fn counts(&self, k: usize) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; k];
        for v in &self.votes {
            *counts
                .get_mut(v.label)
                .ok_or_else(|| DuetError::Argument(format!("vote label {} outside label space of {k}", v.label)))? += 1;
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub gold_label: Option<usize>,
    /// Label seen by training code. Kept separate from `gold_label` so noise
    /// evaluation can compare against the truth exactly.
    pub working_label: Option<usize>,
    pub annotations: AnnotationSet,
}

/// Where a sample's training label comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource<'a> {
    Panel(&'a AnnotationSet),
    /// A working label without annotations: one opinion, no panel.
    SingleTarget(usize),
    Unlabeled,
}

impl Sample {
    pub fn label_source(&self) -> LabelSource<'_> {
        if !self.annotations.is_empty() {
            LabelSource::Panel(&self.annotations)
        } else if let Some(label) = self.working_label {
            LabelSource::SingleTarget(label)
        } else {
            LabelSource::Unlabeled
        }
    }

    pub fn is_labeled(&self) -> bool {
        !matches!(self.label_source(), LabelSource::Unlabeled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub label_space: LabelSpace,
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(label_space: LabelSpace, dim: usize, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self {
            label_space,
            dim,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(DuetError::Argument("feature dimension must be positive".into()));
        }
        let k = self.label_space.k();
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(DuetError::Argument(format!("duplicate sample id {}", s.id)));
            }
            if s.features.len() != self.dim {
                return Err(DuetError::Shape(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    self.dim
                )));
            }
            for label in s.gold_label.iter().chain(s.working_label.iter()) {
                if *label >= k {
                    return Err(DuetError::Argument(format!(
                        "sample {} label {label} outside label space of {k}",
                        s.id
                    )));
                }
            }
            s.annotations.counts(k)?;
            let mut annotators = BTreeSet::new();
            for v in s.annotations.votes() {
                if !annotators.insert(v.annotator_id.as_str()) {
                    return Err(DuetError::Argument(format!(
                        "sample {} has two votes from {}",
                        s.id, v.annotator_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k(&self) -> usize {
        self.label_space.k()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Keeps samples for which `keep` returns true, preserving order.
    pub fn filtered<F: Fn(&Sample) -> bool>(&self, keep: F) -> Dataset {
        Dataset {
            label_space: self.label_space.clone(),
            dim: self.dim,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    pub fn gold_labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.gold_label
                    .ok_or_else(|| DuetError::State(format!("sample {} has no gold label", s.id)))
            })
            .collect()
    }

    pub fn class_counts_gold(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for s in &self.samples {
            if let Some(g) = s.gold_label {
                counts[g] += 1;
            }
        }
        counts
    }
}

/// Row-stochastic `k x k` matrix.
pub(crate) fn check_stochastic(rows: &[Vec<f64>], k: usize, what: &str) -> Result<()> {
    if rows.len() != k {
        return Err(DuetError::Argument(format!(
            "{what} has {} rows, expected {k}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(DuetError::Argument(format!("{what} row {i} has length {}", row.len())));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DuetError::Argument(format!("{what} row {i} has invalid entries")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DuetError::Argument(format!("{what} row {i} sums to {sum}")));
        }
    }
    Ok(())
}
