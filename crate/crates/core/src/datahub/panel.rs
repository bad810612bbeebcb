use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{check_stochastic, AnnotationSet, Dataset, Vote};
use crate::error::{DuetError, Result};
use crate::seeding;

/// A simulated annotator: row `c` of `confusion` is the distribution of
/// votes cast on a sample whose true class is `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub confusion: Vec<Vec<f64>>,
    /// Probability that this annotator labels any given sample.
    pub coverage: f64,
}

impl AnnotatorProfile {
    pub fn new(annotator_id: impl Into<String>, confusion: Vec<Vec<f64>>, coverage: f64) -> Result<Self> {
        let p = Self {
            annotator_id: annotator_id.into(),
            confusion,
            coverage,
        };
        p.validate(p.confusion.len())?;
        Ok(p)
    }

    /// Correct with probability `accuracy`, otherwise uniform over the
    /// other classes.
    pub fn with_accuracy(annotator_id: impl Into<String>, k: usize, accuracy: f64, coverage: f64) -> Result<Self> {
        if k < 2 || !(0.0..=1.0).contains(&accuracy) {
            return Err(DuetError::Argument(format!("invalid accuracy {accuracy} for k={k}")));
        }
        let off = (1.0 - accuracy) / (k - 1) as f64;
        let confusion = (0..k)
            .map(|i| (0..k).map(|j| if i == j { accuracy } else { off }).collect())
            .collect();
        Self::new(annotator_id, confusion, coverage)
    }

    /// Ordinal over-grader: `error` spread uniformly over the other
    /// classes, plus `bias` moved from the true class to the next one up
    /// (the top class keeps it).
    pub fn over_grading(
        annotator_id: impl Into<String>,
        k: usize,
        bias: f64,
        error: f64,
        coverage: f64,
    ) -> Result<Self> {
        if k < 2 || !(bias >= 0.0 && error >= 0.0 && bias + error <= 1.0) {
            return Err(DuetError::Argument(format!(
                "invalid over-grading profile: k={k} bias={bias} error={error}"
            )));
        }
        let confusion = (0..k)
            .map(|c| {
                let mut row = vec![error / (k - 1) as f64; k];
                row[c] = 1.0 - error;
                if c + 1 < k {
                    row[c] -= bias;
                    row[c + 1] += bias;
                }
                row
            })
            .collect();
        Self::new(annotator_id, confusion, coverage)
    }

    pub fn identity(annotator_id: impl Into<String>, k: usize) -> Result<Self> {
        Self::with_accuracy(annotator_id, k, 1.0, 1.0)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        check_stochastic(&self.confusion, k, &format!("confusion of {}", self.annotator_id))?;
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err(DuetError::Argument(format!(
                "coverage of {} must lie in (0, 1], got {}",
                self.annotator_id, self.coverage
            )));
        }
        Ok(())
    }
}

/// Replaces every sample's annotations with votes from the panel. Each
/// sample draws from its own stream derived from `(seed, id)`, so the votes
/// a sample receives do not depend on which other samples are present.
///
/// Working labels are cleared: after simulation the panel is the only label
/// source, and samples that drew no votes are unlabeled.
pub fn simulate_panel(dataset: &Dataset, profiles: &[AnnotatorProfile], seed: u64) -> Result<Dataset> {
    if profiles.is_empty() {
        return Err(DuetError::Argument("panel needs at least one annotator".into()));
    }
    let k = dataset.k();
    let mut seen = std::collections::BTreeSet::new();
    for p in profiles {
        p.validate(k)?;
        if !seen.insert(p.annotator_id.as_str()) {
            return Err(DuetError::Argument(format!("duplicate annotator {}", p.annotator_id)));
        }
    }
    let rows: Vec<Vec<WeightedIndex<f64>>> = profiles
        .iter()
        .map(|p| {
            p.confusion
                .iter()
                .map(|row| WeightedIndex::new(row).map_err(|e| DuetError::Argument(e.to_string())))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out = dataset.clone();
    for s in &mut out.samples {
        let gold = s
            .gold_label
            .ok_or_else(|| DuetError::State(format!("sample {} has no gold label", s.id)))?;
        let mut rng = seeding::child(seed, &format!("panel/{}", s.id));
        let mut votes = Vec::new();
        for (p, dists) in profiles.iter().zip(&rows) {
            if p.coverage < 1.0 && rng.random::<f64>() >= p.coverage {
                continue;
            }
            votes.push(Vote {
                annotator_id: p.annotator_id.clone(),
                label: dists[gold].sample(&mut rng),
            });
        }
        s.annotations = AnnotationSet::new(votes)?;
        s.working_label = None;
    }
    Ok(out)
}
