//! Single-target label uncertainty from Monte-Carlo dropout: the entropy of
//! the mean predictive distribution over `T` stochastic passes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::datahub::{Dataset, Sample};
use crate::error::{DuetError, Result};
use crate::netcore::{self, Matrix, MlpModel};
use crate::seeding;

/// Samples per internal MC batch.
const MC_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPredictionSet {
    pub id: String,
    pub draws: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl McPredictionSet {
    pub fn new(id: impl Into<String>, draws: Vec<Vec<f64>>) -> Result<Self> {
        let k = draws.first().map_or(0, Vec::len);
        if draws.is_empty() || k == 0 {
            return Err(DuetError::Argument("prediction set needs at least one draw".into()));
        }
        for d in &draws {
            if d.len() != k {
                return Err(DuetError::Shape("draws have different class counts".into()));
            }
            if d.iter().any(|p| !p.is_finite()) {
                return Err(DuetError::Numeric("non-finite probability in draw".into()));
            }
        }
        let t = draws.len() as f64;
        let mut mean = vec![0.0; k];
        for d in &draws {
            for (m, p) in mean.iter_mut().zip(d) {
                *m += p;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t);
        Ok(Self {
            id: id.into(),
            draws,
            mean,
        })
    }

    pub fn t(&self) -> usize {
        self.draws.len()
    }

    /// Splits `T` batch-level probability matrices into per-sample sets.
    pub fn from_batch_draws(ids: &[String], draws: &[Matrix]) -> Result<Vec<Self>> {
        if let Some(d) = draws.iter().find(|d| d.rows() != ids.len()) {
            return Err(DuetError::Shape(format!(
                "draw has {} rows for {} ids",
                d.rows(),
                ids.len()
            )));
        }
        ids.iter()
            .enumerate()
            .map(|(i, id)| Self::new(id.clone(), draws.iter().map(|d| d.row(i).to_vec()).collect()))
            .collect()
    }
}

/// Shannon entropy (natural log) with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Mean predictive entropy of a prediction set.
pub fn uosl(set: &McPredictionSet) -> Result<f64> {
    if set.mean.iter().any(|m| !m.is_finite()) {
        return Err(DuetError::Numeric(format!("non-finite mean prediction for {}", set.id)));
    }
    Ok(entropy(&set.mean).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UoslTable {
    /// `(id, uosl)` in dataset order.
    pub scores: Vec<(String, f64)>,
    /// Unlabeled samples passed over.
    pub skipped: usize,
}

/// UoSL for every labeled sample of `dataset`. Batch `b` draws its dropout
/// masks from a stream derived from `(seed, b)`, so results do not depend
/// on evaluation order.
pub fn uosl_table(model: &MlpModel, dataset: &Dataset, t: usize, seed: u64) -> Result<UoslTable> {
    let labeled: Vec<&Sample> = dataset.samples.iter().filter(|s| s.is_labeled()).collect();
    let skipped = dataset.len() - labeled.len();
    let mut scores = Vec::with_capacity(labeled.len());
    for (b, chunk) in labeled.chunks(MC_BATCH).enumerate() {
        let rows: Vec<Vec<f64>> = chunk.iter().map(|s| s.features.clone()).collect();
        let x = Matrix::from_rows(&rows)?;
        let ids: Vec<String> = chunk.iter().map(|s| s.id.clone()).collect();
        let draws = netcore::mc_forward(model, &x, t, seeding::derive_index(seed, "mc-batch", b as u64))?;
        for set in McPredictionSet::from_batch_draws(&ids, &draws)? {
            let u = uosl(&set)?;
            scores.push((set.id, u));
        }
    }
    Ok(UoslTable { scores, skipped })
}

/// Ids in ascending uncertainty; ties broken by id.
pub fn rank_by_uncertainty(scores: &[(String, f64)]) -> Vec<String> {
    let mut sorted: Vec<&(String, f64)> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    sorted.into_iter().map(|(id, _)| id.clone()).collect()
}
