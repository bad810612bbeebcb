use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{check_stochastic, Dataset};
use crate::curriculum::{warmup, TrainingSet};
use crate::error::{DuetError, Result};
use crate::netcore::{MlpModel, Optimizer};
use crate::objectives::PROB_EPS;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Flip target uniform over the other classes.
    Symmetric,
    /// Flip to the largest off-diagonal entry of the confusion row
    /// (`c -> c + 1 mod k` without a confusion matrix).
    PairFlip,
    /// Flip the samples a clean-trained model finds hardest to the class it
    /// confuses them with most.
    LossRankedAsymmetric,
}

/// Reference model trained on gold labels to rank samples for
/// [`NoiseKind::LossRankedAsymmetric`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingModel {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for RankingModel {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            dropout: 0.3,
            epochs: 5,
            lr: 1e-3,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub confusion: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub ranking: RankingModel,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Self {
        Self {
            kind,
            rate,
            seed,
            confusion: None,
            ranking: RankingModel::default(),
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(DuetError::Argument(format!("noise rate {} outside [0, 1]", self.rate)));
        }
        if let Some(c) = &self.confusion {
            check_stochastic(c, k, "noise confusion")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStatus {
    Applied,
    /// `rate * z < 1`: nothing was flipped.
    BelowOneSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOutcome {
    pub dataset: Dataset,
    /// Corrupted ids. For evaluation only; training must not read it.
    pub flipped: BTreeSet<String>,
    pub status: NoiseStatus,
}

/// `round(rate * z)` with halves rounded up.
pub fn flip_count(rate: f64, z: usize) -> usize {
    (rate * z as f64 + 0.5).floor() as usize
}

/// Resets working labels to gold, then corrupts exactly
/// `flip_count(rate, z)` of them.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<NoiseOutcome> {
    let k = dataset.k();
    spec.validate(k)?;
    let gold = dataset.gold_labels()?;
    let mut out = dataset.clone();
    for (s, &g) in out.samples.iter_mut().zip(&gold) {
        s.working_label = Some(g);
    }
    let z = dataset.len();
    if spec.rate * (z as f64) < 1.0 {
        return Ok(NoiseOutcome {
            dataset: out,
            flipped: BTreeSet::new(),
            status: NoiseStatus::BelowOneSample,
        });
    }
    let count = flip_count(spec.rate, z).min(z);
    let mut rng = seeding::child(spec.seed, "noise");
    let targets: Vec<(usize, usize)> = match spec.kind {
        NoiseKind::Symmetric => index::sample(&mut rng, z, count)
            .into_iter()
            .map(|i| {
                let g = gold[i];
                let mut t = rng.random_range(0..k - 1);
                if t >= g {
                    t += 1;
                }
                (i, t)
            })
            .collect(),
        NoiseKind::PairFlip => index::sample(&mut rng, z, count)
            .into_iter()
            .map(|i| (i, pair_target(gold[i], k, spec.confusion.as_deref())))
            .collect(),
        NoiseKind::LossRankedAsymmetric => loss_ranked_targets(dataset, &gold, count, spec)?,
    };
    let mut flipped = BTreeSet::new();
    for (i, t) in targets {
        debug_assert_ne!(t, gold[i]);
        out.samples[i].working_label = Some(t);
        flipped.insert(out.samples[i].id.clone());
    }
    Ok(NoiseOutcome {
        dataset: out,
        flipped,
        status: NoiseStatus::Applied,
    })
}

fn pair_target(c: usize, k: usize, confusion: Option<&[Vec<f64>]>) -> usize {
    match confusion {
        Some(rows) => {
            let row = &rows[c];
            let mut best = if c == 0 { 1 } else { 0 };
            for j in 0..k {
                if j != c && row[j] > row[best] {
                    best = j;
                }
            }
            best
        }
        None => (c + 1) % k,
    }
}

fn loss_ranked_targets(
    dataset: &Dataset,
    gold: &[usize],
    count: usize,
    spec: &NoiseSpec,
) -> Result<Vec<(usize, usize)>> {
    let k = dataset.k();
    let cfg = &spec.ranking;
    let set = TrainingSet::new(
        dataset.samples.iter().map(|s| s.id.clone()).collect(),
        dataset.samples.iter().map(|s| s.features.clone()).collect(),
        gold.to_vec(),
    )?;
    let mut dims = vec![dataset.dim];
    dims.extend(&cfg.hidden);
    dims.push(k);
    let mut model = MlpModel::new(&dims, cfg.dropout, seeding::derive_seed(spec.seed, "ranking-model"))?;
    let mut opt = Optimizer::adam(cfg.lr)?;
    warmup(
        &mut model,
        &set,
        cfg.epochs,
        cfg.batch_size,
        &mut opt,
        seeding::derive_seed(spec.seed, "ranking-shuffle"),
    )?;
    let probs = model.predict_proba(&set.features)?;
    let mut ranked: Vec<(usize, f64)> = gold
        .iter()
        .enumerate()
        .map(|(i, &g)| (i, -probs.get(i, g).max(PROB_EPS).ln()))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| dataset.samples[a.0].id.cmp(&dataset.samples[b.0].id))
    });
    Ok(ranked
        .into_iter()
        .take(count)
        .map(|(i, _)| {
            let row = probs.row(i);
            let g = gold[i];
            let mut best = if g == 0 { 1 } else { 0 };
            for j in 0..k {
                if j != g && row[j] > row[best] {
                    best = j;
                }
            }
            (i, best)
        })
        .collect())
}
