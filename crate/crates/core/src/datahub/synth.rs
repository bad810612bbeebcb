use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{AnnotationSet, Dataset, LabelSpace, Sample};
use crate::error::{DuetError, Result};
use crate::seeding;

const DIRECTION_SEED: u64 = 0x00D1_2EC7_1095;

/// Parameters of a Gaussian-cluster dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_class: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_prefix() -> String {
    "s".into()
}

impl SynthSpec {
    pub fn new(n_per_class: Vec<usize>, dim: usize, separation: f64, seed: u64) -> Self {
        Self {
            n_per_class,
            dim,
            separation,
            seed,
            id_prefix: default_prefix(),
        }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.id_prefix = prefix.into();
        self
    }

    pub fn generate(&self) -> Result<Dataset> {
        generate_with_prefix(&self.n_per_class, self.dim, self.separation, self.seed, &self.id_prefix)
    }
}

/// Unit direction of class `c` in `d` dimensions: the `c`-th basis vector
/// while `c < d`, a fixed pseudo-random unit vector beyond that.
pub fn class_direction(c: usize, d: usize) -> Vec<f64> {
    if c < d {
        let mut u = vec![0.0; d];
        u[c] = 1.0;
        return u;
    }
    let mut rng = seeding::rng(seeding::derive_index(
        DIRECTION_SEED,
        "direction",
        (c * 65_537 + d) as u64,
    ));
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Isotropic unit-variance Gaussian clusters, class `c` centred at
/// `separation * class_direction(c)`. Every sample carries its gold label as
/// the working label and no annotations.
pub fn generate_synthetic(n_per_class: &[usize], d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    generate_with_prefix(n_per_class, d, separation, seed, "s")
}

fn generate_with_prefix(n_per_class: &[usize], d: usize, separation: f64, seed: u64, prefix: &str) -> Result<Dataset> {
    if n_per_class.len() < 2 {
        return Err(DuetError::Argument("need counts for at least 2 classes".into()));
    }
    if n_per_class.contains(&0) {
        return Err(DuetError::Argument("every class count must be >= 1".into()));
    }
    if d < 2 {
        return Err(DuetError::Argument(format!("dimension must be >= 2, got {d}")));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(DuetError::Argument(format!("separation must be > 0, got {separation}")));
    }
    let k = n_per_class.len();
    let label_space = LabelSpace::indexed(k)?;
    let mut rng = seeding::child(seed, "synthetic");
    let total: usize = n_per_class.iter().sum();
    let width = total.to_string().len().max(5);
    let mut samples = Vec::with_capacity(total);
    for (c, &count) in n_per_class.iter().enumerate() {
        let center: Vec<f64> = class_direction(c, d).into_iter().map(|u| u * separation).collect();
        for _ in 0..count {
            let features = center
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample {
                id: format!("{prefix}{:0width$}", samples.len()),
                features,
                gold_label: Some(c),
                working_label: Some(c),
                annotations: AnnotationSet::empty(),
            });
        }
    }
    Dataset::new(label_space, d, samples)
}
