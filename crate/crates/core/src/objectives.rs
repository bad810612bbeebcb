//! Training objectives and uncertainty-derived sample weights.
//!
//! Both losses take class probabilities (not logits) and return the batch
//! mean together with the analytic gradient with respect to those
//! probabilities; [`MlpModel::backward`] carries it through the softmax.
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log;
//! the gradient is zero where the clamp is active.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DuetError, Result};
use crate::netcore::{Gradients, Matrix, MlpModel};

pub const PROB_EPS: f64 = 1e-12;

/// Default floor applied to weights so no labeled sample is silently dropped.
pub const DEFAULT_W_MIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `dL/dprobs`, same shape as the probabilities.
    pub grad: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Focal exponent.
    pub gamma: f64,
    /// Coefficient of the focal term on the clean set.
    pub alpha: f64,
    /// Epoch at which the weighted-CE coefficient reaches 1.
    pub epoch_all: usize,
    pub t_uosl: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 1.0,
            epoch_all: 5,
            t_uosl: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(DuetError::Argument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(DuetError::Argument(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.epoch_all == 0 {
            return Err(DuetError::Argument("epoch_all must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.t_uosl) {
            return Err(DuetError::Argument(format!(
                "t_uosl must lie in [0, 1], got {}",
                self.t_uosl
            )));
        }
        Ok(())
    }
}

fn check_batch(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(DuetError::Shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.rows() == 0 {
        return Err(DuetError::Argument("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.cols()) {
        return Err(DuetError::Argument(format!(
            "label {bad} outside {} classes",
            probs.cols()
        )));
    }
    if !probs.is_finite() {
        return Err(DuetError::Numeric("non-finite probabilities".into()));
    }
    Ok(())
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, true)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, true)
    } else {
        (p, false)
    }
}

/// Mean over the batch of `-(1 - p_t)^gamma * ln p_t`, `p_t` the
/// probability of the true class.
pub fn focal_loss(probs: &Matrix, labels: &[usize], gamma: f64) -> Result<LossOutput> {
    check_batch(probs, labels)?;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(DuetError::Argument(format!("gamma must be >= 0, got {gamma}")));
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (p, clamped) = clamp_prob(probs.get(i, y));
        let ln_p = p.ln();
        let q = 1.0 - p;
        if gamma == 0.0 {
            total -= ln_p;
            if !clamped {
                grad.set(i, y, -1.0 / (p * n));
            }
        } else {
            let modulator = q.powf(gamma);
            total -= modulator * ln_p;
            if !clamped {
                let d = gamma * q.powf(gamma - 1.0) * ln_p - modulator / p;
                grad.set(i, y, d / n);
            }
        }
    }
    Ok(LossOutput { loss: total / n, grad })
}

/// Plain mean cross-entropy.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    focal_loss(probs, labels, 0.0)
}

/// Per-sample cross-entropy scaled by `weights`, batch mean. Weights must
/// lie in `(0, 1]`.
pub fn weighted_ce(probs: &Matrix, labels: &[usize], weights: &[f64]) -> Result<LossOutput> {
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
        return Err(DuetError::Argument(format!("weight {w} outside (0, 1]")));
    }
    weighted_ce_unchecked(probs, labels, weights)
}

/// [`weighted_ce`] without the weight-range check.
pub fn weighted_ce_unchecked(probs: &Matrix, labels: &[usize], weights: &[f64]) -> Result<LossOutput> {
    check_batch(probs, labels)?;
    if weights.len() != labels.len() {
        return Err(DuetError::Shape(format!(
            "{} weights for {} samples",
            weights.len(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    let mut total = 0.0;
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        let (p, clamped) = clamp_prob(probs.get(i, y));
        total -= w * p.ln();
        if !clamped {
            grad.set(i, y, -w / (p * n));
        }
    }
    Ok(LossOutput { loss: total / n, grad })
}

/// Coefficient of the weighted-CE term: `(epoch_i / epoch_all)^2`, capped at 1.
pub fn beta_schedule(epoch_i: usize, epoch_all: usize) -> f64 {
    let r = epoch_i as f64 / epoch_all.max(1) as f64;
    (r * r).min(1.0)
}

/// Features, labels and ids of one mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
    pub ids: &'a [String],
}

impl LabeledBatch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub loss: f64,
    pub focal: f64,
    pub weighted_ce: f64,
    pub beta: f64,
    pub grads: Gradients,
}

/// `alpha * focal(clean) + beta * weighted_ce(all)` with
/// `beta = beta_schedule(epoch_i, epoch_all)`. Runs one forward/backward
/// pass per non-empty term on `model` and sums the gradients.
pub fn combined_loss(
    model: &mut MlpModel,
    clean: &LabeledBatch<'_>,
    all: &LabeledBatch<'_>,
    epoch_i: usize,
    config: &LossConfig,
    weights: &WeightTable,
) -> Result<CombinedLoss> {
    config.validate()?;
    let sample_weights = all
        .ids
        .iter()
        .map(|id| {
            weights
                .weight(id)
                .ok_or_else(|| DuetError::State(format!("no weight for sample {id}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let beta = beta_schedule(epoch_i, config.epoch_all);
    let mut grads = Gradients::zeros_like(model);
    let mut focal = 0.0;
    let mut wce = 0.0;
    if !clean.is_empty() {
        let probs = model.forward(clean.features)?;
        let out = focal_loss(&probs, clean.labels, config.gamma)?;
        grads.add_scaled(&model.backward(clean.features, &out.grad)?, config.alpha);
        focal = out.loss;
    }
    if beta > 0.0 && !all.is_empty() {
        let probs = model.forward(all.features)?;
        let out = weighted_ce(&probs, all.labels, &sample_weights)?;
        grads.add_scaled(&model.backward(all.features, &out.grad)?, beta);
        wce = out.loss;
    }
    Ok(CombinedLoss {
        loss: config.alpha * focal + beta * wce,
        focal,
        weighted_ce: wce,
        beta,
        grads,
    })
}

/// How raw uncertainty scores are mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(u - min) / (max - min)` over the scored set; all zero when constant.
    #[default]
    MinMax,
    /// `u / ln k`, the entropy upper bound for `k` classes.
    LogK { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub id: String,
    pub uosl: f64,
    pub nuosl: f64,
    pub weight: f64,
}

/// Per-sample uncertainty scores and the weights derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub t_uosl: f64,
    pub w_min: f64,
    entries: Vec<WeightEntry>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl WeightTable {
    pub fn from_entries(t_uosl: f64, w_min: f64, entries: Vec<WeightEntry>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Self {
            t_uosl,
            w_min,
            entries,
            index,
        }
    }

    /// Unit weight for every id.
    pub fn uniform<'a, I: IntoIterator<Item = &'a String>>(ids: I) -> Self {
        let entries = ids
            .into_iter()
            .map(|id| WeightEntry {
                id: id.clone(),
                uosl: 0.0,
                nuosl: 0.0,
                weight: 1.0,
            })
            .collect();
        Self::from_entries(1.0, DEFAULT_W_MIN, entries)
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&WeightEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn weight(&self, id: &str) -> Option<f64> {
        self.get(id).map(|e| e.weight)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids whose normalized score does not exceed the threshold.
    pub fn confident_ids(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.nuosl <= self.t_uosl)
            .map(|e| e.id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    pub normalization: Normalization,
    pub w_min: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::MinMax,
            w_min: DEFAULT_W_MIN,
        }
    }
}

/// Weights from min-max normalized uncertainty with the default floor.
pub fn compute_weights(scores: &[(String, f64)], t_uosl: f64) -> Result<WeightTable> {
    compute_weights_with(scores, t_uosl, WeightOptions::default())
}

/// `w = 1` where the normalized score is at most `t_uosl`, `1 - nuosl`
/// above it, floored at `w_min`.
pub fn compute_weights_with(scores: &[(String, f64)], t_uosl: f64, options: WeightOptions) -> Result<WeightTable> {
    if scores.is_empty() {
        return Err(DuetError::Argument("no uncertainty scores to weight".into()));
    }
    if let Some((id, s)) = scores.iter().find(|(_, s)| !(s.is_finite() && *s >= 0.0)) {
        return Err(DuetError::Argument(format!("invalid uncertainty {s} for {id}")));
    }
    if !(0.0..=1.0).contains(&t_uosl) {
        return Err(DuetError::Argument(format!("t_uosl must lie in [0, 1], got {t_uosl}")));
    }
    if !(options.w_min > 0.0 && options.w_min <= 1.0) {
        return Err(DuetError::Argument(format!(
            "w_min must lie in (0, 1], got {}",
            options.w_min
        )));
    }
    let normalize: Box<dyn Fn(f64) -> f64> = match options.normalization {
        Normalization::MinMax => {
            let min = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                Box::new(move |u| ((u - min) / (max - min)).clamp(0.0, 1.0))
            } else {
                Box::new(|_| 0.0)
            }
        }
        Normalization::LogK { k } => {
            if k < 2 {
                return Err(DuetError::Argument("log-k normalization needs k >= 2".into()));
            }
            let bound = (k as f64).ln();
            Box::new(move |u| (u / bound).clamp(0.0, 1.0))
        }
    };
    let entries = scores
        .iter()
        .map(|(id, u)| {
            let nuosl = normalize(*u);
            let raw = if nuosl > t_uosl { 1.0 - nuosl } else { 1.0 };
            WeightEntry {
                id: id.clone(),
                uosl: *u,
                nuosl,
                weight: raw.max(options.w_min),
            }
        })
        .collect();
    Ok(WeightTable::from_entries(t_uosl, options.w_min, entries))
}
