use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpModel};
use crate::error::{DuetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Reduce-on-plateau for a metric that should increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's metric; returns true when the learning rate
    /// should be decayed.
    fn observe(&mut self, metric: f64) -> bool {
        match self.best {
            Some(best) if metric <= best => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.bad_epochs = 0;
                    return true;
                }
                false
            }
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
                false
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub plateau: PlateauScheduler,
}

impl Optimizer {
    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    /// Adam uses beta1 0.9, beta2 0.999, eps 1e-8. The plateau scheduler
    /// halves the rate after 5 non-improving epochs.
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) || (kind == OptimizerKind::Adam && lr == 0.0) {
            return Err(DuetError::Argument(format!("invalid learning rate {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            plateau: PlateauScheduler::new(0.5, 5),
        })
    }

    pub fn with_plateau(mut self, factor: f64, patience: usize) -> Self {
        self.plateau = PlateauScheduler::new(factor, patience);
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Non-finite gradients abort without modifying the
    /// model.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != model.layers.len()
            || grads.layers.iter().zip(&model.layers).any(|(g, l)| {
                g.weights.rows() != l.weights.rows()
                    || g.weights.cols() != l.weights.cols()
                    || g.bias.len() != l.bias.len()
            })
        {
            return Err(DuetError::Shape("gradient layout does not match model".into()));
        }
        if !grads.is_finite() {
            return Err(DuetError::Numeric(format!(
                "non-finite gradient at optimizer step {}",
                self.t + 1
            )));
        }
        let g = grads.flat();
        let mut params = model.parameters_flat();
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= self.lr * gi;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != g.len() {
                    self.m = vec![0.0; g.len()];
                    self.v = vec![0.0; g.len()];
                }
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..g.len() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        model.set_parameters_flat(&params)?;
        model.invalidate_cache();
        Ok(())
    }

    /// Epoch-boundary hook for the plateau scheduler. Returns true if the
    /// learning rate was decayed.
    pub fn report_metric(&mut self, metric: f64) -> bool {
        if self.plateau.observe(metric) {
            self.lr *= self.plateau.factor;
            true
        } else {
            false
        }
    }
}
