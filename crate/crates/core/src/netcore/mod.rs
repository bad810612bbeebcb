//! Small feed-forward classifier with dropout, exact backpropagation,
//! Adam/SGD optimizers, and seeded Monte-Carlo dropout inference.

mod checkpoint;
mod matrix;
mod mlp;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use matrix::{softmax_in_place, Matrix};
pub use mlp::{argmax, DropoutMasks, Gradients, Layer, MlpModel, Mode};
pub use optim::{Optimizer, OptimizerKind, PlateauScheduler};

use crate::error::{DuetError, Result};
use crate::seeding;

/// `T` stochastic forward passes with dropout active, each returning a
/// `batch x k` probability matrix. Masks come from a generator seeded by
/// `seed` alone, so the result depends only on `(model, batch, t, seed)`.
pub fn mc_forward(model: &MlpModel, batch: &Matrix, t: usize, seed: u64) -> Result<Vec<Matrix>> {
    Ok(mc_forward_full(model, batch, t, seed)?
        .into_iter()
        .map(|(_, probs)| probs)
        .collect())
}

/// Like [`mc_forward`] but keeps the logits of every draw.
pub fn mc_forward_full(model: &MlpModel, batch: &Matrix, t: usize, seed: u64) -> Result<Vec<(Matrix, Matrix)>> {
    if t < 2 {
        return Err(DuetError::Argument(format!("need at least 2 MC draws, got {t}")));
    }
    let mut rng = seeding::rng(seed);
    (0..t).map(|_| model.stochastic_pass(batch, &mut rng)).collect()
}
