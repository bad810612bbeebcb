//! Analytic gradients of the combined curriculum loss against central
//! finite differences, with dropout masks frozen by cloning the model.

use duet::netcore::{Matrix, MlpModel};
use duet::objectives::{combined_loss, LabeledBatch, LossConfig, WeightEntry, WeightTable};
use duet::seeding;
use rand::Rng as _;

fn main() -> duet::Result<()> {
    let mut rng = seeding::rng(5);
    let mut model = MlpModel::new(&[3, 8, 8, 3], 0.3, 5)?;
    // move biases off zero so no pre-activation sits exactly on a ReLU kink
    let p: Vec<f64> = model
        .parameters_flat()
        .iter()
        .map(|v| v + rng.random_range(-0.1..0.1))
        .collect();
    model.set_parameters_flat(&p)?;

    let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let ids: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
    let weights = WeightTable::from_entries(
        0.5,
        0.01,
        ids.iter()
            .enumerate()
            .map(|(i, id)| WeightEntry {
                id: id.clone(),
                uosl: 0.0,
                nuosl: 0.0,
                weight: 0.2 + 0.15 * i as f64,
            })
            .collect(),
    );
    let clean_x = x.select_rows(&[0, 1, 2]);
    let clean = LabeledBatch {
        features: &clean_x,
        labels: &y[..3],
        ids: &ids[..3],
    };
    let all = LabeledBatch {
        features: &x,
        labels: &y,
        ids: &ids,
    };
    let cfg = LossConfig::default();

    for epoch_i in [0, 2, 5] {
        let out = combined_loss(&mut model.clone(), &clean, &all, epoch_i, &cfg, &weights)?;
        let analytic = out.grads.flat();
        let base = model.parameters_flat();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let at = |d: f64| -> duet::Result<f64> {
                let mut m = model.clone();
                let mut q = base.clone();
                q[i] += d;
                m.set_parameters_flat(&q)?;
                Ok(combined_loss(&mut m, &clean, &all, epoch_i, &cfg, &weights)?.loss)
            };
            let numeric = (at(eps)? - at(-eps)?) / (2.0 * eps);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        println!(
            "epoch_i={epoch_i} beta={:.2} loss={:.5} params={} max relative error {worst:.2e}",
            out.beta,
            out.loss,
            base.len()
        );
    }
    Ok(())
}
