//! Warm up a dropout MLP on noisy labels, then score every sample by the
//! entropy of its MC-dropout mean prediction and turn scores into weights.

use duet::curriculum::{warmup, TrainingSet};
use duet::datahub::{inject_noise, NoiseKind, NoiseSpec, SynthSpec};
use duet::evalkit::auc;
use duet::mcuq::{rank_by_uncertainty, uosl_table};
use duet::netcore::{MlpModel, Optimizer};
use duet::objectives::compute_weights;

fn main() -> duet::Result<()> {
    let clean = SynthSpec::new(vec![1818, 182], 8, 2.0, 1).generate()?;
    let noisy = inject_noise(&clean, &NoiseSpec::new(NoiseKind::LossRankedAsymmetric, 0.4, 1))?;
    let ds = &noisy.dataset;

    let set = TrainingSet::new(
        ds.samples.iter().map(|s| s.id.clone()).collect(),
        ds.samples.iter().map(|s| s.features.clone()).collect(),
        ds.samples.iter().map(|s| s.working_label.unwrap()).collect(),
    )?;
    let mut model = MlpModel::new(&[8, 64, 64, 2], 0.3, 1)?;
    let mut opt = Optimizer::adam(3e-4)?;
    let report = warmup(&mut model, &set, 3, 16, &mut opt, 1)?;
    println!("warmup loss per epoch: {:?}", report.loss_history);

    let table = uosl_table(&model, ds, 30, 1)?;
    let scores: Vec<f64> = table.scores.iter().map(|s| s.1).collect();
    let corrupted: Vec<bool> = table.scores.iter().map(|s| noisy.flipped.contains(&s.0)).collect();
    println!(
        "AUC of uncertainty against corrupted ids: {:.3}",
        auc(&scores, &corrupted)?
    );

    let ranked = rank_by_uncertainty(&table.scores);
    let top = &ranked[ranked.len() - 200..];
    let hits = top.iter().filter(|id| noisy.flipped.contains(*id)).count();
    println!("corrupted among the 200 most uncertain: {hits}");

    let weights = compute_weights(&table.scores, 0.8)?;
    let mean = |flag: bool| {
        let w: Vec<f64> = weights
            .entries()
            .iter()
            .filter(|e| noisy.flipped.contains(&e.id) == flag)
            .map(|e| e.weight)
            .collect();
        w.iter().sum::<f64>() / w.len() as f64
    };
    println!("mean weight: corrupted {:.3}, clean {:.3}", mean(true), mean(false));
    Ok(())
}
