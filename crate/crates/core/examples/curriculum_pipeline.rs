//! The full pipeline against plain cross-entropy on 40% loss-ranked noise.
//!
//! `cargo run --release --example curriculum_pipeline -- [seed]`

use duet::curriculum::{run_baseline, run_pipeline, PipelineConfig};
use duet::datahub::{inject_noise, NoiseKind, NoiseSpec, SynthSpec};
use duet::evalkit::summarize_run;

fn main() -> duet::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(2), |s| s.parse()).expect("seed");
    let train = SynthSpec::new(vec![1818, 182], 8, 2.0, seed).generate()?;
    let test = SynthSpec::new(vec![1000, 100], 8, 2.0, 1000 + seed)
        .with_prefix("g")
        .generate()?;
    let noisy = inject_noise(&train, &NoiseSpec::new(NoiseKind::LossRankedAsymmetric, 0.4, seed))?;
    let cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };

    let run = run_pipeline(&noisy.dataset, Some(&test), &cfg)?;
    let base = run_baseline(&noisy.dataset, Some(&test), &cfg)?;
    println!(
        "clean set {} of {} training samples",
        run.clean_ids.len(),
        run.weights.len()
    );
    println!("epoch  phase       lr        loss    val_f1  test_f1 | baseline test_f1");
    for (p, b) in run.history.iter().zip(&base.history) {
        println!(
            "{:>5}  {:<10} {:.2e} {:>7.4}  {:.3}   {:.3}   | {:.3}",
            p.epoch,
            p.phase,
            p.lr,
            p.train_loss,
            p.val_macro_f1,
            p.test.as_ref().map_or(f64::NAN, |t| t.macro_f1),
            b.test.as_ref().map_or(f64::NAN, |t| t.macro_f1),
        );
    }
    for (name, history) in [("pipeline", &run.history), ("baseline", &base.history)] {
        let s = summarize_run(history)?;
        let f1 = s.get("test_macro_f1").expect("test metrics");
        println!(
            "{name}: test macro-F1 best {:.3}, mean of last three {:.3}, gap {:.3}",
            f1.best,
            f1.last,
            f1.gap()
        );
    }
    Ok(())
}
