//! Metrics on hand-made predictions and a best/last summary of a history.

use duet::evalkit::{auc, confusion_matrix, macro_prf, summarize_series, write_plot_csv, EpochRecord};

fn main() -> duet::Result<()> {
    let labels = [0, 0, 1, 1, 2, 2, 2];
    let preds = [0, 1, 1, 1, 2, 0, 2];
    println!("confusion {:?}", confusion_matrix(&preds, &labels, 3)?);
    let m = macro_prf(&preds, &labels, 3)?;
    println!(
        "macro recall {:.4} precision {:.4} f1 {:.4}",
        m.recall, m.precision, m.f1
    );

    let scores = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2];
    let positive = [false, false, true, true, true, false];
    println!("auc {:.4}", auc(&scores, &positive)?);

    let s = summarize_series("val_macro_f1", &[70.0, 80.0, 75.0, 74.0, 73.0])?;
    println!("B={} at epoch {} L={} gap={}", s.best, s.best_epoch, s.last, s.gap());

    let history: Vec<EpochRecord> = [0.61, 0.72, 0.70]
        .iter()
        .enumerate()
        .map(|(epoch, &f1)| EpochRecord {
            epoch,
            phase: "baseline".into(),
            lr: 3e-4,
            train_loss: 0.5 / (epoch + 1) as f64,
            val_macro_f1: f1,
            test: None,
        })
        .collect();
    write_plot_csv(&history, std::io::stdout())?;
    Ok(())
}
