//! Gaussian-cluster data with loss-ranked label noise.
//!
//! `cargo run --release --example synth_and_noise -- [rate]`

use duet::datahub::{inject_noise, write_manifest_to, NoiseKind, NoiseSpec, SynthSpec};

fn main() -> duet::Result<()> {
    let rate: f64 = std::env::args().nth(1).map_or(Ok(0.4), |s| s.parse()).expect("rate");
    let clean = SynthSpec::new(vec![1818, 182], 8, 2.0, 7).generate()?;
    println!(
        "{} samples, gold class counts {:?}",
        clean.len(),
        clean.class_counts_gold()
    );

    for kind in [
        NoiseKind::Symmetric,
        NoiseKind::PairFlip,
        NoiseKind::LossRankedAsymmetric,
    ] {
        let out = inject_noise(&clean, &NoiseSpec::new(kind, rate, 7))?;
        let mut per_class = vec![0usize; clean.k()];
        for s in &out.dataset.samples {
            if out.flipped.contains(&s.id) {
                per_class[s.gold_label.unwrap_or(0)] += 1;
            }
        }
        println!("{kind:?}: {} flipped, per gold class {per_class:?}", out.flipped.len());
    }

    // the first lines of the manifest format
    let mut buf = Vec::new();
    write_manifest_to(
        &clean.filtered(|s| s.id.ends_with("00000") || s.id.ends_with("00001")),
        &mut buf,
    )?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}
