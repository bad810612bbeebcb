//! A simulated six-rater panel: per-sample disagreement, majority votes,
//! pairwise quadratic kappa and Fleiss' kappa.

use duet::agreement::{agreement_report, AgreementRecord};
use duet::curriculum::select_by_uod;
use duet::datahub::{simulate_panel, AnnotatorProfile, SynthSpec};

fn main() -> duet::Result<()> {
    let k = 4;
    let ds = SynthSpec::new(vec![80, 50, 30, 20], 4, 2.0, 3).generate()?;
    let profiles = [
        AnnotatorProfile::over_grading("senior", k, 0.05, 0.05, 1.0)?,
        AnnotatorProfile::over_grading("r1", k, 0.3, 0.1, 0.9)?,
        AnnotatorProfile::over_grading("r2", k, 0.4, 0.1, 0.8)?,
        AnnotatorProfile::with_accuracy("r3", k, 0.7, 0.7)?,
        AnnotatorProfile::with_accuracy("r4", k, 0.6, 0.6)?,
        AnnotatorProfile::with_accuracy("novice", k, 0.5, 0.5)?,
    ];
    let panel = simulate_panel(&ds, &profiles, 11)?;

    for r in agreement_report(&panel, 1.0, 0)? {
        match r {
            AgreementRecord::Sample {
                id,
                n,
                uod,
                iuod,
                majority,
                tie,
            } if id.ends_with('0') => {
                println!("{id}: n={n} uod={uod:.3} iuod={iuod:.3} majority={majority} tie={tie}")
            }
            AgreementRecord::Sample { .. } => {}
            AgreementRecord::Pair {
                a,
                b,
                n_items,
                cohen_kappa_quadratic,
            } => {
                println!("kappa {a}/{b} on {n_items}: {cohen_kappa_quadratic:?}")
            }
            AgreementRecord::VsMajority {
                annotator,
                cohen_kappa_quadratic,
                ..
            } => {
                println!("kappa {annotator}/majority: {cohen_kappa_quadratic:?}")
            }
            AgreementRecord::Panel {
                raters,
                n_items,
                fleiss_kappa,
            } => {
                println!("fleiss over {n_items} samples with {raters} raters: {fleiss_kappa:?}")
            }
        }
    }

    let sel = select_by_uod(&panel, 0.5, 1.0)?;
    println!(
        "t_uod=0.5: {} unanimous, {} routed, {} eliminated",
        sel.selected.len(),
        sel.routed.len(),
        sel.eliminated.len()
    );
    Ok(())
}
