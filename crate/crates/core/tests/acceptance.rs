//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use common::{
    brute_cohen, brute_fleiss, config, finite_difference, imbalanced, jittered, max_relative_error, median, pair_auc,
    panel_scenario, random_matrix, SEEDS,
};
use duet::agreement::{cohen_kappa_quadratic, empirical_histogram, fleiss_kappa, iuod, uod};
use duet::curriculum::{run_baseline, run_pipeline, select_by_uod, PipelineConfig};
use duet::datahub::{AnnotationSet, Dataset, LabelSpace, Sample};
use duet::evalkit::{auc, summarize_run, EpochRecord};
use duet::mcuq::{uosl, McPredictionSet};
use duet::netcore::{mc_forward_full, softmax_in_place, Matrix, MlpModel};
use duet::objectives::{
    combined_loss, compute_weights, focal_loss, weighted_ce, LabeledBatch, LossConfig, WeightEntry, WeightTable,
};
use duet::seeding;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::Rng as _;

// Pinned tolerances.
const FD_EPS: f64 = 1e-5;
const FD_MAX_REL: f64 = 1e-4;
const FD_MIN_CASES: usize = 20;
const FD_BUDGET: Duration = Duration::from_secs(10);
const KAPPA_TOL: f64 = 1e-9;
const AUC_CASES: usize = 200;
const SEPARATION_WARMUP: usize = 3;
const SEPARATION_MIN_SEEDS: usize = 4;
const SEPARATION_MIN_AUC: f64 = 0.65;
const SEPARATION_BUDGET: Duration = Duration::from_secs(120);
const NOISE_RATE: f64 = 0.4;
const GAP_ALLOWANCE: f64 = 0.02;
const IMPROVEMENT_BUDGET: Duration = Duration::from_secs(600);
const HARM_ALLOWANCE: f64 = 0.01;
const MC_DRAWS: usize = 10_000;
const MC_TOL: f64 = 1e-2;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradients),
        ("formula oracles", formulas),
        ("uncertainty separation", separation),
        ("end-to-end improvement", improvement),
        ("do no harm", no_harm),
        ("panel vs majority vote", panel),
        ("determinism", determinism),
        ("invariant suites", invariants),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} ({}; {:.1}s)",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn final_test_f1(history: &[EpochRecord]) -> f64 {
    history
        .last()
        .and_then(|r| r.test.as_ref())
        .expect("test metrics")
        .macro_f1
}

fn test_gap(history: &[EpochRecord]) -> f64 {
    summarize_run(history)
        .unwrap()
        .get("test_macro_f1")
        .expect("test series")
        .gap()
}

/// Runs `f` for every seed on its own thread, in seed order.
fn per_seed<T: Send>(f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = SEEDS.iter().map(|&seed| s.spawn(move || f(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn fmt(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(",")
}

// 1 ---------------------------------------------------------------------

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = seeding::rng(2024);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for case in 0..5u64 {
        let model = jittered(MlpModel::new(&[4, 6, 5, 3], 0.3, 50 + case).unwrap(), case);
        let x = random_matrix(8, 4, &mut rng);
        let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..1.0)).collect();

        let mut check = |analytic: Vec<f64>, numeric: Vec<f64>| {
            worst = worst.max(max_relative_error(&analytic, &numeric, 1e-6));
            cases += 1;
        };

        for gamma in [0.0, 1.0, 2.0] {
            let mut m = model.clone();
            let p = m.forward(&x).unwrap();
            let out = focal_loss(&p, &y, gamma).unwrap();
            let analytic = m.backward(&x, &out.grad).unwrap().flat();
            let numeric = finite_difference(&model, FD_EPS, |m| {
                focal_loss(&m.forward(&x).unwrap(), &y, gamma).unwrap().loss
            });
            check(analytic, numeric);
        }

        let mut m = model.clone();
        let p = m.forward(&x).unwrap();
        let out = weighted_ce(&p, &y, &w).unwrap();
        let analytic = m.backward(&x, &out.grad).unwrap().flat();
        let numeric = finite_difference(&model, FD_EPS, |m| {
            weighted_ce(&m.forward(&x).unwrap(), &y, &w).unwrap().loss
        });
        check(analytic, numeric);

        // clean batch is the first half; weights keyed by id
        let ids: Vec<String> = (0..8).map(|i| format!("c{i}")).collect();
        let table = WeightTable::from_entries(
            0.5,
            0.01,
            ids.iter()
                .zip(&w)
                .map(|(id, &weight)| WeightEntry {
                    id: id.clone(),
                    uosl: 0.0,
                    nuosl: 0.0,
                    weight,
                })
                .collect(),
        );
        let cx = x.select_rows(&[0, 1, 2, 3]);
        let cy = &y[..4];
        let cfg = LossConfig {
            gamma: 2.0,
            alpha: 0.7,
            epoch_all: 5,
            t_uosl: 0.5,
        };
        for epoch_i in [1, 3, 5] {
            let clean = LabeledBatch {
                features: &cx,
                labels: cy,
                ids: &ids[..4],
            };
            let all = LabeledBatch {
                features: &x,
                labels: &y,
                ids: &ids,
            };
            let mut m = model.clone();
            let analytic = combined_loss(&mut m, &clean, &all, epoch_i, &cfg, &table)
                .unwrap()
                .grads
                .flat();
            let numeric = finite_difference(&model, FD_EPS, |m| {
                combined_loss(m, &clean, &all, epoch_i, &cfg, &table).unwrap().loss
            });
            check(analytic, numeric);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < FD_MAX_REL && cases >= FD_MIN_CASES && elapsed < FD_BUDGET,
        format!("{cases} cases, max relative error {worst:.2e}"),
    )
}

// 2 ---------------------------------------------------------------------

fn formulas() -> Verdict {
    let mut failures = Vec::new();
    fn expect(failures: &mut Vec<String>, name: &str, got: f64, want: f64, tol: f64) {
        if (got - want).abs() > tol {
            failures.push(format!("{name}: {got} != {want}"));
        }
    }

    let pair = AnnotationSet::from_labels(&[0, 1]);
    let six = AnnotationSet::from_labels(&[0, 0, 0, 1, 1, 1]);
    expect(
        &mut failures,
        "uod [0,1]",
        uod(&empirical_histogram(&pair, 2).unwrap()),
        0.5,
        1e-15,
    );
    expect(
        &mut failures,
        "uod [0,0,0,1,1,1]",
        uod(&empirical_histogram(&six, 2).unwrap()),
        0.5,
        1e-15,
    );
    expect(&mut failures, "iuod [0,1]", iuod(&pair, 2, 1.0).unwrap(), 0.5, 1e-15);
    expect(
        &mut failures,
        "iuod [0,0,0,1,1,1]",
        iuod(&six, 2, 1.0).unwrap(),
        1.5,
        1e-15,
    );

    let mut rng = seeding::rng(77);
    let mut auc_mismatch = 0;
    for _ in 0..AUC_CASES {
        let (scores, labels) = loop {
            let scores: Vec<f64> = (0..50).map(|_| f64::from(rng.random_range(0..20u32)) / 4.0).collect();
            let labels: Vec<bool> = (0..50).map(|_| rng.random_bool(0.3)).collect();
            if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
                break (scores, labels);
            }
        };
        if auc(&scores, &labels).unwrap() != pair_auc(&scores, &labels) {
            auc_mismatch += 1;
        }
    }
    if auc_mismatch > 0 {
        failures.push(format!("auc differs from pair counting in {auc_mismatch} cases"));
    }

    // hand-worked: no better than chance, and a full reversal on three classes
    expect(
        &mut failures,
        "cohen 2x2",
        cohen_kappa_quadratic(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap(),
        0.0,
        KAPPA_TOL,
    );
    expect(
        &mut failures,
        "cohen reversed",
        cohen_kappa_quadratic(&[0, 1, 2], &[2, 1, 0], 3).unwrap(),
        -1.0,
        KAPPA_TOL,
    );
    expect(
        &mut failures,
        "fleiss opposite",
        fleiss_kappa(&vec![vec![1, 1]; 4]).unwrap(),
        -1.0,
        KAPPA_TOL,
    );
    // P = 7/9, Pe = 41/81
    expect(
        &mut failures,
        "fleiss 3x3",
        fleiss_kappa(&[vec![3, 0], vec![0, 3], vec![2, 1]]).unwrap(),
        0.55,
        KAPPA_TOL,
    );
    for _ in 0..50 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(5..40);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let b: Vec<usize> = a
            .iter()
            .map(|&x| {
                if rng.random_bool(0.6) {
                    x
                } else {
                    rng.random_range(0..k)
                }
            })
            .collect();
        if let Ok(fast) = cohen_kappa_quadratic(&a, &b, k) {
            expect(&mut failures, "cohen random", fast, brute_cohen(&a, &b, k), KAPPA_TOL);
        }
        let raters = rng.random_range(2..7);
        let counts: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut row = vec![0; k];
                for _ in 0..raters {
                    row[rng.random_range(0..k)] += 1;
                }
                row
            })
            .collect();
        if let Ok(fast) = fleiss_kappa(&counts) {
            expect(&mut failures, "fleiss random", fast, brute_fleiss(&counts), KAPPA_TOL);
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("uod/iuod examples, {AUC_CASES} auc cases, kappa hand and brute-force checks")
        } else {
            failures.join("; ")
        },
    )
}

// 3 ---------------------------------------------------------------------

fn separation() -> Verdict {
    let start = Instant::now();
    let results = per_seed(|seed| {
        let (noisy, _) = imbalanced(seed, NOISE_RATE);
        let cfg = PipelineConfig {
            warmup_epochs: SEPARATION_WARMUP,
            total_epochs: 1,
            epoch_all: 1,
            ..config(seed)
        };
        let run = run_pipeline(&noisy.dataset, None, &cfg).unwrap();
        let table = &run.weight_history[0];
        let scores: Vec<f64> = table.entries().iter().map(|e| e.uosl).collect();
        let corrupted: Vec<bool> = table.entries().iter().map(|e| noisy.flipped.contains(&e.id)).collect();
        let mean = |flag: bool| {
            let v: Vec<f64> = scores
                .iter()
                .zip(&corrupted)
                .filter(|p| *p.1 == flag)
                .map(|p| *p.0)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        (mean(true) > mean(false), auc(&scores, &corrupted).unwrap())
    });
    let above = results.iter().filter(|r| r.0).count();
    let aucs: Vec<f64> = results.iter().map(|r| r.1).collect();
    let pass = above >= SEPARATION_MIN_SEEDS
        && aucs.iter().all(|&a| a >= SEPARATION_MIN_AUC)
        && start.elapsed() < SEPARATION_BUDGET;
    verdict(
        pass,
        format!("corrupted mean above clean in {above}/5 seeds, auc {}", fmt(&aucs)),
    )
}

// 4 ---------------------------------------------------------------------

fn paired(make: impl Fn(u64) -> (Dataset, Dataset) + Sync) -> Vec<(f64, f64, f64, f64)> {
    per_seed(|seed| {
        let (train, test) = make(seed);
        let cfg = config(seed);
        let p = run_pipeline(&train, Some(&test), &cfg).unwrap();
        let b = run_baseline(&train, Some(&test), &cfg).unwrap();
        (
            final_test_f1(&p.history),
            final_test_f1(&b.history),
            test_gap(&p.history),
            test_gap(&b.history),
        )
    })
}

fn improvement() -> Verdict {
    let start = Instant::now();
    let r = paired(|seed| {
        let (noisy, test) = imbalanced(seed, NOISE_RATE);
        (noisy.dataset, test)
    });
    let pf: Vec<f64> = r.iter().map(|x| x.0).collect();
    let bf: Vec<f64> = r.iter().map(|x| x.1).collect();
    let pg: Vec<f64> = r.iter().map(|x| x.2).collect();
    let bg: Vec<f64> = r.iter().map(|x| x.3).collect();
    let (mp, mb, gp, gb) = (median(&pf), median(&bf), median(&pg), median(&bg));
    verdict(
        mp > mb && gp <= gb + GAP_ALLOWANCE && start.elapsed() < IMPROVEMENT_BUDGET,
        format!(
            "macro-F1 median {mp:.3} vs baseline {mb:.3} [{} | {}], B-L gap {gp:.3} vs {gb:.3}",
            fmt(&pf),
            fmt(&bf)
        ),
    )
}

// 5 ---------------------------------------------------------------------

fn no_harm() -> Verdict {
    let r = paired(|seed| {
        let (clean, test) = imbalanced(seed, 0.0);
        assert!(clean.flipped.is_empty());
        (clean.dataset, test)
    });
    let pf: Vec<f64> = r.iter().map(|x| x.0).collect();
    let bf: Vec<f64> = r.iter().map(|x| x.1).collect();
    let (mp, mb) = (median(&pf), median(&bf));
    verdict(
        mp >= mb - HARM_ALLOWANCE,
        format!(
            "macro-F1 median {mp:.3} vs baseline {mb:.3} [{} | {}]",
            fmt(&pf),
            fmt(&bf)
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn panel() -> Verdict {
    let r = paired(panel_scenario);
    let pf: Vec<f64> = r.iter().map(|x| x.0).collect();
    let bf: Vec<f64> = r.iter().map(|x| x.1).collect();
    let (mp, mb) = (median(&pf), median(&bf));
    verdict(
        mp > mb,
        format!(
            "macro-F1 median {mp:.3} vs majority vote {mb:.3} [{} | {}]",
            fmt(&pf),
            fmt(&bf)
        ),
    )
}

// 7 ---------------------------------------------------------------------

fn duet(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Verdict {
    let tmp = tempfile::TempDir::new().unwrap();
    let dir = tmp.path();
    let cfg = serde_json::json!({
        "seed": 11,
        "synth": { "n_per_class": [400, 80], "dim": 8, "separation": 2.0, "seed": 11 },
        "noise": { "kind": "loss_ranked_asymmetric", "rate": 0.4, "seed": 11 },
        "pipeline": { "total_epochs": 6 }
    });
    std::fs::write(dir.join("run.json"), cfg.to_string()).unwrap();
    let mut ok = duet(&["synth", "-c", "run.json", "--run-dir", "s"], dir)
        && duet(
            &["noise", "-c", "run.json", "-i", "s/manifest.jsonl", "--run-dir", "n"],
            dir,
        );
    for run in ["a", "b"] {
        ok &= duet(
            &["train", "-c", "run.json", "-i", "n/manifest.jsonl", "--run-dir", run],
            dir,
        );
    }
    // replay from the written snapshot alone
    std::fs::copy(dir.join("a/config.json"), dir.join("snapshot.json")).unwrap();
    let before: BTreeMap<&str, Vec<u8>> = ["metrics.jsonl", "best.json", "last.json", "weights.jsonl"]
        .into_iter()
        .map(|f| (f, std::fs::read(dir.join("a").join(f)).unwrap_or_default()))
        .collect();
    ok &= duet(&["train", "-c", "snapshot.json"], dir);
    let mut differing = Vec::new();
    for (file, a) in &before {
        let b = std::fs::read(dir.join("b").join(file)).unwrap_or_default();
        let replay = std::fs::read(dir.join("a").join(file)).unwrap_or_default();
        if a.is_empty() || *a != b || *a != replay {
            differing.push(*file);
        }
    }
    verdict(
        ok && differing.is_empty(),
        if differing.is_empty() {
            "metrics logs and checkpoints bit-identical across two runs and a snapshot replay".into()
        } else {
            format!("commands ok={ok}, differing: {}", differing.join(","))
        },
    )
}

// 8 ---------------------------------------------------------------------

fn invariants() -> Verdict {
    let mut failures = Vec::new();
    let mut run = |name: &str, result: Result<(), String>| {
        if let Err(e) = result {
            failures.push(format!("{name}: {e}"));
        }
    };
    let runner = || {
        TestRunner::new(ProptestConfig {
            failure_persistence: None,
            ..ProptestConfig::with_cases(256)
        })
    };

    run(
        "uosl bounds",
        runner()
            .run(
                &(2usize..7).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(-8.0..8.0f64, k), 1..16)),
                |logits| {
                    let k = logits[0].len();
                    let draws = logits
                        .into_iter()
                        .map(|mut r| {
                            softmax_in_place(&mut r);
                            r
                        })
                        .collect();
                    let u = uosl(&McPredictionSet::new("x", draws).unwrap()).unwrap();
                    prop_assert!(u >= 0.0 && u <= (k as f64).ln() + 1e-12);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    run(
        "uod range",
        runner()
            .run(
                &(2usize..7).prop_flat_map(|k| (Just(k), prop::collection::vec(0..k, 1..20))),
                |(k, v)| {
                    let u = uod(&empirical_histogram(&AnnotationSet::from_labels(&v), k).unwrap());
                    prop_assert!(u >= 0.0 && u <= 1.0 - 1.0 / k as f64 + 1e-12);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    run(
        "weight monotonicity",
        runner()
            .run(&(prop::collection::vec(0.0..3.0f64, 1..40), 0.0..=1.0f64), |(s, t)| {
                let scores: Vec<(String, f64)> = s.iter().enumerate().map(|(i, &u)| (format!("s{i}"), u)).collect();
                let table = compute_weights(&scores, t).unwrap();
                for a in table.entries() {
                    for b in table.entries() {
                        prop_assert!(!(a.uosl > b.uosl && a.weight > b.weight));
                    }
                    prop_assert!(a.nuosl > t || a.weight == 1.0);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    run(
        "selection partition",
        runner()
            .run(
                &(
                    prop::collection::vec(prop::collection::vec(0usize..3, 0..6), 1..30),
                    0.0..=0.7f64,
                ),
                |(panels, t)| {
                    let samples = panels
                        .iter()
                        .enumerate()
                        .map(|(i, v)| Sample {
                            id: format!("p{i:02}"),
                            features: vec![0.0, 1.0],
                            gold_label: None,
                            working_label: None,
                            annotations: AnnotationSet::from_labels(v),
                        })
                        .collect();
                    let ds = Dataset::new(LabelSpace::indexed(3).unwrap(), 2, samples).unwrap();
                    if let Ok(out) = select_by_uod(&ds, t, 1.0) {
                        prop_assert!(out.check_partition(&ds).is_ok());
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    // d=1 -> 1 -> 2 with every bias and one output weight zeroed: two free parameters
    let mut model = MlpModel::new(&[1, 1, 2], 0.3, 5).unwrap();
    model.set_parameters_flat(&[0.8, 0.0, 0.6, 0.0, 0.0, 0.0]).unwrap();
    let x = Matrix::from_rows(&[vec![0.5], vec![1.0], vec![-0.4], vec![1.5]]).unwrap();
    let eval = model.logits(&x).unwrap();
    let draws = mc_forward_full(&model, &x, MC_DRAWS, 99).unwrap();
    let mut worst: f64 = 0.0;
    for (i, e) in eval.data().iter().enumerate() {
        let mean = draws.iter().map(|(l, _)| l.data()[i]).sum::<f64>() / MC_DRAWS as f64;
        worst = worst.max((mean - e).abs());
    }
    run(
        "mc convergence",
        if worst < MC_TOL {
            Ok(())
        } else {
            Err(format!("max deviation {worst}"))
        },
    );

    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("4 property suites x 256 cases, mc mean deviation {worst:.1e} at T={MC_DRAWS}")
        } else {
            failures.join("; ")
        },
    )
}
