//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use duet::curriculum::PipelineConfig;
use duet::datahub::{
    inject_noise, simulate_panel, AnnotatorProfile, Dataset, NoiseKind, NoiseOutcome, NoiseSpec, SynthSpec,
};
use duet::netcore::{Matrix, MlpModel};
use duet::seeding;
use rand::Rng as _;

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// 2-class, 10:1, z = 2000, d = 8.
pub const IMBALANCED_TRAIN: [usize; 2] = [1818, 182];
pub const IMBALANCED_TEST: [usize; 2] = [1000, 100];
pub const DIM: usize = 8;
pub const SEPARATION: f64 = 2.0;

pub fn imbalanced(seed: u64, rate: f64) -> (NoiseOutcome, Dataset) {
    let train = SynthSpec::new(IMBALANCED_TRAIN.to_vec(), DIM, SEPARATION, seed)
        .generate()
        .unwrap();
    let test = SynthSpec::new(IMBALANCED_TEST.to_vec(), DIM, SEPARATION, 1000 + seed)
        .with_prefix("g")
        .generate()
        .unwrap();
    let noisy = inject_noise(&train, &NoiseSpec::new(NoiseKind::LossRankedAsymmetric, rate, seed)).unwrap();
    (noisy, test)
}

pub const PANEL_TRAIN: [usize; 4] = [800, 500, 300, 200];
pub const PANEL_TEST: [usize; 4] = [400, 250, 150, 100];

/// Six raters of decreasing experience, all tending to grade one class
/// too high, with partial coverage below the senior rater.
pub fn panel_profiles(k: usize) -> Vec<AnnotatorProfile> {
    [
        ("senior", 0.05, 0.05, 1.0),
        ("r1", 0.30, 0.10, 0.9),
        ("r2", 0.40, 0.10, 0.8),
        ("r3", 0.50, 0.15, 0.7),
        ("r4", 0.50, 0.20, 0.6),
        ("novice", 0.60, 0.20, 0.5),
    ]
    .iter()
    .map(|&(id, bias, err, cov)| AnnotatorProfile::over_grading(id, k, bias, err, cov).unwrap())
    .collect()
}

pub fn panel_scenario(seed: u64) -> (Dataset, Dataset) {
    let train = SynthSpec::new(PANEL_TRAIN.to_vec(), DIM, SEPARATION, seed)
        .generate()
        .unwrap();
    let test = SynthSpec::new(PANEL_TEST.to_vec(), DIM, SEPARATION, 1000 + seed)
        .with_prefix("g")
        .generate()
        .unwrap();
    let panel = simulate_panel(&train, &panel_profiles(4), seed).unwrap();
    (panel, test)
}

pub fn config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        ..PipelineConfig::default()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut seeding::Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Adds uniform noise to every parameter. Freshly built models have zero
/// biases, so a sample whose activations are all dropped sits exactly on a
/// ReLU kink in the next layer, where central differences are meaningless.
pub fn jittered(mut model: MlpModel, seed: u64) -> MlpModel {
    let mut rng = seeding::rng(seed);
    let p: Vec<f64> = model
        .parameters_flat()
        .iter()
        .map(|v| v + rng.random_range(-0.1..0.1))
        .collect();
    model.set_parameters_flat(&p).unwrap();
    model
}

/// Central differences of `loss` with respect to every parameter of
/// `model`. `loss` receives a fresh clone, so the dropout generator state
/// (and hence every mask) is identical across evaluations.
pub fn finite_difference<F>(model: &MlpModel, eps: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&mut MlpModel) -> f64,
{
    let base = model.parameters_flat();
    (0..base.len())
        .map(|i| {
            let mut eval = |delta: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[i] += delta;
                m.set_parameters_flat(&p).unwrap();
                loss(&mut m)
            };
            (eval(eps) - eval(-eps)) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// AUC by counting every positive/negative pair.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Quadratic-weighted kappa as `1 - sum(w O) / sum(w E)` with the
/// observed and chance-expected tables built element by element.
pub fn brute_cohen(a: &[usize], b: &[usize], k: usize) -> f64 {
    let n = a.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64) - (j as f64)).powi(2) / ((k - 1) as f64).powi(2);
            let observed = a.iter().zip(b).filter(|(x, y)| **x == i && **y == j).count() as f64;
            let ra = a.iter().filter(|x| **x == i).count() as f64;
            let rb = b.iter().filter(|y| **y == j).count() as f64;
            num += w * observed;
            den += w * ra * rb / n;
        }
    }
    1.0 - num / den
}

/// Fleiss' kappa from per-item rater pairs: agreement as the fraction of
/// agreeing ordered rater pairs, chance from pooled category shares.
pub fn brute_fleiss(counts: &[Vec<usize>]) -> f64 {
    let n_items = counts.len() as f64;
    let raters: usize = counts[0].iter().sum();
    let k = counts[0].len();
    let mut p_bar = 0.0;
    for row in counts {
        let mut agree = 0usize;
        for &nc in row {
            for r1 in 0..nc {
                for r2 in 0..nc {
                    if r1 != r2 {
                        agree += 1;
                    }
                }
            }
        }
        p_bar += agree as f64 / (raters * (raters - 1)) as f64;
    }
    p_bar /= n_items;
    let total = n_items * raters as f64;
    let p_e: f64 = (0..k)
        .map(|c| {
            let share = counts.iter().map(|r| r[c]).sum::<usize>() as f64 / total;
            share * share
        })
        .sum();
    (p_bar - p_e) / (1.0 - p_e)
}
