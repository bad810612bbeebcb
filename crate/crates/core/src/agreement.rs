//! Annotator disagreement: empirical vote histograms, UoD (Gini impurity of
//! the histogram), iUoD (UoD scaled by the smallest observed class count),
//! seeded majority vote, and agreement statistics.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::datahub::{AnnotationSet, Dataset, Sample};
use crate::error::{DuetError, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalHistogram {
    pub probs: Vec<f64>,
    pub n: usize,
}

pub fn empirical_histogram(annotations: &AnnotationSet, k: usize) -> Result<EmpiricalHistogram> {
    let n = annotations.n();
    if n == 0 {
        return Err(DuetError::EmptyAnnotations { id: String::new() });
    }
    let counts = annotations.counts(k)?;
    Ok(EmpiricalHistogram {
        probs: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n,
    })
}

/// `1 - sum_j p_j^2`.
pub fn uod(hist: &EmpiricalHistogram) -> f64 {
    // clamp guards against a -0.0 / 1e-17 underflow on one-hot histograms
    (1.0 - hist.probs.iter().map(|p| p * p).sum::<f64>()).max(0.0)
}

/// Smallest vote count among classes that received at least one vote.
pub fn min_observed_count(annotations: &AnnotationSet, k: usize) -> Result<usize> {
    let counts = annotations.counts(k)?;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .min()
        .ok_or(DuetError::EmptyAnnotations { id: String::new() })
}

/// `min_count^eta * uod`, with the minimum over classes that received votes.
pub fn iuod(annotations: &AnnotationSet, k: usize, eta: f64) -> Result<f64> {
    let hist = empirical_histogram(annotations, k)?;
    let factor = min_observed_count(annotations, k)? as f64;
    Ok(factor.powf(eta) * uod(&hist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementScore {
    pub uod: f64,
    pub iuod: f64,
    pub min_votes: usize,
    pub eta: f64,
    pub n: usize,
    /// True for the single-vote sentinel (`uod = iuod = 1`).
    pub single: bool,
}

/// Disagreement for one sample. A single vote yields the sentinel score 1.
pub fn disagreement_score(sample: &Sample, k: usize, eta: f64) -> Result<DisagreementScore> {
    let ann = &sample.annotations;
    match ann.n() {
        0 => Err(DuetError::EmptyAnnotations { id: sample.id.clone() }),
        1 => Ok(DisagreementScore {
            uod: 1.0,
            iuod: 1.0,
            min_votes: 1,
            eta,
            n: 1,
            single: true,
        }),
        n => {
            let hist = empirical_histogram(ann, k)?;
            let min_votes = min_observed_count(ann, k)?;
            let u = uod(&hist);
            Ok(DisagreementScore {
                uod: u,
                iuod: (min_votes as f64).powf(eta) * u,
                min_votes,
                eta,
                n,
                single: false,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub label: usize,
    /// Classes tied for the top count (length 1 when there is no tie).
    pub tied: Vec<usize>,
    pub tie_break_seed: u64,
}

impl MajorityVote {
    pub fn was_tie(&self) -> bool {
        self.tied.len() > 1
    }
}

/// Plurality label; ties resolved uniformly at random from `tie_break_seed`.
pub fn majority_vote(annotations: &AnnotationSet, k: usize, tie_break_seed: u64) -> Result<MajorityVote> {
    if annotations.is_empty() {
        return Err(DuetError::EmptyAnnotations { id: String::new() });
    }
    let counts = annotations.counts(k)?;
    let top = *counts.iter().max().expect("k >= 1");
    let tied: Vec<usize> = (0..k).filter(|&c| counts[c] == top).collect();
    let label = if tied.len() == 1 {
        tied[0]
    } else {
        let mut rng = seeding::rng(tie_break_seed);
        *tied.choose(&mut rng).expect("non-empty")
    };
    Ok(MajorityVote {
        label,
        tied,
        tie_break_seed,
    })
}

/// Tie-break seed for a sample, independent of its position in the dataset.
pub fn sample_tie_seed(root: u64, sample_id: &str) -> u64 {
    seeding::derive_seed(root, &format!("tie/{sample_id}"))
}

/// Quadratic-weighted Cohen's kappa between two raters over `k` ordered
/// classes. Two constant raters on the same class are defined as 1.
pub fn cohen_kappa_quadratic(rater_a: &[usize], rater_b: &[usize], k: usize) -> Result<f64> {
    if rater_a.len() != rater_b.len() {
        return Err(DuetError::Argument(format!(
            "rater lists differ in length: {} vs {}",
            rater_a.len(),
            rater_b.len()
        )));
    }
    if rater_a.len() < 2 {
        return Err(DuetError::Argument("kappa needs at least 2 paired labels".into()));
    }
    if k < 2 {
        return Err(DuetError::Argument("kappa needs k >= 2".into()));
    }
    if let Some(bad) = rater_a.iter().chain(rater_b).find(|&&l| l >= k) {
        return Err(DuetError::Argument(format!("label {bad} outside {k} classes")));
    }
    let n = rater_a.len() as f64;
    let mut observed = vec![0.0; k * k];
    let mut row = vec![0.0; k];
    let mut col = vec![0.0; k];
    for (&a, &b) in rater_a.iter().zip(rater_b) {
        observed[a * k + b] += 1.0;
        row[a] += 1.0;
        col[b] += 1.0;
    }
    let denom_k = ((k - 1) * (k - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64) - (j as f64)).powi(2) / denom_k;
            num += w * observed[i * k + j];
            den += w * row[i] * col[j] / n;
        }
    }
    if den == 0.0 {
        let constant_same = row.iter().filter(|&&c| c > 0.0).count() == 1 && row == col;
        return if constant_same {
            Ok(1.0)
        } else {
            Err(DuetError::Degenerate("zero expected weighted disagreement".into()))
        };
    }
    Ok(1.0 - num / den)
}

/// Fleiss' kappa over a `samples x classes` count matrix where every row
/// sums to the same number of raters.
pub fn fleiss_kappa(vote_matrix: &[Vec<usize>]) -> Result<f64> {
    let first = vote_matrix
        .first()
        .ok_or_else(|| DuetError::Argument("empty vote matrix".into()))?;
    let k = first.len();
    let raters: usize = first.iter().sum();
    if raters < 2 {
        return Err(DuetError::Argument("fleiss kappa needs at least 2 raters".into()));
    }
    for (i, row) in vote_matrix.iter().enumerate() {
        if row.len() != k {
            return Err(DuetError::Argument(format!("row {i} has {} classes", row.len())));
        }
        let s: usize = row.iter().sum();
        if s != raters {
            return Err(DuetError::Argument(format!(
                "row {i} has {s} ratings, expected {raters}"
            )));
        }
    }
    let n_items = vote_matrix.len() as f64;
    let r = raters as f64;
    let mut class_totals = vec![0.0; k];
    let mut p_bar = 0.0;
    for row in vote_matrix {
        let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
        p_bar += (sq - r) / (r * (r - 1.0));
        for (t, &c) in class_totals.iter_mut().zip(row) {
            *t += c as f64;
        }
    }
    p_bar /= n_items;
    let p_e: f64 = class_totals
        .iter()
        .map(|t| {
            let p = t / (n_items * r);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return if (1.0 - p_bar).abs() < 1e-15 {
            Ok(1.0)
        } else {
            Err(DuetError::Degenerate("chance agreement is 1".into()))
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Agreement report records, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgreementRecord {
    /// Quadratic kappa between two annotators on the samples both labeled.
    Pair {
        a: String,
        b: String,
        n_items: usize,
        cohen_kappa_quadratic: Option<f64>,
    },
    /// Quadratic kappa between an annotator and the majority vote.
    VsMajority {
        annotator: String,
        n_items: usize,
        cohen_kappa_quadratic: Option<f64>,
    },
    /// Fleiss' kappa over samples carrying exactly `raters` votes.
    Panel {
        raters: usize,
        n_items: usize,
        fleiss_kappa: Option<f64>,
    },
    Sample {
        id: String,
        n: usize,
        uod: f64,
        iuod: f64,
        majority: usize,
        tie: bool,
    },
}

/// Builds the full agreement report for the annotated samples of a dataset.
pub fn agreement_report(dataset: &Dataset, eta: f64, tie_seed: u64) -> Result<Vec<AgreementRecord>> {
    let k = dataset.k();
    let annotated: Vec<&Sample> = dataset.samples.iter().filter(|s| !s.annotations.is_empty()).collect();
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut majority: BTreeMap<&str, usize> = BTreeMap::new();
    let mut records = Vec::new();
    let mut sample_records = Vec::new();
    for s in &annotated {
        for v in s.annotations.votes() {
            by_annotator
                .entry(v.annotator_id.as_str())
                .or_default()
                .insert(s.id.as_str(), v.label);
        }
        let mv = majority_vote(&s.annotations, k, sample_tie_seed(tie_seed, &s.id))?;
        majority.insert(s.id.as_str(), mv.label);
        let score = disagreement_score(s, k, eta)?;
        sample_records.push(AgreementRecord::Sample {
            id: s.id.clone(),
            n: score.n,
            uod: score.uod,
            iuod: score.iuod,
            majority: mv.label,
            tie: mv.was_tie(),
        });
    }
    let kappa_or_none = |a: &[usize], b: &[usize]| -> Result<Option<f64>> {
        if a.len() < 2 {
            return Ok(None);
        }
        match cohen_kappa_quadratic(a, b, k) {
            Ok(v) => Ok(Some(v)),
            Err(DuetError::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let names: Vec<&str> = by_annotator.keys().copied().collect();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let (la, lb): (Vec<usize>, Vec<usize>) = by_annotator[a]
                .iter()
                .filter_map(|(id, &x)| by_annotator[b].get(id).map(|&y| (x, y)))
                .unzip();
            records.push(AgreementRecord::Pair {
                a: a.to_string(),
                b: b.to_string(),
                n_items: la.len(),
                cohen_kappa_quadratic: kappa_or_none(&la, &lb)?,
            });
        }
    }
    for a in &names {
        let (la, lm): (Vec<usize>, Vec<usize>) = by_annotator[a].iter().map(|(id, &x)| (x, majority[id])).unzip();
        records.push(AgreementRecord::VsMajority {
            annotator: a.to_string(),
            n_items: la.len(),
            cohen_kappa_quadratic: kappa_or_none(&la, &lm)?,
        });
    }
    let raters = annotated.iter().map(|s| s.annotations.n()).max().unwrap_or(0);
    if raters >= 2 {
        let matrix: Vec<Vec<usize>> = annotated
            .iter()
            .filter(|s| s.annotations.n() == raters)
            .map(|s| s.annotations.counts(k))
            .collect::<Result<_>>()?;
        let fleiss = match fleiss_kappa(&matrix) {
            Ok(v) => Some(v),
            Err(DuetError::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        records.push(AgreementRecord::Panel {
            raters,
            n_items: matrix.len(),
            fleiss_kappa: fleiss,
        });
    }
    records.extend(sample_records);
    Ok(records)
}
