//! Classification metrics and best/last-epoch run summaries.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datahub::Dataset;
use crate::error::{DuetError, Result};
use crate::netcore::{Matrix, MlpModel};

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores
/// count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(DuetError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DuetError::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DuetError::UndefinedMetric("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// `k x k` counts, rows are true labels and columns predictions.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(DuetError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = vec![vec![0usize; k]; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(DuetError::Argument(format!("label outside {k} classes")));
        }
        cm[y][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroPrf {
    pub recall: f64,
    pub precision: f64,
    /// Unweighted mean of per-class F1, not the F1 of macro P and R.
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro recall, precision and F1 with `0/0 = 0` everywhere; every one of
/// the `k` classes enters the mean.
pub fn macro_prf(predictions: &[usize], labels: &[usize], k: usize) -> Result<MacroPrf> {
    if predictions.is_empty() {
        return Err(DuetError::Argument("macro metrics need at least one sample".into()));
    }
    let cm = confusion_matrix(predictions, labels, k)?;
    Ok(macro_prf_from_confusion(&cm))
}

pub fn macro_prf_from_confusion(cm: &[Vec<usize>]) -> MacroPrf {
    let k = cm.len();
    let (mut r, mut p, mut f) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = cm[c][c];
        let actual: usize = cm[c].iter().sum();
        let predicted: usize = cm.iter().map(|row| row[c]).sum();
        let rc = ratio(tp, actual);
        let pc = ratio(tp, predicted);
        r += rc;
        p += pc;
        f += if rc + pc > 0.0 { 2.0 * rc * pc / (rc + pc) } else { 0.0 };
    }
    let kf = k as f64;
    MacroPrf {
        recall: r / kf,
        precision: p / kf,
        f1: f / kf,
    }
}

/// Metrics of a model on a gold-labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Positive-class AUC, binary tasks only.
    pub auc: Option<f64>,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(model: &MlpModel, dataset: &Dataset) -> Result<EvalMetrics> {
    let labels = dataset.gold_labels()?;
    let rows: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.features.clone()).collect();
    let x = Matrix::from_rows(&rows)?;
    evaluate_on(model, &x, &labels)
}

pub fn evaluate_on(model: &MlpModel, features: &Matrix, labels: &[usize]) -> Result<EvalMetrics> {
    let k = model.num_classes();
    let probs = model.predict_proba(features)?;
    let preds: Vec<usize> = probs.iter_rows().map(crate::netcore::argmax).collect();
    let confusion = confusion_matrix(&preds, labels, k)?;
    let prf = macro_prf_from_confusion(&confusion);
    let auc = if k == 2 {
        let scores: Vec<f64> = probs.iter_rows().map(|r| r[1]).collect();
        let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        match auc(&scores, &truth) {
            Ok(v) => Some(v),
            Err(DuetError::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(EvalMetrics {
        auc,
        macro_recall: prf.recall,
        macro_precision: prf.precision,
        macro_f1: prf.f1,
        confusion,
    })
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub test: Option<EvalMetrics>,
}

impl EpochRecord {
    /// Value of a named metric: `val_macro_f1`, `test_macro_f1`,
    /// `test_macro_recall`, `test_macro_precision`, `test_auc`, `train_loss`.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "val_macro_f1" => Some(self.val_macro_f1),
            "train_loss" => Some(self.train_loss),
            "test_macro_f1" => self.test.as_ref().map(|t| t.macro_f1),
            "test_macro_recall" => self.test.as_ref().map(|t| t.macro_recall),
            "test_macro_precision" => self.test.as_ref().map(|t| t.macro_precision),
            "test_auc" => self.test.as_ref().and_then(|t| t.auc),
            _ => None,
        }
    }
}

/// Best-epoch (B) and last-three-mean (L) summary of one metric series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub best: f64,
    pub best_epoch: usize,
    pub last: f64,
    /// Fewer than three epochs: `last` is the final value alone.
    pub short_history: bool,
}

impl MetricSummary {
    pub fn gap(&self) -> f64 {
        self.best - self.last
    }
}

pub fn summarize_series(metric: &str, values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(DuetError::Argument("empty metrics history".into()));
    }
    let mut best_epoch = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best_epoch] {
            best_epoch = i;
        }
    }
    let short_history = values.len() < 3;
    let last = if short_history {
        *values.last().unwrap()
    } else {
        values[values.len() - 3..].iter().sum::<f64>() / 3.0
    };
    Ok(MetricSummary {
        metric: metric.to_string(),
        best: values[best_epoch],
        best_epoch,
        last,
        short_history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epochs: usize,
    pub summaries: Vec<MetricSummary>,
}

impl MetricsReport {
    pub fn get(&self, metric: &str) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.metric == metric)
    }
}

const SUMMARY_METRICS: [&str; 5] = [
    "val_macro_f1",
    "test_macro_f1",
    "test_macro_recall",
    "test_macro_precision",
    "test_auc",
];

/// B/L summaries for every metric present in all epochs.
pub fn summarize_run(history: &[EpochRecord]) -> Result<MetricsReport> {
    if history.is_empty() {
        return Err(DuetError::Argument("empty metrics history".into()));
    }
    let mut summaries = Vec::new();
    for name in SUMMARY_METRICS {
        let values: Option<Vec<f64>> = history.iter().map(|r| r.metric(name)).collect();
        if let Some(values) = values {
            summaries.push(summarize_series(name, &values)?);
        }
    }
    Ok(MetricsReport {
        epochs: history.len(),
        summaries,
    })
}

/// `epoch,phase,lr,train_loss,val_macro_f1,test_*` rows for plotting.
pub fn write_plot_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epoch",
        "phase",
        "lr",
        "train_loss",
        "val_macro_f1",
        "test_macro_f1",
        "test_macro_recall",
        "test_macro_precision",
        "test_auc",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.phase.clone(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            r.val_macro_f1.to_string(),
            opt(r.metric("test_macro_f1")),
            opt(r.metric("test_macro_recall")),
            opt(r.metric("test_macro_precision")),
            opt(r.metric("test_auc")),
        ])?;
    }
    w.flush()?;
    Ok(())
}
