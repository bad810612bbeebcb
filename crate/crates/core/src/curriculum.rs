//! Training pipeline: warmup, disagreement-based selection with
//! majority-vote adjudication, UoSL estimation and re-weighting, and the
//! curriculum loop mixing focal loss on the clean set with weighted
//! cross-entropy on everything.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agreement::{disagreement_score, majority_vote, sample_tie_seed};
use crate::datahub::{Dataset, LabelSource};
use crate::error::{DuetError, Result};
use crate::evalkit::{evaluate, evaluate_on, EpochRecord};
use crate::mcuq::uosl_table;
use crate::netcore::{Matrix, MlpModel, Mode, Optimizer};
use crate::objectives::{
    combined_loss, compute_weights_with, cross_entropy, LabeledBatch, LossConfig, Normalization, WeightOptions,
    WeightTable,
};
use crate::seeding;

/// Which disagreement score the elimination threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "score")]
pub enum UodFilter {
    /// `uod > t_uod` is eliminated.
    #[default]
    Uod,
    /// `iuod > threshold` is eliminated.
    Iuod { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefreshCadence {
    /// No UoSL estimation: unit weights, clean set from panels only.
    Never,
    /// Once, right after warmup.
    #[default]
    Once,
    /// After warmup and again after every curriculum epoch.
    EveryEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    /// Curriculum epochs after warmup.
    pub total_epochs: usize,
    pub epoch_all: usize,
    pub t_uod: f64,
    /// Panels with `uod <= t_clean` form the clean set.
    pub t_clean: f64,
    pub eta: f64,
    pub uod_filter: UodFilter,
    pub t_uosl: f64,
    /// Monte-Carlo dropout passes per UoSL estimate.
    pub mc_samples: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub w_min: f64,
    pub normalization: Normalization,
    pub refresh: RefreshCadence,
    pub validation_fraction: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: vec![64, 64],
            dropout: 0.3,
            lr: 3e-4,
            batch_size: 16,
            warmup_epochs: 5,
            total_epochs: 12,
            epoch_all: 5,
            t_uod: 0.5,
            t_clean: 0.0,
            eta: 1.0,
            uod_filter: UodFilter::Uod,
            t_uosl: 0.8,
            mc_samples: 30,
            gamma: 2.0,
            alpha: 1.0,
            w_min: crate::objectives::DEFAULT_W_MIN,
            normalization: Normalization::MinMax,
            refresh: RefreshCadence::Once,
            validation_fraction: 0.1,
            plateau_factor: 0.5,
            plateau_patience: 5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DuetError::Argument(m));
        if self.warmup_epochs == 0 {
            return bad("warmup_epochs must be >= 1".into());
        }
        if self.total_epochs < self.epoch_all {
            return bad(format!(
                "total_epochs ({}) must be >= epoch_all ({})",
                self.total_epochs, self.epoch_all
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.t_uod >= 0.0 && self.t_clean >= 0.0 && self.t_clean <= self.t_uod) {
            return bad(format!(
                "need 0 <= t_clean ({}) <= t_uod ({})",
                self.t_clean, self.t_uod
            ));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        if let UodFilter::Iuod { threshold } = self.uod_filter {
            if !(threshold.is_finite() && threshold >= 0.0) {
                return bad(format!("iuod threshold must be >= 0, got {threshold}"));
            }
        }
        if self.mc_samples < 2 {
            return bad("mc_samples must be >= 2".into());
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 0.5), got {}",
                self.validation_fraction
            ));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) || self.plateau_patience == 0 {
            return bad("invalid plateau scheduler settings".into());
        }
        if !(self.w_min > 0.0 && self.w_min <= 1.0) {
            return bad(format!("w_min must lie in (0, 1], got {}", self.w_min));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            alpha: self.alpha,
            epoch_all: self.epoch_all,
            t_uosl: self.t_uosl,
        }
    }

    pub fn weight_options(&self) -> WeightOptions {
        WeightOptions {
            normalization: self.normalization,
            w_min: self.w_min,
        }
    }

    pub fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            t_uod: self.t_uod,
            t_clean: self.t_clean,
            eta: self.eta,
            filter: self.uod_filter,
            tie_seed: seeding::derive_seed(self.seed, "tie-break"),
        }
    }

    fn new_model(&self, dim: usize, k: usize) -> Result<MlpModel> {
        let mut dims = vec![dim];
        dims.extend(&self.hidden);
        dims.push(k);
        let mut model = MlpModel::new(&dims, self.dropout, seeding::derive_seed(self.seed, "model"))?;
        model.set_mode(Mode::Train);
        Ok(model)
    }

    fn new_optimizer(&self) -> Result<Optimizer> {
        Ok(Optimizer::adam(self.lr)?.with_plateau(self.plateau_factor, self.plateau_patience))
    }
}

/// Ids, features and labels of the samples a training loop iterates over.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if ids.len() != rows.len() || ids.len() != labels.len() {
            return Err(DuetError::Shape("ids, features and labels differ in length".into()));
        }
        let features = if rows.is_empty() {
            Matrix::zeros(0, 0)
        } else {
            Matrix::from_rows(&rows)?
        };
        Ok(Self { ids, features, labels })
    }

    /// Training set over `ids` (in that order) with labels from `labels`.
    pub fn from_ids(dataset: &Dataset, ids: &[String], labels: &BTreeMap<String, usize>) -> Result<Self> {
        let by_id: BTreeMap<&str, &Vec<f64>> = dataset.samples.iter().map(|s| (s.id.as_str(), &s.features)).collect();
        let mut rows = Vec::with_capacity(ids.len());
        let mut ys = Vec::with_capacity(ids.len());
        for id in ids {
            rows.push(
                by_id
                    .get(id.as_str())
                    .ok_or_else(|| DuetError::State(format!("unknown sample {id}")))?
                    .to_vec(),
            );
            ys.push(
                *labels
                    .get(id)
                    .ok_or_else(|| DuetError::State(format!("no label for sample {id}")))?,
            );
        }
        Self::new(ids.to_vec(), rows, ys)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> (Matrix, Vec<usize>, Vec<String>) {
        (
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            idx.iter().map(|&i| self.ids[i].clone()).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

fn shuffled(n: usize, seed: u64, label: &str, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::rng(seeding::derive_index(seed, label, epoch as u64)));
    idx
}

fn ce_epoch(
    model: &mut MlpModel,
    set: &TrainingSet,
    batch_size: usize,
    optimizer: &mut Optimizer,
    order: &[usize],
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut steps = 0;
    for chunk in order.chunks(batch_size) {
        let (x, y, _) = set.gather(chunk);
        let probs = model.forward(&x)?;
        let out = cross_entropy(&probs, &y)?;
        if !out.loss.is_finite() {
            return Err(DuetError::Numeric(format!(
                "non-finite cross-entropy at step {}",
                optimizer.steps() + 1
            )));
        }
        let grads = model.backward(&x, &out.grad)?;
        optimizer.step(model, &grads)?;
        total += out.loss * chunk.len() as f64;
        steps += 1;
    }
    Ok((total / set.len() as f64, steps))
}

/// Plain cross-entropy training for `epochs` passes over `set`, reshuffled
/// every epoch from `seed`.
pub fn warmup(
    model: &mut MlpModel,
    set: &TrainingSet,
    epochs: usize,
    batch_size: usize,
    optimizer: &mut Optimizer,
    seed: u64,
) -> Result<WarmupReport> {
    if set.is_empty() {
        return Err(DuetError::Argument("cannot train on an empty set".into()));
    }
    if batch_size == 0 {
        return Err(DuetError::Argument("batch size must be >= 1".into()));
    }
    model.set_mode(Mode::Train);
    let mut report = WarmupReport {
        loss_history: Vec::with_capacity(epochs),
        steps: 0,
    };
    for epoch in 0..epochs {
        let order = shuffled(set.len(), seed, "shuffle", epoch);
        let (loss, steps) = ce_epoch(model, set, batch_size, optimizer, &order)?;
        report.loss_history.push(loss);
        report.steps += steps;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Adjudicated and in the clean set.
    Selected,
    /// Adjudicated (or single opinion) and sent to the UoSL path.
    Routed,
    Eliminated,
}

/// One line of the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub n: usize,
    pub uod: f64,
    pub iuod: f64,
    /// Single opinion: the sentinel score 1 applies.
    pub single: bool,
    pub decision: Decision,
    pub label: Option<usize>,
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub t_uod: f64,
    pub t_clean: f64,
    pub eta: f64,
    pub filter: UodFilter,
    pub tie_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Clean set, ascending by UoD (ties by id). Always a subset of `routed`.
    pub selected: Vec<String>,
    pub eliminated: Vec<String>,
    /// Every labeled sample that was not eliminated, in dataset order.
    pub routed: Vec<String>,
    /// Adjudicated training label of every routed sample.
    pub labels: BTreeMap<String, usize>,
    pub log: Vec<SelectionRecord>,
}

impl SelectionOutcome {
    /// `eliminated` and `routed` partition the labeled samples and
    /// `selected` lies inside `routed`.
    pub fn check_partition(&self, dataset: &Dataset) -> Result<()> {
        let labeled: BTreeSet<&str> = dataset
            .samples
            .iter()
            .filter(|s| s.is_labeled())
            .map(|s| s.id.as_str())
            .collect();
        let routed: BTreeSet<&str> = self.routed.iter().map(String::as_str).collect();
        let eliminated: BTreeSet<&str> = self.eliminated.iter().map(String::as_str).collect();
        let selected: BTreeSet<&str> = self.selected.iter().map(String::as_str).collect();
        let ok = routed.is_disjoint(&eliminated)
            && routed.len() == self.routed.len()
            && eliminated.len() == self.eliminated.len()
            && routed.union(&eliminated).copied().collect::<BTreeSet<_>>() == labeled
            && selected.is_subset(&routed)
            && selected.len() == self.selected.len()
            && routed.iter().all(|id| self.labels.contains_key(*id));
        if ok {
            Ok(())
        } else {
            Err(DuetError::State(
                "selection outcome does not partition the labeled set".into(),
            ))
        }
    }
}

/// Selection with the default conventions: clean set = unanimous panels,
/// threshold on UoD.
pub fn select_by_uod(dataset: &Dataset, t_uod: f64, eta: f64) -> Result<SelectionOutcome> {
    select_with(
        dataset,
        &SelectionParams {
            t_uod,
            t_clean: 0.0,
            eta,
            filter: UodFilter::Uod,
            tie_seed: 0,
        },
    )
}

/// Multi-vote panels above the threshold are eliminated; the rest are
/// adjudicated by majority vote and routed. Single opinions (one vote, or a
/// working label without annotations) carry the sentinel UoD of 1 and are
/// always routed, never eliminated.
pub fn select_with(dataset: &Dataset, params: &SelectionParams) -> Result<SelectionOutcome> {
    let k = dataset.k();
    let mut out = SelectionOutcome {
        selected: Vec::new(),
        eliminated: Vec::new(),
        routed: Vec::new(),
        labels: BTreeMap::new(),
        log: Vec::new(),
    };
    let mut clean: Vec<(f64, String)> = Vec::new();
    for s in &dataset.samples {
        let record = match s.label_source() {
            LabelSource::Unlabeled => continue,
            LabelSource::SingleTarget(label) => SelectionRecord {
                id: s.id.clone(),
                n: 1,
                uod: 1.0,
                iuod: 1.0,
                single: true,
                decision: Decision::Routed,
                label: Some(label),
                tie: false,
            },
            LabelSource::Panel(ann) => {
                let score = disagreement_score(s, k, params.eta)?;
                let eliminate = !score.single
                    && match params.filter {
                        UodFilter::Uod => score.uod > params.t_uod,
                        UodFilter::Iuod { threshold } => score.iuod > threshold,
                    };
                if eliminate {
                    SelectionRecord {
                        id: s.id.clone(),
                        n: score.n,
                        uod: score.uod,
                        iuod: score.iuod,
                        single: false,
                        decision: Decision::Eliminated,
                        label: None,
                        tie: false,
                    }
                } else {
                    let mv = majority_vote(ann, k, sample_tie_seed(params.tie_seed, &s.id))?;
                    let is_clean = !score.single && score.uod <= params.t_clean;
                    SelectionRecord {
                        id: s.id.clone(),
                        n: score.n,
                        uod: score.uod,
                        iuod: score.iuod,
                        single: score.single,
                        decision: if is_clean { Decision::Selected } else { Decision::Routed },
                        label: Some(mv.label),
                        tie: mv.was_tie(),
                    }
                }
            }
        };
        match record.decision {
            Decision::Eliminated => out.eliminated.push(record.id.clone()),
            decision => {
                out.routed.push(record.id.clone());
                out.labels
                    .insert(record.id.clone(), record.label.expect("routed has label"));
                if decision == Decision::Selected {
                    clean.push((record.uod, record.id.clone()));
                }
            }
        }
        out.log.push(record);
    }
    if out.routed.is_empty() && !out.eliminated.is_empty() {
        return Err(DuetError::FatalConfig(format!(
            "all {} labeled samples were eliminated by the disagreement threshold",
            out.eliminated.len()
        )));
    }
    clean.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    out.selected = clean.into_iter().map(|(_, id)| id).collect();
    Ok(out)
}

/// Labels used by naive training: majority vote over every panel (no
/// elimination) or the working label.
pub fn naive_labels(dataset: &Dataset, tie_seed: u64) -> Result<BTreeMap<String, usize>> {
    let k = dataset.k();
    let mut labels = BTreeMap::new();
    for s in &dataset.samples {
        let label = match s.label_source() {
            LabelSource::Unlabeled => continue,
            LabelSource::SingleTarget(l) => l,
            LabelSource::Panel(ann) => majority_vote(ann, k, sample_tie_seed(tie_seed, &s.id))?.label,
        };
        labels.insert(s.id.clone(), label);
    }
    Ok(labels)
}

/// Stratified hold-out: `round(fraction * n_c)` of every class, at most
/// `n_c - 1`.
fn split_validation(
    ids: &[String],
    labels: &BTreeMap<String, usize>,
    fraction: f64,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut by_class: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for id in ids {
        by_class.entry(labels[id]).or_default().push(id);
    }
    let mut held: BTreeSet<&String> = BTreeSet::new();
    for (class, mut members) in by_class {
        let n = members.len();
        let take = ((fraction * n as f64 + 0.5).floor() as usize).min(n.saturating_sub(1));
        members.shuffle(&mut seeding::rng(seeding::derive_index(
            seed,
            "validation",
            class as u64,
        )));
        held.extend(members.into_iter().take(take));
    }
    let train = ids.iter().filter(|id| !held.contains(id)).cloned().collect();
    let val = ids.iter().filter(|id| held.contains(id)).cloned().collect();
    (train, val)
}

fn val_macro_f1(model: &MlpModel, val: &TrainingSet) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    Ok(evaluate_on(model, &val.features, &val.labels)?.macro_f1)
}

/// Recomputes UoSL on `train` and derives weights. The MC seed depends on
/// `(config.seed, epoch_i)` only.
pub fn refresh_uncertainty(
    model: &MlpModel,
    train: &Dataset,
    config: &PipelineConfig,
    epoch_i: usize,
) -> Result<WeightTable> {
    let table = uosl_table(
        model,
        train,
        config.mc_samples,
        seeding::derive_index(config.seed, "uosl", epoch_i as u64),
    )?;
    let opts = match config.normalization {
        Normalization::LogK { .. } => WeightOptions {
            normalization: Normalization::LogK { k: train.k() },
            w_min: config.w_min,
        },
        Normalization::MinMax => config.weight_options(),
    };
    compute_weights_with(&table.scores, config.t_uosl, opts)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub final_model: MlpModel,
    /// Model at the epoch with the best validation macro-F1.
    pub best_model: MlpModel,
    pub best_epoch: usize,
    pub selection: SelectionOutcome,
    pub validation_ids: Vec<String>,
    /// Weights in force at the end of training.
    pub weights: WeightTable,
    /// Every weight table computed, in order.
    pub weight_history: Vec<WeightTable>,
    /// Clean-set ids in force at the end of training.
    pub clean_ids: Vec<String>,
    pub warmup: WarmupReport,
    pub history: Vec<EpochRecord>,
}

struct Tracker<'a> {
    test: Option<&'a Dataset>,
    val: &'a TrainingSet,
    history: Vec<EpochRecord>,
    best: Option<(f64, usize, MlpModel)>,
}

impl<'a> Tracker<'a> {
    fn new(test: Option<&'a Dataset>, val: &'a TrainingSet) -> Self {
        Self {
            test,
            val,
            history: Vec::new(),
            best: None,
        }
    }

    fn end_epoch(&mut self, model: &MlpModel, optimizer: &mut Optimizer, phase: &str, train_loss: f64) -> Result<()> {
        let epoch = self.history.len();
        let val_f1 = val_macro_f1(model, self.val)?;
        let lr = optimizer.lr();
        optimizer.report_metric(val_f1);
        let test = self.test.map(|t| evaluate(model, t)).transpose()?;
        if self.best.as_ref().is_none_or(|(b, _, _)| val_f1 > *b) {
            self.best = Some((val_f1, epoch, model.clone()));
        }
        self.history.push(EpochRecord {
            epoch,
            phase: phase.to_string(),
            lr,
            train_loss,
            val_macro_f1: val_f1,
            test,
        });
        Ok(())
    }
}

fn clean_set(selection: &SelectionOutcome, train_ids: &BTreeSet<&str>, weights: Option<&WeightTable>) -> Vec<String> {
    let mut clean: Vec<String> = selection
        .selected
        .iter()
        .filter(|id| train_ids.contains(id.as_str()))
        .cloned()
        .collect();
    if let Some(w) = weights {
        let panel_clean: BTreeSet<&str> = selection.selected.iter().map(String::as_str).collect();
        let single: BTreeSet<&str> = selection
            .log
            .iter()
            .filter(|r| r.single)
            .map(|r| r.id.as_str())
            .collect();
        clean.extend(
            w.confident_ids()
                .filter(|id| single.contains(id) && !panel_clean.contains(id))
                .map(String::from),
        );
    }
    clean
}

/// Full pipeline: selection, warmup, UoSL weighting, curriculum training.
/// `test` is evaluated after every epoch for reporting and never influences
/// training.
pub fn run_pipeline(dataset: &Dataset, test: Option<&Dataset>, config: &PipelineConfig) -> Result<PipelineRun> {
    config.validate()?;
    let selection = select_with(dataset, &config.selection_params())?;
    if selection.routed.is_empty() {
        return Err(DuetError::FatalConfig("no labeled samples to train on".into()));
    }
    let (train_ids, val_ids) = split_validation(
        &selection.routed,
        &selection.labels,
        config.validation_fraction,
        config.seed,
    );
    let train = TrainingSet::from_ids(dataset, &train_ids, &selection.labels)?;
    let val = TrainingSet::from_ids(dataset, &val_ids, &selection.labels)?;
    let train_id_set: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let train_ds = dataset.filtered(|s| train_id_set.contains(s.id.as_str()));

    let mut model = config.new_model(dataset.dim, dataset.k())?;
    let mut optimizer = config.new_optimizer()?;
    let mut tracker = Tracker::new(test, &val);

    let shuffle_seed = seeding::derive_seed(config.seed, "train-shuffle");
    let mut warm = WarmupReport {
        loss_history: Vec::new(),
        steps: 0,
    };
    for epoch in 0..config.warmup_epochs {
        let order = shuffled(train.len(), shuffle_seed, "shuffle", epoch);
        let (loss, steps) = ce_epoch(&mut model, &train, config.batch_size, &mut optimizer, &order)?;
        warm.loss_history.push(loss);
        warm.steps += steps;
        tracker.end_epoch(&model, &mut optimizer, "warmup", loss)?;
    }

    let mut weight_history = Vec::new();
    let mut weights = match config.refresh {
        RefreshCadence::Never => WeightTable::uniform(&train_ids),
        _ => refresh_uncertainty(&model, &train_ds, config, 0)?,
    };
    let uses_uosl = config.refresh != RefreshCadence::Never;
    let mut clean_ids = clean_set(&selection, &train_id_set, uses_uosl.then_some(&weights));
    weight_history.push(weights.clone());
    if clean_ids.is_empty() {
        return Err(DuetError::FatalConfig(
            "clean set is empty: no unanimous panel or confident single-target sample".into(),
        ));
    }
    let loss_cfg = config.loss_config();
    let index_of: BTreeMap<&str, usize> = train.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    for epoch_i in 0..config.total_epochs {
        let global_epoch = config.warmup_epochs + epoch_i;
        let order = shuffled(train.len(), shuffle_seed, "shuffle", global_epoch);
        let clean_idx: Vec<usize> = clean_ids.iter().map(|id| index_of[id.as_str()]).collect();
        let clean_order: Vec<usize> = shuffled(clean_idx.len(), shuffle_seed, "clean", global_epoch)
            .into_iter()
            .map(|i| clean_idx[i])
            .collect();
        let mut clean_cursor = clean_order.iter().cycle();
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let clean_chunk: Vec<usize> = clean_cursor.by_ref().take(config.batch_size).copied().collect();
            let (cx, cy, cids) = train.gather(&clean_chunk);
            let (ax, ay, aids) = train.gather(chunk);
            let clean_batch = LabeledBatch {
                features: &cx,
                labels: &cy,
                ids: &cids,
            };
            let all_batch = LabeledBatch {
                features: &ax,
                labels: &ay,
                ids: &aids,
            };
            let out = combined_loss(&mut model, &clean_batch, &all_batch, epoch_i, &loss_cfg, &weights)?;
            if !out.loss.is_finite() {
                return Err(DuetError::Numeric(format!(
                    "non-finite combined loss in curriculum epoch {epoch_i}"
                )));
            }
            optimizer.step(&mut model, &out.grads)?;
            total += out.loss;
            steps += 1;
        }
        tracker.end_epoch(&model, &mut optimizer, "curriculum", total / steps.max(1) as f64)?;
        if config.refresh == RefreshCadence::EveryEpoch {
            weights = refresh_uncertainty(&model, &train_ds, config, epoch_i + 1)?;
            weight_history.push(weights.clone());
            let refreshed = clean_set(&selection, &train_id_set, Some(&weights));
            if !refreshed.is_empty() {
                clean_ids = refreshed;
            }
        }
    }

    let (_, best_epoch, best_model) = tracker.best.take().expect("at least one epoch");
    Ok(PipelineRun {
        final_model: model,
        best_model,
        best_epoch,
        selection,
        validation_ids: val_ids,
        weights,
        weight_history,
        clean_ids,
        warmup: warm,
        history: tracker.history,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub final_model: MlpModel,
    pub best_model: MlpModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Plain cross-entropy on naive labels for `warmup_epochs + total_epochs`
/// epochs, with the same model, optimizer and validation protocol as the
/// pipeline.
pub fn run_baseline(dataset: &Dataset, test: Option<&Dataset>, config: &PipelineConfig) -> Result<BaselineRun> {
    config.validate()?;
    let labels = naive_labels(dataset, seeding::derive_seed(config.seed, "tie-break"))?;
    let ids: Vec<String> = dataset
        .samples
        .iter()
        .filter(|s| labels.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect();
    if ids.is_empty() {
        return Err(DuetError::FatalConfig("no labeled samples to train on".into()));
    }
    let (train_ids, val_ids) = split_validation(&ids, &labels, config.validation_fraction, config.seed);
    let train = TrainingSet::from_ids(dataset, &train_ids, &labels)?;
    let val = TrainingSet::from_ids(dataset, &val_ids, &labels)?;
    let mut model = config.new_model(dataset.dim, dataset.k())?;
    let mut optimizer = config.new_optimizer()?;
    let mut tracker = Tracker::new(test, &val);
    let shuffle_seed = seeding::derive_seed(config.seed, "train-shuffle");
    for epoch in 0..config.warmup_epochs + config.total_epochs {
        let order = shuffled(train.len(), shuffle_seed, "shuffle", epoch);
        let (loss, _) = ce_epoch(&mut model, &train, config.batch_size, &mut optimizer, &order)?;
        tracker.end_epoch(&model, &mut optimizer, "baseline", loss)?;
    }
    let (_, best_epoch, best_model) = tracker.best.take().expect("at least one epoch");
    Ok(BaselineRun {
        final_model: model,
        best_model,
        best_epoch,
        history: tracker.history,
    })
}
