//! Command-line front end. Every command reads a JSON run config (numerics
//! live there, flags only pick paths), writes its resolved snapshot and
//! outputs into a run directory it holds a lock on, and reports failures as
//! a single `error code=... exit=... message=...` line on stderr.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::agreement::agreement_report;
use crate::curriculum::{
    naive_labels, refresh_uncertainty, run_baseline, run_pipeline, select_with, warmup, PipelineConfig, TrainingSet,
};
use crate::datahub::{
    inject_noise, read_manifest, simulate_panel, write_manifest, AnnotatorProfile, NoiseSpec, SynthSpec,
};
use crate::error::DuetError;
use crate::evalkit::{evaluate, summarize_run, write_plot_csv, EpochRecord};
use crate::jsonl;
use crate::mcuq::uosl_table;
use crate::netcore::{load_checkpoint, save_checkpoint, MlpModel, Optimizer};
use crate::seeding;

/// Environment variable naming the directory under which default run
/// directories are created.
pub const RUN_ROOT_ENV: &str = "DUET_RUN_ROOT";
pub const CONFIG_SNAPSHOT: &str = "config.json";
const LOCK_FILE: &str = ".lock";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    #[default]
    Pipeline,
    /// Plain cross-entropy on majority votes / working labels.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunInputs {
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub annotators: Vec<AnnotatorProfile>,
    pub seed: u64,
}

/// Everything a command needs to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; overrides `pipeline.seed`.
    pub seed: u64,
    pub inputs: RunInputs,
    pub output_dir: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub noise: Option<NoiseSpec>,
    pub panel: Option<PanelSpec>,
    pub method: TrainMethod,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Run(DuetError::FatalConfig(format!("config {}: {e}", path.display()))))
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            ..self.pipeline.clone()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "duet", version, about = "Dual-uncertainty training under label noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Paths {
    /// Run config (JSON). Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `output_dir`, then `$DUET_RUN_ROOT/<command>`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Input manifest.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Gold-labeled test manifest.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch metrics log.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian-cluster manifest from `synth`.
    Synth(Paths),
    /// Corrupt working labels according to `noise`.
    Noise(Paths),
    /// Replace annotations with votes from the simulated `panel`.
    Panel(Paths),
    /// Inter-annotator agreement report.
    Agree(Paths),
    /// Cross-entropy warmup; writes a checkpoint.
    Warmup(Paths),
    /// Disagreement-based selection report.
    Uod(Paths),
    /// MC-dropout uncertainty and weights from a checkpoint.
    Uosl(Paths),
    /// Full training run (or the baseline, per `method`).
    Train(Paths),
    /// Metrics of a checkpoint on a gold-labeled manifest.
    Eval(Paths),
    /// Best/last summary and plot data from a metrics log.
    Report(Paths),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Noise(_) => "noise",
            Command::Panel(_) => "panel",
            Command::Agree(_) => "agree",
            Command::Warmup(_) => "warmup",
            Command::Uod(_) => "uod",
            Command::Uosl(_) => "uosl",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
        }
    }

    fn paths(&self) -> &Paths {
        match self {
            Command::Synth(p)
            | Command::Noise(p)
            | Command::Panel(p)
            | Command::Agree(p)
            | Command::Warmup(p)
            | Command::Uod(p)
            | Command::Uosl(p)
            | Command::Train(p)
            | Command::Eval(p)
            | Command::Report(p) => p,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(DuetError),
}

impl From<DuetError> for CliError {
    fn from(e: DuetError) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) => e.exit_code(),
        }
    }

    /// `error code=<CODE> exit=<n> message="<json-escaped>"`
    pub fn diagnostic(&self) -> String {
        let (code, message) = match self {
            CliError::Usage(m) => ("E_USAGE", m.clone()),
            CliError::Run(e) => (e.code(), e.to_string()),
        };
        format!(
            "error code={code} exit={} message={}",
            self.exit_code(),
            serde_json::Value::String(message)
        )
    }
}

type CliResult<T> = Result<T, CliError>;

/// Exclusive ownership of a run directory for the lifetime of the value.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Run(DuetError::State(format!(
                "run directory {} is locked by another process",
                dir.display()
            )))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct Run {
    command: &'static str,
    config: RunConfig,
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    _lock: RunLock,
}

impl Run {
    fn open(command: &Command) -> CliResult<Self> {
        let name = command.name();
        let paths = command.paths();
        let mut config = match &paths.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let set = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        };
        set(&mut config.inputs.manifest, &paths.input);
        set(&mut config.inputs.test_manifest, &paths.test);
        set(&mut config.inputs.checkpoint, &paths.checkpoint);
        set(&mut config.inputs.metrics, &paths.metrics);
        let dir = paths
            .run_dir
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| {
                std::env::var_os(RUN_ROOT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("runs"))
                    .join(name)
            });
        config.output_dir = Some(dir.clone());
        let mut inputs = Vec::new();
        for p in [
            &config.inputs.manifest,
            &config.inputs.test_manifest,
            &config.inputs.checkpoint,
            &config.inputs.metrics,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return Err(CliError::Usage(format!("input {} does not exist", p.display())));
            }
            inputs.push(fs::canonicalize(p)?);
        }
        fs::create_dir_all(&dir)?;
        let lock = RunLock::acquire(&dir)?;
        let run = Self {
            command: name,
            config,
            dir,
            inputs,
            _lock: lock,
        };
        fs::write(run.output(CONFIG_SNAPSHOT)?, run.config.to_json()? + "\n")?;
        Ok(run)
    }

    /// Output path inside the run directory; refuses to overwrite an input.
    fn output(&self, name: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        if let Ok(canon) = fs::canonicalize(&path) {
            if self.inputs.contains(&canon) {
                return Err(CliError::Usage(format!(
                    "{} is an input of this command; choose another run directory",
                    path.display()
                )));
            }
        }
        Ok(path)
    }

    fn required<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("`duet {}` needs --{flag}", self.command)))
    }

    fn section<'a, T>(&self, value: &'a Option<T>, key: &str) -> CliResult<&'a T> {
        value.as_ref().ok_or_else(|| {
            CliError::Run(DuetError::FatalConfig(format!(
                "`duet {}` needs a `{key}` section in the config",
                self.command
            )))
        })
    }

    fn manifest(&self) -> CliResult<crate::datahub::Dataset> {
        Ok(read_manifest(self.required(&self.config.inputs.manifest, "input")?)?)
    }
}

/// Parses `args` and runs the command. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            e.exit_code()
        }
    }
}

/// Runs one command; on success returns a one-line summary.
pub fn execute(command: &Command) -> CliResult<String> {
    let run = Run::open(command)?;
    let dir = run.dir.display().to_string();
    let detail = match command {
        Command::Synth(_) => cmd_synth(&run)?,
        Command::Noise(_) => cmd_noise(&run)?,
        Command::Panel(_) => cmd_panel(&run)?,
        Command::Agree(_) => cmd_agree(&run)?,
        Command::Warmup(_) => cmd_warmup(&run)?,
        Command::Uod(_) => cmd_uod(&run)?,
        Command::Uosl(_) => cmd_uosl(&run)?,
        Command::Train(_) => cmd_train(&run)?,
        Command::Eval(_) => cmd_eval(&run)?,
        Command::Report(_) => cmd_report(&run)?,
    };
    Ok(format!("ok command={} run_dir={dir} {detail}", run.command))
}

fn cmd_synth(run: &Run) -> CliResult<String> {
    let ds = run.section(&run.config.synth, "synth")?.generate()?;
    write_manifest(&ds, &run.output("manifest.jsonl")?)?;
    Ok(format!("samples={}", ds.len()))
}

#[derive(Serialize)]
struct IdRecord<'a> {
    id: &'a str,
}

fn cmd_noise(run: &Run) -> CliResult<String> {
    let spec = run.section(&run.config.noise, "noise")?;
    let out = inject_noise(&run.manifest()?, spec)?;
    write_manifest(&out.dataset, &run.output("manifest.jsonl")?)?;
    let ids: Vec<IdRecord> = out.flipped.iter().map(|id| IdRecord { id }).collect();
    jsonl::write_file(&run.output("flipped.jsonl")?, &ids)?;
    let status = serde_json::to_value(out.status).map_err(DuetError::from)?;
    Ok(format!(
        "flipped={} status={}",
        ids.len(),
        status.as_str().unwrap_or("")
    ))
}

fn cmd_panel(run: &Run) -> CliResult<String> {
    let spec = run.section(&run.config.panel, "panel")?;
    let ds = simulate_panel(&run.manifest()?, &spec.annotators, spec.seed)?;
    write_manifest(&ds, &run.output("manifest.jsonl")?)?;
    Ok(format!("samples={} annotators={}", ds.len(), spec.annotators.len()))
}

fn cmd_agree(run: &Run) -> CliResult<String> {
    let cfg = run.config.pipeline();
    let ds = run.manifest()?;
    let report = agreement_report(&ds, cfg.eta, cfg.selection_params().tie_seed)?;
    jsonl::write_file(&run.output("agreement.jsonl")?, &report)?;
    let fleiss = report.iter().find_map(|r| match r {
        crate::agreement::AgreementRecord::Panel { fleiss_kappa, .. } => *fleiss_kappa,
        _ => None,
    });
    Ok(format!(
        "records={} fleiss_kappa={}",
        report.len(),
        fleiss.map_or("none".into(), |k| k.to_string())
    ))
}

#[derive(Serialize)]
struct LossRecord {
    epoch: usize,
    train_loss: f64,
}

fn cmd_warmup(run: &Run) -> CliResult<String> {
    let cfg = run.config.pipeline();
    cfg.validate()?;
    let ds = run.manifest()?;
    let labels = naive_labels(&ds, cfg.selection_params().tie_seed)?;
    let ids: Vec<String> = ds
        .samples
        .iter()
        .filter(|s| labels.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect();
    let set = TrainingSet::from_ids(&ds, &ids, &labels)?;
    let mut dims = vec![ds.dim];
    dims.extend(&cfg.hidden);
    dims.push(ds.k());
    let mut model = MlpModel::new(&dims, cfg.dropout, seeding::derive_seed(cfg.seed, "model"))?;
    let mut opt = Optimizer::adam(cfg.lr)?;
    let report = warmup(
        &mut model,
        &set,
        cfg.warmup_epochs,
        cfg.batch_size,
        &mut opt,
        seeding::derive_seed(cfg.seed, "train-shuffle"),
    )?;
    save_checkpoint(&model, &run.output("warmup.json")?)?;
    let log: Vec<LossRecord> = report
        .loss_history
        .iter()
        .enumerate()
        .map(|(epoch, &train_loss)| LossRecord { epoch, train_loss })
        .collect();
    jsonl::write_file(&run.output("warmup.jsonl")?, &log)?;
    Ok(format!(
        "steps={} final_loss={}",
        report.steps,
        log.last().map_or(f64::NAN, |r| r.train_loss)
    ))
}

fn cmd_uod(run: &Run) -> CliResult<String> {
    let cfg = run.config.pipeline();
    cfg.validate()?;
    let out = select_with(&run.manifest()?, &cfg.selection_params())?;
    jsonl::write_file(&run.output("selection.jsonl")?, &out.log)?;
    Ok(format!(
        "selected={} routed={} eliminated={}",
        out.selected.len(),
        out.routed.len(),
        out.eliminated.len()
    ))
}

#[derive(Serialize)]
struct UoslRecord<'a> {
    id: &'a str,
    uosl: f64,
}

fn cmd_uosl(run: &Run) -> CliResult<String> {
    let cfg = run.config.pipeline();
    cfg.validate()?;
    let model = load_checkpoint(run.required(&run.config.inputs.checkpoint, "checkpoint")?)?;
    let ds = run.manifest()?;
    let table = uosl_table(&model, &ds, cfg.mc_samples, seeding::derive_index(cfg.seed, "uosl", 0))?;
    let records: Vec<UoslRecord> = table
        .scores
        .iter()
        .map(|(id, uosl)| UoslRecord { id, uosl: *uosl })
        .collect();
    jsonl::write_file(&run.output("uosl.jsonl")?, &records)?;
    let weights = refresh_uncertainty(&model, &ds, &cfg, 0)?;
    jsonl::write_file(&run.output("weights.jsonl")?, weights.entries())?;
    Ok(format!(
        "scored={} skipped={} confident={}",
        records.len(),
        table.skipped,
        weights.confident_ids().count()
    ))
}

fn write_history(run: &Run, history: &[EpochRecord]) -> CliResult<String> {
    jsonl::write_file(&run.output("metrics.jsonl")?, history)?;
    write_history_summary(run, history)
}

fn cmd_train(run: &Run) -> CliResult<String> {
    let cfg = run.config.pipeline();
    let ds = run.manifest()?;
    let test = run
        .config
        .inputs
        .test_manifest
        .as_deref()
        .map(read_manifest)
        .transpose()?;
    match run.config.method {
        TrainMethod::Pipeline => {
            let out = run_pipeline(&ds, test.as_ref(), &cfg)?;
            jsonl::write_file(&run.output("selection.jsonl")?, &out.selection.log)?;
            jsonl::write_file(&run.output("weights.jsonl")?, out.weights.entries())?;
            save_checkpoint(&out.best_model, &run.output("best.json")?)?;
            save_checkpoint(&out.final_model, &run.output("last.json")?)?;
            let summary = write_history(run, &out.history)?;
            Ok(format!(
                "method=pipeline clean={} eliminated={} {summary}",
                out.clean_ids.len(),
                out.selection.eliminated.len()
            ))
        }
        TrainMethod::Baseline => {
            let out = run_baseline(&ds, test.as_ref(), &cfg)?;
            save_checkpoint(&out.best_model, &run.output("best.json")?)?;
            save_checkpoint(&out.final_model, &run.output("last.json")?)?;
            Ok(format!("method=baseline {}", write_history(run, &out.history)?))
        }
    }
}

fn cmd_eval(run: &Run) -> CliResult<String> {
    let model = load_checkpoint(run.required(&run.config.inputs.checkpoint, "checkpoint")?)?;
    let path = run
        .config
        .inputs
        .test_manifest
        .as_deref()
        .or(run.config.inputs.manifest.as_deref())
        .ok_or_else(|| CliError::Usage("`duet eval` needs --test or --input".into()))?;
    let metrics = evaluate(&model, &read_manifest(path)?)?;
    jsonl::write_file(&run.output("eval.jsonl")?, std::slice::from_ref(&metrics))?;
    Ok(format!(
        "macro_f1={:.4} macro_recall={:.4} macro_precision={:.4} auc={}",
        metrics.macro_f1,
        metrics.macro_recall,
        metrics.macro_precision,
        metrics.auc.map_or("none".into(), |a| format!("{a:.4}"))
    ))
}

fn cmd_report(run: &Run) -> CliResult<String> {
    let history: Vec<EpochRecord> = jsonl::read_file(run.required(&run.config.inputs.metrics, "metrics")?)?;
    write_history_summary(run, &history)
}

fn write_history_summary(run: &Run, history: &[EpochRecord]) -> CliResult<String> {
    let report = summarize_run(history)?;
    jsonl::write_file(&run.output("summary.jsonl")?, &report.summaries)?;
    write_plot_csv(history, File::create(run.output("plot.csv")?)?)?;
    let rows: Vec<String> = report
        .summaries
        .iter()
        .map(|s| format!("{}:B={:.4},L={:.4}", s.metric, s.best, s.last))
        .collect();
    Ok(format!("epochs={} {}", report.epochs, rows.join(" ")))
}
