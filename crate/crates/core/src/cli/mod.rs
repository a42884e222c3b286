//! Command-line front end.

mod config;
mod pipeline;

pub use config::RunConfig;
pub use pipeline::{
    evaluate_fold, fold_seed, load_input, plan_folds, train_fold, EvaluationReport, FoldEvaluation, FoldReport, FoldSetup,
    PatientReport, Trace,
};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{write_log, AdversaryError, TrainedModel};
use crate::eval::{moving_average, score_stream, write_trace, AlarmReport, EvalError};
use crate::ingest::{save_windows, IngestError, Label};
use crate::synth::{generate, write_recording};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AdversaryError> for CliError {
    fn from(e: AdversaryError) -> Self {
        match e {
            e if e.is_divergence() => CliError::Divergence(e.to_string()),
            AdversaryError::Config(m) => CliError::Usage(m),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ictus", version, about = "Seizure prediction from multichannel EEG")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic recordings (CSV plus annotation sidecar).
    Synth,
    /// Window and label recordings into caches.
    Ingest { inputs: Vec<PathBuf> },
    /// Cross-validated training, one model per fold.
    Train { inputs: Vec<PathBuf> },
    /// Score held-out data with trained folds and report alarms.
    Evaluate {
        inputs: Vec<PathBuf>,
        /// Directory written by `train` (defaults to the output directory).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Score every window of recordings with one model.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    /// Drop the adversarial term from the generator objective.
    #[arg(long, global = true)]
    pub no_adversarial: bool,
    /// Train the discriminator without gradient penalty.
    #[arg(long, global = true)]
    pub no_gp: bool,
    #[arg(long, global = true, conflicts_with = "temporal_only")]
    pub spatial_only: bool,
    #[arg(long, global = true)]
    pub temporal_only: bool,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(s) = self.seed {
            cfg.seed = s;
            for (i, p) in cfg.synth.iter_mut().enumerate() {
                p.seed = s.wrapping_add(i as u64);
            }
        }
        if let Some(b) = self.blocks {
            cfg.model.blocks = b;
        }
        if let Some(h) = self.heads {
            cfg.model.heads = h;
        }
        if self.no_adversarial {
            cfg.adversarial.gamma = 0.0;
        }
        if self.no_gp {
            cfg.adversarial.lambda = 0.0;
        }
        if self.spatial_only {
            cfg.model.use_temporal = false;
        }
        if self.temporal_only {
            cfg.model.use_spatial = false;
        }
        if let Some(t) = self.tau {
            cfg.alarm.tau = t;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg
    }
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

/// What a run read and wrote, enough to repeat it.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    git: Option<String>,
    config_sha256: String,
    config: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn digest_file(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .stderr(std::process::Stdio::null())
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn write_manifest(cfg: &RunConfig, command: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        git: git_describe(),
        config_sha256: cfg.digest(),
        config: cfg,
        inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_, _>>()?,
        outputs: outputs.iter().map(|p| digest_file(p)).collect::<Result<_, _>>()?,
    };
    let path = cfg.out.join(format!("manifest_{command}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn inputs_or_config(inputs: &[PathBuf], cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let list = if inputs.is_empty() { cfg.inputs.clone() } else { inputs.to_vec() };
    if list.is_empty() {
        return Err(CliError::Usage("no input recordings given".into()));
    }
    Ok(list)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    create_dir(&cfg.out)?;
    let mut outputs = Vec::new();
    for s in &cfg.synth {
        let rec = generate(s).map_err(CliError::Usage)?;
        let (csv, sidecar) = write_recording(&cfg.out, &rec)?;
        log::info!("wrote {} ({} s, {} seizures)", csv.display(), rec.duration_s(), rec.seizures.len());
        outputs.extend([csv, sidecar]);
    }
    write_manifest(cfg, "synth", &[], &outputs)?;
    Ok(outputs)
}

pub fn cmd_ingest(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let inputs = inputs_or_config(inputs, cfg)?;
    let dir = cfg.out.join("windows");
    create_dir(&dir)?;
    let mut outputs = Vec::new();
    for input in &inputs {
        let set = load_input(input, cfg)?;
        let count = |l| set.labels().iter().filter(|&&x| x == l).count();
        log::info!(
            "{}: {} windows ({} preictal, {} interictal, {} excluded)",
            input.display(),
            set.plan().count(),
            count(Label::Preictal),
            count(Label::Interictal),
            count(Label::Excluded)
        );
        let path = dir.join(format!("{}.bin", set.manifest.patient_id));
        save_windows(&path, &set)?;
        outputs.extend([path.clone(), path.with_extension("json")]);
    }
    write_manifest(cfg, "ingest", &inputs, &outputs)?;
    Ok(outputs)
}

fn fold_path(dir: &Path, patient: &str, fold: usize) -> PathBuf {
    dir.join(patient).join(format!("fold{fold}.bin"))
}

pub fn cmd_train(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let inputs = inputs_or_config(inputs, cfg)?;
    let mut outputs = Vec::new();
    for input in &inputs {
        let set = load_input(input, cfg)?;
        let patient = set.manifest.patient_id.clone();
        let dir = cfg.out.join(&patient);
        create_dir(&dir)?;
        let folds = plan_folds(&set, cfg)?;
        let plan_path = dir.join("folds.json");
        write_json(&plan_path, &folds)?;
        outputs.push(plan_path);
        for setup in &folds {
            let Some((model, log)) = train_fold(&set, setup, cfg)? else {
                continue;
            };
            let path = fold_path(&cfg.out, &patient, setup.fold);
            model.save(&path)?;
            let log_path = dir.join(format!("fold{}.log.csv", setup.fold));
            write_log(&log_path, &log).map_err(|e| CliError::io(&log_path, e))?;
            outputs.extend([path.clone(), path.with_extension("json"), log_path]);
        }
    }
    write_manifest(cfg, "train", &inputs, &outputs)?;
    Ok(outputs)
}

pub fn cmd_evaluate(cfg: &RunConfig, inputs: &[PathBuf], checkpoints: Option<&Path>) -> Result<EvaluationReport, CliError> {
    let inputs = inputs_or_config(inputs, cfg)?;
    let ckpt = checkpoints.unwrap_or(&cfg.out);
    let mut outputs = Vec::new();
    let mut patients = Vec::new();
    for input in &inputs {
        let set = load_input(input, cfg)?;
        let patient = set.manifest.patient_id.clone();
        let plan_path = ckpt.join(&patient).join("folds.json");
        let text = std::fs::read_to_string(&plan_path).map_err(|e| CliError::io(&plan_path, e))?;
        let folds: Vec<FoldSetup> = serde_json::from_str(&text).map_err(|e| CliError::io(&plan_path, e))?;
        let trace_dir = cfg.out.join(&patient);
        create_dir(&trace_dir)?;
        let mut reports = Vec::new();
        for setup in &folds {
            let path = fold_path(ckpt, &patient, setup.fold);
            let report = if path.exists() {
                let model = TrainedModel::load(&path).map_err(|e| CliError::io(&path, e))?;
                let eval = evaluate_fold(&set, setup, &model, cfg).map_err(|e| match e {
                    CliError::Data(m) => CliError::Data(format!("{}: {m}", input.display())),
                    e => e,
                })?;
                for t in &eval.traces {
                    let tp = trace_dir.join(format!("trace_{}.csv", t.name));
                    write_trace(&tp, &t.raw, &t.smoothed)?;
                    outputs.push(tp);
                }
                Some(eval.report)
            } else {
                log::warn!("{patient} fold {}: no checkpoint, skipped", setup.fold);
                None
            };
            reports.push(FoldReport {
                fold: setup.fold,
                test_seizures: setup.test_seizures.clone(),
                report,
            });
        }
        patients.push(PatientReport::new(patient, reports));
    }
    let report = EvaluationReport::new(cfg.digest(), patients);
    let path = cfg.out.join("report.json");
    write_json(&path, &report)?;
    outputs.push(path);
    log::info!(
        "pooled sensitivity {:?}, FDR {:?}/h over {:.2} h",
        report.pooled.sensitivity,
        report.pooled.fdr_per_hour,
        report.pooled.interictal_hours
    );
    write_manifest(cfg, "evaluate", &inputs, &outputs)?;
    Ok(report)
}

pub fn cmd_score(cfg: &RunConfig, checkpoint: &Path, inputs: &[PathBuf]) -> Result<Vec<AlarmReport>, CliError> {
    let inputs = inputs_or_config(inputs, cfg)?;
    let model = TrainedModel::load(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    create_dir(&cfg.out)?;
    let mut outputs = Vec::new();
    let mut reports = Vec::new();
    for input in &inputs {
        let set = load_input(input, cfg)?;
        let ids: Vec<usize> = (0..set.plan().count()).collect();
        let raw = score_stream(&model, set.plan(), &ids, &set)?;
        let smoothed = moving_average(&raw, cfg.alarm.smoothing_s);
        let path = cfg.out.join(format!("{}_scores.csv", set.manifest.patient_id));
        write_trace(&path, &raw, &smoothed)?;
        let onsets: Vec<f64> = set.manifest.seizures.iter().map(|s| s.onset_s).collect();
        let spans = crate::eval::interictal_spans(set.plan(), set.labels());
        let report = AlarmReport::from_streams(&[raw], &onsets, &spans, &cfg.alarm);
        let rpath = cfg.out.join(format!("{}_alarms.json", set.manifest.patient_id));
        write_json(&rpath, &report)?;
        outputs.extend([path, rpath]);
        reports.push(report);
    }
    let mut all_inputs = inputs.clone();
    all_inputs.push(checkpoint.to_path_buf());
    write_manifest(cfg, "score", &all_inputs, &outputs)?;
    Ok(reports)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let base = match &cli.overrides.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cli.overrides.apply(base);
    cfg.validate()?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg).map(drop),
        Command::Ingest { inputs } => cmd_ingest(&cfg, inputs).map(drop),
        Command::Train { inputs } => cmd_train(&cfg, inputs).map(drop),
        Command::Evaluate { inputs, checkpoints } => cmd_evaluate(&cfg, inputs, checkpoints.as_deref()).map(drop),
        Command::Score { checkpoint, inputs } => cmd_score(&cfg, checkpoint, inputs).map(drop),
    }
}
