//! Ingest → folds → training → scoring, shared by the subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CliError, RunConfig};
use crate::adversary::{train, EpochLog, TrainedModel};
use crate::eval::{moving_average, score_stream, AlarmReport, ScoreStream};
use crate::ingest::{load_windows, read_csv, read_edf, split_folds, Label, WindowSet};
use crate::stan::Stan;

/// Reads one recording and windows it, or loads a windows cache.
pub fn load_input(path: &Path, cfg: &RunConfig) -> Result<WindowSet, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let rec = match ext.as_str() {
        "bin" => return Ok(load_windows(path)?),
        "edf" => read_edf(path)?,
        "csv" => {
            let rate = cfg
                .csv_sample_rate
                .ok_or_else(|| CliError::Usage(format!("{}: set csv_sample_rate for CSV input", path.display())))?;
            read_csv(path, rate)?
        }
        _ => return Err(CliError::Usage(format!("{}: expected .edf, .csv or .bin", path.display()))),
    };
    Ok(WindowSet::prepare(&rec, cfg.working_rate, cfg.window_s, cfg.overlap, cfg.labels)?)
}

/// One cross-validation fold of one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSetup {
    pub fold: usize,
    pub test_seizures: Vec<usize>,
    pub train_pre: Vec<usize>,
    pub train_inter: Vec<usize>,
    /// Interictal windows kept out of training to measure false alarms.
    pub holdout_inter: Vec<usize>,
}

/// Seizure-wise folds, with the interictal windows additionally cut into
/// `k` contiguous time blocks: fold `f` trains without block `f` and
/// measures false alarms on it.
pub fn plan_folds(set: &WindowSet, cfg: &RunConfig) -> Result<Vec<FoldSetup>, CliError> {
    let m = &set.manifest;
    let plan = split_folds(&m.plan, &m.labels, &m.seizures, &m.rules, cfg.folds, cfg.seed)?;
    let inter = set.ids_with(Label::Interictal);
    let k = plan.k;
    Ok(plan
        .folds
        .into_iter()
        .enumerate()
        .map(|(f, fold)| {
            let block = &inter[f * inter.len() / k..(f + 1) * inter.len() / k];
            let (lo, hi) = (block.first().copied(), block.last().copied());
            let outside = |i: &usize| !matches!((lo, hi), (Some(lo), Some(hi)) if (lo..=hi).contains(i));
            FoldSetup {
                fold: f,
                test_seizures: fold.test_seizures,
                train_pre: fold.train_pre,
                train_inter: fold.train_inter.into_iter().filter(outside).collect(),
                holdout_inter: block.to_vec(),
            }
        })
        .collect())
}

/// Seed for one patient's fold, independent of input order.
pub fn fold_seed(seed: u64, patient_id: &str, fold: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(patient_id.as_bytes());
    h.update((fold as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Trains one fold; `None` (with a warning) when a class is missing.
pub fn train_fold(
    set: &WindowSet,
    setup: &FoldSetup,
    cfg: &RunConfig,
) -> Result<Option<(TrainedModel, Vec<EpochLog>)>, CliError> {
    let patient = &set.manifest.patient_id;
    if setup.train_pre.is_empty() || setup.train_inter.is_empty() {
        log::warn!(
            "{patient} fold {}: {} preictal and {} interictal training windows; skipping",
            setup.fold,
            setup.train_pre.len(),
            setup.train_inter.len()
        );
        return Ok(None);
    }
    let stan = Stan::new(cfg.model.clone(), set.channels(), set.plan().len).map_err(|e| CliError::Usage(e.to_string()))?;
    log::info!(
        "{patient} fold {}: training on {} preictal / {} interictal windows",
        setup.fold,
        setup.train_pre.len(),
        setup.train_inter.len()
    );
    let seed = fold_seed(cfg.seed, patient, setup.fold);
    let (model, log) = train(&stan, &cfg.adversarial, &setup.train_pre, &setup.train_inter, set, seed)?;
    Ok(Some((model, log)))
}

/// Runs of consecutive window ids.
fn runs(ids: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &i in ids {
        match out.last_mut() {
            Some(run) if run.last() == Some(&(i.wrapping_sub(1))) => run.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

pub struct Trace {
    pub name: String,
    pub raw: ScoreStream,
    pub smoothed: ScoreStream,
}

pub struct FoldEvaluation {
    pub report: AlarmReport,
    pub traces: Vec<Trace>,
}

/// Scores the trace before each test onset and the held-out interictal
/// block. Sensitivity comes from the former, false alarms from the latter.
pub fn evaluate_fold(
    set: &WindowSet,
    setup: &FoldSetup,
    model: &TrainedModel,
    cfg: &RunConfig,
) -> Result<FoldEvaluation, CliError> {
    let plan = set.plan();
    let seizures = &set.manifest.seizures;
    let mut traces = Vec::new();
    let mut seizure_streams = Vec::new();
    let mut onsets = Vec::new();
    for &j in &setup.test_seizures {
        let on = seizures[j].onset_s;
        let ids: Vec<usize> = (0..plan.count())
            .filter(|&i| {
                let end = plan.span_s(i).1;
                end <= on && end > on - cfg.trace_lead_s
            })
            .collect();
        onsets.push(on);
        if ids.is_empty() {
            continue;
        }
        let raw = score_stream(model, plan, &ids, set)?;
        traces.push(Trace {
            name: format!("fold{}_seizure{j}", setup.fold),
            smoothed: moving_average(&raw, cfg.alarm.smoothing_s),
            raw: raw.clone(),
        });
        seizure_streams.push(raw);
    }
    let mut inter_streams = Vec::new();
    let mut spans = Vec::new();
    for (r, ids) in runs(&setup.holdout_inter).into_iter().enumerate() {
        let raw = score_stream(model, plan, &ids, set)?;
        spans.push((plan.span_s(ids[0]).0, plan.span_s(*ids.last().expect("non-empty run")).1));
        traces.push(Trace {
            name: format!("fold{}_interictal{r}", setup.fold),
            smoothed: moving_average(&raw, cfg.alarm.smoothing_s),
            raw: raw.clone(),
        });
        inter_streams.push(raw);
    }
    let hits = AlarmReport::from_streams(&seizure_streams, &onsets, &[], &cfg.alarm);
    let falses = AlarmReport::from_streams(&inter_streams, &[], &spans, &cfg.alarm);
    let mut alarms = [hits.alarms, falses.alarms.clone()].concat();
    alarms.sort_by(f64::total_cmp);
    Ok(FoldEvaluation {
        report: AlarmReport {
            alarms,
            seizures: hits.seizures,
            sensitivity: hits.sensitivity,
            false_alarms: falses.false_alarms,
            fdr_per_hour: falses.fdr_per_hour,
            interictal_hours: falses.interictal_hours,
        },
        traces,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_seizures: Vec<usize>,
    /// `None` when the fold had no model.
    pub report: Option<AlarmReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientReport {
    pub patient_id: String,
    pub folds: Vec<FoldReport>,
    pub pooled: AlarmReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_sha256: String,
    pub patients: Vec<PatientReport>,
    pub pooled: AlarmReport,
}

impl PatientReport {
    pub fn new(patient_id: String, folds: Vec<FoldReport>) -> Self {
        let done: Vec<AlarmReport> = folds.iter().filter_map(|f| f.report.clone()).collect();
        PatientReport {
            patient_id,
            pooled: AlarmReport::pooled(&done),
            folds,
        }
    }
}

impl EvaluationReport {
    pub fn new(config_sha256: String, patients: Vec<PatientReport>) -> Self {
        let done: Vec<AlarmReport> = patients
            .iter()
            .flat_map(|p| p.folds.iter().filter_map(|f| f.report.clone()))
            .collect();
        EvaluationReport {
            config_sha256,
            pooled: AlarmReport::pooled(&done),
            patients,
        }
    }
}
