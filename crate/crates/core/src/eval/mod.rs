//! Score streams, alarms and clinical event metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversaryError, TrainedModel, WindowSource};
use crate::ingest::{Label, WindowPlan};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score stream: {0}")]
    Stream(String),
    #[error(transparent)]
    Model(#[from] AdversaryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Scores stamped at window ends, evenly spaced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreStream {
    pub times_s: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ScoreStream {
    pub fn new(times_s: Vec<f64>, scores: Vec<f64>) -> Result<Self, EvalError> {
        if times_s.len() != scores.len() {
            return Err(EvalError::Stream(format!("{} times for {} scores", times_s.len(), scores.len())));
        }
        if times_s.len() > 2 {
            let d = times_s[1] - times_s[0];
            let uneven = times_s.windows(2).any(|w| ((w[1] - w[0]) - d).abs() > 1e-9 * d.abs().max(1.0));
            if !(d > 0.0) || uneven {
                return Err(EvalError::Stream("times must be strictly increasing with constant spacing".into()));
            }
        } else if times_s.len() == 2 && !(times_s[1] > times_s[0]) {
            return Err(EvalError::Stream("times must be strictly increasing".into()));
        }
        Ok(ScoreStream { times_s, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn spacing(&self) -> Option<f64> {
        (self.len() >= 2).then(|| self.times_s[1] - self.times_s[0])
    }
}

/// Samples in a trailing window of `horizon_s` at the given spacing.
pub fn ma_width(horizon_s: f64, spacing_s: f64) -> usize {
    ((horizon_s / spacing_s) - 1e-9).ceil().max(1.0) as usize
}

/// Trailing mean over `ceil(horizon_s / spacing)` samples; the first
/// samples average whatever prefix exists.
pub fn moving_average(stream: &ScoreStream, horizon_s: f64) -> ScoreStream {
    let Some(spacing) = stream.spacing() else {
        return stream.clone();
    };
    let w = ma_width(horizon_s, spacing);
    let mut out = Vec::with_capacity(stream.len());
    let mut sum = 0.0;
    for (i, &v) in stream.scores.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= stream.scores[i - w];
        }
        let n = (i + 1).min(w);
        // Re-sum now and then so the running total cannot drift.
        if i % 4096 == 4095 {
            sum = stream.scores[i + 1 - n..=i].iter().sum();
        }
        out.push(sum / n as f64);
    }
    ScoreStream {
        times_s: stream.times_s.clone(),
        scores: out,
    }
}

/// Alarm times: samples where the score drops below `tau` from at or above
/// it. A crossing less than `refractory_s` after the last alarm is folded
/// into that alarm.
pub fn detect_alarms(stream: &ScoreStream, tau: f64, refractory_s: f64) -> Vec<f64> {
    let mut alarms: Vec<f64> = Vec::new();
    for i in 1..stream.len() {
        if stream.scores[i - 1] >= tau && stream.scores[i] < tau {
            let t = stream.times_s[i];
            if alarms.last().is_none_or(|&last| t - last >= refractory_s) {
                alarms.push(t);
            }
        }
    }
    alarms
}

/// Accepted lead times before onset, closed at both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessWindow {
    pub min_s: f64,
    pub max_s: f64,
}

impl Default for SuccessWindow {
    fn default() -> Self {
        SuccessWindow {
            min_s: 300.0,
            max_s: 3000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeizureOutcome {
    pub onset_s: f64,
    pub hit: bool,
    /// Longest qualifying lead time.
    pub lead_s: Option<f64>,
}

pub fn seizure_outcomes(alarms: &[f64], onsets: &[f64], window: SuccessWindow) -> Vec<SeizureOutcome> {
    onsets
        .iter()
        .map(|&on| {
            let lead_s = alarms
                .iter()
                .map(|&a| on - a)
                .filter(|&lead| lead >= window.min_s && lead <= window.max_s)
                .fold(None, |best: Option<f64>, l| Some(best.map_or(l, |b| b.max(l))));
            SeizureOutcome {
                onset_s: on,
                hit: lead_s.is_some(),
                lead_s,
            }
        })
        .collect()
}

/// Fraction of seizures with an alarm inside the success window; `None`
/// without seizures.
pub fn sensitivity(alarms: &[f64], onsets: &[f64], window: SuccessWindow) -> Option<f64> {
    if onsets.is_empty() {
        return None;
    }
    let hits = seizure_outcomes(alarms, onsets, window).iter().filter(|o| o.hit).count();
    Some(hits as f64 / onsets.len() as f64)
}

/// Merged `(start, end)` spans covered by interictal windows.
pub fn interictal_spans(plan: &WindowPlan, labels: &[Label]) -> Vec<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == Label::Interictal) {
        let (s, e) = plan.span_s(i);
        match spans.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => spans.push((s, e)),
        }
    }
    spans
}

pub fn span_hours(spans: &[(f64, f64)]) -> f64 {
    spans.iter().map(|(s, e)| e - s).sum::<f64>() / 3600.0
}

/// Alarms inside a span, with spans taken as `(start, end]` because alarm
/// times are window ends.
pub fn interictal_alarms(alarms: &[f64], spans: &[(f64, f64)]) -> usize {
    alarms.iter().filter(|&&a| spans.iter().any(|&(s, e)| a > s && a <= e)).count()
}

/// False alarms per interictal hour; `None` without interictal time.
pub fn fdr(alarms: &[f64], spans: &[(f64, f64)]) -> Option<f64> {
    let hours = span_hours(spans);
    (hours > 0.0).then(|| interictal_alarms(alarms, spans) as f64 / hours)
}

/// Scores the given windows in order; times are window ends.
pub fn score_stream(
    model: &TrainedModel,
    plan: &WindowPlan,
    ids: &[usize],
    source: &impl WindowSource,
) -> Result<ScoreStream, EvalError> {
    let scores = model.score_ids(ids, source)?;
    ScoreStream::new(ids.iter().map(|&i| plan.span_s(i).1).collect(), scores)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmRules {
    pub tau: f64,
    pub smoothing_s: f64,
    pub refractory_s: f64,
    pub success: SuccessWindow,
}

impl Default for AlarmRules {
    fn default() -> Self {
        AlarmRules {
            tau: 0.5,
            smoothing_s: 300.0,
            refractory_s: 1800.0,
            success: SuccessWindow::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlarmReport {
    pub alarms: Vec<f64>,
    pub seizures: Vec<SeizureOutcome>,
    pub sensitivity: Option<f64>,
    pub false_alarms: usize,
    pub fdr_per_hour: Option<f64>,
    pub interictal_hours: f64,
}

impl AlarmReport {
    /// Smooths each stream, detects alarms and scores them against the
    /// onsets and interictal spans. Streams are treated independently.
    pub fn from_streams(streams: &[ScoreStream], onsets: &[f64], spans: &[(f64, f64)], rules: &AlarmRules) -> Self {
        let mut alarms: Vec<f64> = streams
            .iter()
            .flat_map(|s| detect_alarms(&moving_average(s, rules.smoothing_s), rules.tau, rules.refractory_s))
            .collect();
        alarms.sort_by(f64::total_cmp);
        alarms.dedup();
        AlarmReport {
            seizures: seizure_outcomes(&alarms, onsets, rules.success),
            sensitivity: sensitivity(&alarms, onsets, rules.success),
            false_alarms: interictal_alarms(&alarms, spans),
            fdr_per_hour: fdr(&alarms, spans),
            interictal_hours: span_hours(spans),
            alarms,
        }
    }

    /// Pools reports: hits over seizures and false alarms over hours.
    pub fn pooled(reports: &[AlarmReport]) -> AlarmReport {
        let seizures: Vec<SeizureOutcome> = reports.iter().flat_map(|r| r.seizures.clone()).collect();
        let hours: f64 = reports.iter().map(|r| r.interictal_hours).sum();
        let false_alarms: usize = reports.iter().map(|r| r.false_alarms).sum();
        AlarmReport {
            alarms: reports.iter().flat_map(|r| r.alarms.clone()).collect(),
            sensitivity: (!seizures.is_empty())
                .then(|| seizures.iter().filter(|s| s.hit).count() as f64 / seizures.len() as f64),
            seizures,
            false_alarms,
            fdr_per_hour: (hours > 0.0).then(|| false_alarms as f64 / hours),
            interictal_hours: hours,
        }
    }
}

/// Writes `time_s,raw,smoothed`.
pub fn write_trace(path: &Path, raw: &ScoreStream, smoothed: &ScoreStream) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::Stream(e.to_string()))?;
    let err = |e: csv::Error| EvalError::Stream(e.to_string());
    w.write_record(["time_s", "raw", "smoothed"]).map_err(err)?;
    for i in 0..raw.len() {
        w.write_record([
            raw.times_s[i].to_string(),
            raw.scores[i].to_string(),
            smoothed.scores[i].to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}
