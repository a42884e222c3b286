//! Recordings, windowing, labeling and seizure-wise cross-validation folds.

mod cache;
mod edf;
mod folds;
mod table;
mod window;

pub use cache::{load_windows, save_windows, WindowManifest, WindowSet};
pub use edf::{read_edf, read_edf_bytes, write_edf, EdfFile, EdfSignal};
pub use folds::{split_folds, Fold, FoldPlan};
pub use table::{annotation_path, read_annotations, read_csv, write_annotations, write_csv};
pub use window::{label_windows, window, Label, LabelRules, WindowPlan};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("EDF parse error at byte {offset}: {message}")]
    Edf { offset: u64, message: String },
    #[error("{file}: line {line}: {message}")]
    Table { file: String, line: u64, message: String },
    #[error("invalid recording: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("windows cache: {0}")]
    Cache(String),
}

impl IngestError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One annotated seizure, in seconds from the recording start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seizure {
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub patient_id: String,
    pub channel_names: Vec<String>,
    pub sample_rate: f64,
    /// One row per channel, in physical units.
    pub samples: Vec<Vec<f64>>,
    pub seizures: Vec<Seizure>,
}

impl Recording {
    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(IngestError::Invalid(format!("sample rate {} must be positive", self.sample_rate)));
        }
        if self.samples.is_empty() {
            return Err(IngestError::Invalid("no channels".into()));
        }
        if self.channel_names.len() != self.samples.len() {
            return Err(IngestError::Invalid(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.samples.len()
            )));
        }
        let len = self.len();
        if let Some((i, _)) = self.samples.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(IngestError::Invalid(format!("channel {i} length differs from channel 0")));
        }
        validate_seizures(&self.seizures)
    }
}

pub fn validate_seizures(seizures: &[Seizure]) -> Result<(), IngestError> {
    for (i, s) in seizures.iter().enumerate() {
        if !(s.offset_s > s.onset_s) {
            return Err(IngestError::Invalid(format!(
                "seizure {i}: offset {} is not after onset {}",
                s.offset_s, s.onset_s
            )));
        }
        if i > 0 && !(s.onset_s > seizures[i - 1].onset_s) {
            return Err(IngestError::Invalid(format!("seizure {i}: onsets must be strictly increasing")));
        }
    }
    Ok(())
}

/// Mean-pools each channel by the integer factor `rate / target_rate`,
/// dropping an incomplete tail block.
pub fn decimate(rec: &Recording, target_rate: f64) -> Result<Recording, IngestError> {
    let ratio = rec.sample_rate / target_rate;
    let factor = ratio.round();
    if !(target_rate > 0.0) || factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(IngestError::Invalid(format!(
            "working rate {target_rate} Hz does not divide {} Hz",
            rec.sample_rate
        )));
    }
    let f = factor as usize;
    let samples = rec
        .samples
        .iter()
        .map(|c| c.chunks_exact(f).map(|b| b.iter().sum::<f64>() / f as f64).collect())
        .collect();
    Ok(Recording {
        sample_rate: rec.sample_rate / f as f64,
        samples,
        ..rec.clone()
    })
}

/// Zero mean, unit variance per channel over the whole recording. Constant
/// channels are only centered.
pub fn standardize(rec: &Recording) -> Recording {
    let samples = rec
        .samples
        .iter()
        .map(|c| {
            let n = c.len().max(1) as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            c.iter().map(|v| (v - mean) / sd).collect()
        })
        .collect();
    Recording {
        samples,
        ..rec.clone()
    }
}
