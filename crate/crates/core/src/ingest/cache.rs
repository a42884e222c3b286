//! Preprocessed recordings on disk: the signal as a parameter-file tensor
//! next to a JSON manifest with the window plan and labels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{decimate, label_windows, standardize, window, IngestError, Label, LabelRules, Recording, Seizure, WindowPlan};
use crate::adversary::WindowSource;
use crate::numerics::{checkpoint, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowManifest {
    pub patient_id: String,
    pub channel_names: Vec<String>,
    pub source_sample_rate: f64,
    pub window_seconds: f64,
    pub overlap: f64,
    pub rules: LabelRules,
    pub seizures: Vec<Seizure>,
    pub plan: WindowPlan,
    pub labels: Vec<Label>,
}

/// A decimated, standardized recording with its labeled windows.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub manifest: WindowManifest,
    /// `n × total` samples at the working rate.
    pub signal: Tensor,
}

impl WindowSet {
    /// Decimates to `working_rate` (when given), standardizes per channel,
    /// windows and labels.
    pub fn prepare(
        rec: &Recording,
        working_rate: Option<f64>,
        window_seconds: f64,
        overlap: f64,
        rules: LabelRules,
    ) -> Result<WindowSet, IngestError> {
        rec.validate()?;
        let source_sample_rate = rec.sample_rate;
        let rec = match working_rate {
            Some(r) if r != rec.sample_rate => decimate(rec, r)?,
            _ => rec.clone(),
        };
        let rec = standardize(&rec);
        let plan = window(&rec, window_seconds, overlap)?;
        let labels = label_windows(&plan, &rec.seizures, &rules);
        let (n, total) = (rec.channels(), rec.len());
        let signal = Tensor::matrix(n, total, rec.samples.concat()).map_err(|e| IngestError::Invalid(e.to_string()))?;
        Ok(WindowSet {
            manifest: WindowManifest {
                patient_id: rec.patient_id.clone(),
                channel_names: rec.channel_names.clone(),
                source_sample_rate,
                window_seconds,
                overlap,
                rules,
                seizures: rec.seizures.clone(),
                plan,
                labels,
            },
            signal,
        })
    }

    pub fn channels(&self) -> usize {
        self.signal.shape()[0]
    }

    pub fn plan(&self) -> &WindowPlan {
        &self.manifest.plan
    }

    pub fn labels(&self) -> &[Label] {
        &self.manifest.labels
    }

    pub fn ids_with(&self, label: Label) -> Vec<usize> {
        (0..self.labels().len()).filter(|&i| self.labels()[i] == label).collect()
    }
}

impl WindowSource for WindowSet {
    fn window(&self, id: usize) -> Tensor {
        let (n, total) = (self.signal.shape()[0], self.signal.shape()[1]);
        let plan = &self.manifest.plan;
        let start = plan.starts[id];
        let mut data = Vec::with_capacity(n * plan.len);
        for c in 0..n {
            let row = &self.signal.data()[c * total..(c + 1) * total];
            data.extend_from_slice(&row[start..start + plan.len]);
        }
        Tensor::matrix(n, plan.len, data).expect("window shape")
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (signal) and `path` with a `.json` extension (manifest).
pub fn save_windows(path: &Path, set: &WindowSet) -> Result<(), IngestError> {
    let mut bytes = Vec::new();
    checkpoint::encode(&mut bytes, [("signal", &set.signal)]).map_err(|e| IngestError::Cache(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| IngestError::io(path, e))?;
    let json = serde_json::to_string_pretty(&set.manifest).map_err(|e| IngestError::Cache(e.to_string()))?;
    let mpath = manifest_path(path);
    std::fs::write(&mpath, json).map_err(|e| IngestError::io(&mpath, e))
}

pub fn load_windows(path: &Path) -> Result<WindowSet, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let mut records = checkpoint::decode(&bytes).map_err(|e| IngestError::Cache(format!("{}: {e}", path.display())))?;
    let signal = match records.pop() {
        Some((name, t)) if name == "signal" && records.is_empty() && t.rank() == 2 => t,
        _ => return Err(IngestError::Cache(format!("{}: expected one rank-2 `signal` tensor", path.display()))),
    };
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| IngestError::io(&mpath, e))?;
    let manifest: WindowManifest =
        serde_json::from_str(&text).map_err(|e| IngestError::Cache(format!("{}: {e}", mpath.display())))?;
    let total = signal.shape()[1];
    let plan = &manifest.plan;
    if signal.shape()[0] != manifest.channel_names.len()
        || manifest.labels.len() != plan.starts.len()
        || plan.starts.iter().any(|&s| s + plan.len > total)
    {
        return Err(IngestError::Cache(format!("{}: manifest does not match the signal", mpath.display())));
    }
    Ok(WindowSet { manifest, signal })
}
