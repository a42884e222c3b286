use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::adversary::AdversarialConfig;
use crate::eval::AlarmRules;
use crate::ingest::LabelRules;
use crate::stan::AttentionConfig;
use crate::synth::SynthConfig;

/// Everything a run needs. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// EDF, CSV or windows-cache (`.bin`) files, one recording each.
    pub inputs: Vec<PathBuf>,
    /// CSV files carry no rate of their own.
    pub csv_sample_rate: Option<f64>,
    /// Decimation target before windowing; `None` keeps the file rate.
    pub working_rate: Option<f64>,
    pub window_s: f64,
    pub overlap: f64,
    pub labels: LabelRules,
    pub folds: usize,
    pub model: AttentionConfig,
    pub adversarial: AdversarialConfig,
    pub alarm: AlarmRules,
    /// Length of the score trace kept before each test onset.
    pub trace_lead_s: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub synth: Vec<SynthConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            csv_sample_rate: None,
            working_rate: Some(64.0),
            window_s: 5.0,
            overlap: 0.5,
            labels: LabelRules::default(),
            folds: 5,
            model: AttentionConfig::default(),
            adversarial: AdversarialConfig::default(),
            alarm: AlarmRules::default(),
            trace_lead_s: 5400.0,
            seed: 0,
            out: PathBuf::from("ictus-out"),
            synth: vec![SynthConfig::default()],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if let Err(e) = self.model.validate() {
            return usage(e.to_string());
        }
        if let Err(e) = self.adversarial.validate() {
            return usage(e);
        }
        if self.folds == 0 {
            return usage("folds must be at least 1".into());
        }
        if !(self.window_s > 0.0) || !(0.0..1.0).contains(&self.overlap) {
            return usage("window_s must be positive and overlap in [0, 1)".into());
        }
        if !(self.labels.horizon_s > 0.0 && self.labels.margin_s >= 0.0) {
            return usage("horizon_s must be positive and margin_s non-negative".into());
        }
        if !(self.alarm.smoothing_s > 0.0 && self.alarm.refractory_s >= 0.0 && self.alarm.success.min_s <= self.alarm.success.max_s) {
            return usage("invalid alarm rules".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
