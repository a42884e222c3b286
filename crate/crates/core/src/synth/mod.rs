//! Synthetic multichannel recordings with a planted preictal signature.
//!
//! Background activity is AR(1) noise per channel with a weak fixed
//! cross-channel mix. Over the ramp before each onset a shared sinusoid and
//! a shared noise source fade in linearly and stay at full strength through
//! the seizure.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ingest::{annotation_path, write_annotations, write_csv, IngestError, Recording, Seizure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub patient_id: String,
    pub channels: usize,
    pub sample_rate: f64,
    pub duration_s: f64,
    pub onsets_s: Vec<f64>,
    pub seizure_duration_s: f64,
    pub ramp_s: f64,
    /// Weight of the shared noise source at full ramp.
    pub coupling: f64,
    pub oscillation_hz: f64,
    /// Sinusoid amplitude at full ramp, relative to unit background.
    pub amplitude: f64,
    pub noise_scale: f64,
    /// AR(1) coefficient of the background.
    pub smoothing: f64,
    /// Strength of the fixed background mix.
    pub mixing: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patient_id: "synth01".into(),
            channels: 8,
            sample_rate: 64.0,
            duration_s: 6.0 * 3600.0,
            onsets_s: vec![12_000.0, 15_000.0, 18_000.0, 21_000.0],
            seizure_duration_s: 60.0,
            ramp_s: 1800.0,
            coupling: 1.0,
            oscillation_hz: 5.0,
            amplitude: 1.0,
            noise_scale: 1.0,
            smoothing: 0.9,
            mixing: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("sample_rate", self.sample_rate),
            ("duration_s", self.duration_s),
            ("seizure_duration_s", self.seizure_duration_s),
            ("noise_scale", self.noise_scale),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(format!("{name} must be positive, got {v}"));
        }
        if self.channels == 0 {
            return Err("channels must be at least 1".into());
        }
        if !(self.ramp_s >= 0.0) || !(self.coupling >= 0.0) || !(self.amplitude >= 0.0) || !(self.mixing >= 0.0) {
            return Err("ramp_s, coupling, amplitude and mixing must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(format!("smoothing {} outside [0, 1)", self.smoothing));
        }
        if !(self.oscillation_hz > 0.0 && self.oscillation_hz < self.sample_rate / 2.0) {
            return Err(format!("oscillation {} Hz must lie below Nyquist", self.oscillation_hz));
        }
        for (i, &on) in self.onsets_s.iter().enumerate() {
            if i > 0 && !(on > self.onsets_s[i - 1]) {
                return Err("onsets must be strictly increasing".into());
            }
            if on - self.ramp_s < 0.0 || on + self.seizure_duration_s > self.duration_s {
                return Err(format!("seizure at {on} s with its ramp does not fit the recording"));
            }
        }
        Ok(())
    }

    pub fn seizures(&self) -> Vec<Seizure> {
        self.onsets_s
            .iter()
            .map(|&on| Seizure {
                onset_s: on,
                offset_s: on + self.seizure_duration_s,
            })
            .collect()
    }

    /// Planted-signal strength in `[0, 1]` at time `t`.
    pub fn ramp(&self, t: f64) -> f64 {
        self.onsets_s
            .iter()
            .map(|&on| {
                if t >= on && t <= on + self.seizure_duration_s {
                    1.0
                } else if t < on && t >= on - self.ramp_s {
                    if self.ramp_s > 0.0 {
                        1.0 - (on - t) / self.ramp_s
                    } else {
                        1.0
                    }
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest magnitude any output sample may take.
    pub fn bound(&self) -> f64 {
        8.0 * self.noise_scale * (1.0 + self.mixing + self.coupling + self.amplitude)
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Recording, String> {
    cfg.validate()?;
    let n = cfg.channels;
    let len = (cfg.duration_s * cfg.sample_rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mix: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0) / n as f64).collect())
        .collect();
    let phase = rng.random_range(0.0..TAU);
    let a = cfg.smoothing;
    let innovation = (1.0 - a * a).sqrt();
    let mut base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut common: f64 = rng.sample(StandardNormal);
    let bound = cfg.bound();
    let mut samples = vec![Vec::with_capacity(len); n];
    for t in 0..len {
        for b in base.iter_mut() {
            *b = a * *b + innovation * rng.sample::<f64, _>(StandardNormal);
        }
        common = a * common + innovation * rng.sample::<f64, _>(StandardNormal);
        let time = t as f64 / cfg.sample_rate;
        let r = cfg.ramp(time);
        let planted = r * (cfg.coupling * common + cfg.amplitude * (TAU * cfg.oscillation_hz * time + phase).sin());
        for (c, out) in samples.iter_mut().enumerate() {
            let mixed: f64 = base[c] + cfg.mixing * mix[c].iter().zip(&base).map(|(m, b)| m * b).sum::<f64>();
            out.push((cfg.noise_scale * (mixed + planted)).clamp(-bound, bound));
        }
    }
    let rec = Recording {
        patient_id: cfg.patient_id.clone(),
        channel_names: (0..n).map(|c| format!("ch{c:02}")).collect(),
        sample_rate: cfg.sample_rate,
        samples,
        seizures: cfg.seizures(),
    };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Writes `<dir>/<patient>.csv` and its annotation sidecar; returns both paths.
pub fn write_recording(dir: &Path, rec: &Recording) -> Result<(PathBuf, PathBuf), IngestError> {
    let csv = dir.join(format!("{}.csv", rec.patient_id));
    let sidecar = annotation_path(&csv);
    write_csv(&csv, rec)?;
    write_annotations(&sidecar, &rec.seizures)?;
    Ok((csv, sidecar))
}

#[cfg(test)]
mod tests;
