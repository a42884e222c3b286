use serde::{Deserialize, Serialize};

use super::{IngestError, Recording, Seizure};
use crate::numerics::Tensor;

/// Sliding-window segmentation of one recording, in samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub len: usize,
    pub hop: usize,
    pub sample_rate: f64,
    pub starts: Vec<usize>,
}

impl WindowPlan {
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    /// `[start, end)` of window `i` in seconds.
    pub fn span_s(&self, i: usize) -> (f64, f64) {
        let s = self.starts[i];
        (s as f64 / self.sample_rate, (s + self.len) as f64 / self.sample_rate)
    }

    /// Window `i` as an `n × len` tensor.
    pub fn extract(&self, rec: &Recording, i: usize) -> Tensor {
        extract_rows(&rec.samples, self.starts[i], self.len)
    }
}

pub(crate) fn extract_rows(rows: &[Vec<f64>], start: usize, len: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * len);
    for c in rows {
        data.extend_from_slice(&c[start..start + len]);
    }
    Tensor::matrix(rows.len(), len, data).expect("window shape")
}

fn integral(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

/// Windows of `window_seconds` starting every `len · (1 − overlap)` samples.
/// A recording shorter than one window yields no windows.
pub fn window(rec: &Recording, window_seconds: f64, overlap: f64) -> Result<WindowPlan, IngestError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(IngestError::Invalid(format!("overlap {overlap} outside [0, 1)")));
    }
    let len = integral(window_seconds * rec.sample_rate).ok_or_else(|| {
        IngestError::Invalid(format!(
            "{window_seconds} s at {} Hz is not a whole number of samples",
            rec.sample_rate
        ))
    })?;
    let hop = integral(len as f64 * (1.0 - overlap))
        .ok_or_else(|| IngestError::Invalid(format!("hop {} is not a whole number of samples", len as f64 * (1.0 - overlap))))?;
    let total = rec.len();
    let count = if total < len { 0 } else { (total - len) / hop + 1 };
    Ok(WindowPlan {
        len,
        hop,
        sample_rate: rec.sample_rate,
        starts: (0..count).map(|i| i * hop).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Preictal,
    Interictal,
    Excluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRules {
    pub horizon_s: f64,
    pub margin_s: f64,
}

impl Default for LabelRules {
    fn default() -> Self {
        LabelRules {
            horizon_s: 3600.0,
            margin_s: 14400.0,
        }
    }
}

/// Distance from `[s, e)` to the closed interval `[on, off]`; 0 on overlap.
pub(crate) fn gap(s: f64, e: f64, z: &Seizure) -> f64 {
    if e <= z.onset_s {
        z.onset_s - e
    } else if s > z.offset_s {
        s - z.offset_s
    } else {
        0.0
    }
}

/// Labels every window. Preictal: the whole window lies in
/// `[onset − horizon, onset)` of some seizure and touches no seizure.
/// Interictal: at least `margin` away from every seizure. Everything else
/// is excluded.
pub fn label_windows(plan: &WindowPlan, seizures: &[Seizure], rules: &LabelRules) -> Vec<Label> {
    // Running maximum of offsets lets one binary search answer each window.
    let mut max_off = Vec::with_capacity(seizures.len());
    let mut m = f64::NEG_INFINITY;
    for z in seizures {
        m = m.max(z.offset_s);
        max_off.push(m);
    }
    (0..plan.count())
        .map(|i| {
            let (s, e) = plan.span_s(i);
            let next = seizures.partition_point(|z| z.onset_s < e);
            // Overlap is -inf so that it fails even a zero margin.
            let before = if next == 0 {
                f64::INFINITY
            } else if max_off[next - 1] >= s {
                f64::NEG_INFINITY
            } else {
                s - max_off[next - 1]
            };
            let after = seizures.get(next).map_or(f64::INFINITY, |z| z.onset_s - e);
            if before > 0.0 && after < f64::INFINITY && s >= seizures[next].onset_s - rules.horizon_s {
                Label::Preictal
            } else if before.min(after) >= rules.margin_s {
                Label::Interictal
            } else {
                Label::Excluded
            }
        })
        .collect()
}
