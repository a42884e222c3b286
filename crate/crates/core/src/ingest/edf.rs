//! EDF subset: continuous recordings, one sample rate for all signals,
//! 16-bit little-endian samples.

use std::path::Path;

use super::{read_annotations, table::annotation_path, IngestError, Recording};

const FIXED: usize = 256;
const PER_SIGNAL: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub digital: Vec<i16>,
}

impl EdfSignal {
    /// `pmin + (d − dmin) · (pmax − pmin) / (dmax − dmin)`.
    pub fn physical(&self) -> Vec<f64> {
        let scale = (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64;
        self.digital
            .iter()
            .map(|&d| self.physical_min + (d as i32 - self.digital_min) as f64 * scale)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfFile {
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub record_duration: f64,
    pub records: usize,
    pub signals: Vec<EdfSignal>,
}

fn err(offset: usize, message: impl Into<String>) -> IngestError {
    IngestError::Edf {
        offset: offset as u64,
        message: message.into(),
    }
}

fn text(bytes: &[u8], offset: usize, len: usize, what: &str) -> Result<String, IngestError> {
    let raw = &bytes[offset..offset + len];
    if !raw.iter().all(|b| (0x20..0x7f).contains(b)) {
        return Err(err(offset, format!("{what}: non-ASCII header bytes")));
    }
    Ok(String::from_utf8_lossy(raw).trim().to_string())
}

fn number<T: std::str::FromStr>(bytes: &[u8], offset: usize, len: usize, what: &str) -> Result<T, IngestError> {
    let s = text(bytes, offset, len, what)?;
    s.parse().map_err(|_| err(offset, format!("{what}: cannot parse `{s}`")))
}

pub fn read_edf_bytes(bytes: &[u8]) -> Result<EdfFile, IngestError> {
    if bytes.len() < FIXED {
        return Err(err(bytes.len(), format!("file ends inside the {FIXED}-byte fixed header")));
    }
    let version = text(bytes, 0, 8, "version")?;
    if version != "0" {
        return Err(err(0, format!("unsupported version `{version}`")));
    }
    let ns: usize = number(bytes, 252, 4, "signal count")?;
    if ns == 0 {
        return Err(err(252, "no signals"));
    }
    let header_bytes: usize = number(bytes, 184, 8, "header size")?;
    if header_bytes != FIXED + ns * PER_SIGNAL {
        return Err(err(
            184,
            format!("header size {header_bytes} but {ns} signals need {}", FIXED + ns * PER_SIGNAL),
        ));
    }
    if bytes.len() < header_bytes {
        return Err(err(bytes.len(), "file ends inside the signal headers"));
    }
    let reserved = text(bytes, 192, 44, "reserved")?;
    if reserved.starts_with("EDF+D") {
        return Err(err(192, "discontinuous EDF+ recordings are not supported"));
    }
    let duration: f64 = number(bytes, 244, 8, "record duration")?;
    if !(duration > 0.0) {
        return Err(err(244, format!("record duration {duration} must be positive")));
    }
    let declared: i64 = number(bytes, 236, 8, "record count")?;

    let field = |start: usize, width: usize, i: usize| FIXED + ns * start + i * width;
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let (dmin_at, dmax_at) = (field(120, 8, i), field(128, 8, i));
        let s = EdfSignal {
            label: text(bytes, field(0, 16, i), 16, "label")?,
            transducer: text(bytes, field(16, 80, i), 80, "transducer")?,
            physical_dimension: text(bytes, field(96, 8, i), 8, "physical dimension")?,
            physical_min: number(bytes, field(104, 8, i), 8, "physical minimum")?,
            physical_max: number(bytes, field(112, 8, i), 8, "physical maximum")?,
            digital_min: number(bytes, dmin_at, 8, "digital minimum")?,
            digital_max: number(bytes, dmax_at, 8, "digital maximum")?,
            prefiltering: text(bytes, field(136, 80, i), 80, "prefiltering")?,
            samples_per_record: number(bytes, field(216, 8, i), 8, "samples per record")?,
            digital: Vec::new(),
        };
        if s.digital_min >= s.digital_max || s.digital_min < i16::MIN as i32 || s.digital_max > i16::MAX as i32 {
            return Err(err(dmin_at, format!("signal {i}: bad digital range {}..{}", s.digital_min, s.digital_max)));
        }
        if s.physical_min == s.physical_max {
            return Err(err(field(104, 8, i), format!("signal {i}: empty physical range")));
        }
        if s.samples_per_record == 0 {
            return Err(err(field(216, 8, i), format!("signal {i}: zero samples per record")));
        }
        if i > 0 && s.samples_per_record != signals.first().map_or(0, |f: &EdfSignal| f.samples_per_record) {
            return Err(err(
                field(216, 8, i),
                format!("signal {i}: sample rate differs from signal 0"),
            ));
        }
        signals.push(s);
    }

    let record_size: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let data_len = bytes.len() - header_bytes;
    let records = if declared < 0 {
        if data_len % record_size != 0 {
            let whole = data_len / record_size;
            return Err(err(header_bytes + whole * record_size, "trailing partial data record"));
        }
        data_len / record_size
    } else {
        let records = declared as usize;
        let expected = header_bytes + records * record_size;
        if expected > bytes.len() {
            return Err(err(
                bytes.len(),
                format!("record count {records} needs {expected} bytes, file is truncated"),
            ));
        }
        if expected < bytes.len() {
            return Err(err(
                expected,
                format!("record count {records} ends data at byte {expected}, file has {} bytes", bytes.len()),
            ));
        }
        records
    };

    for s in &mut signals {
        s.digital.reserve(records * s.samples_per_record);
    }
    let mut pos = header_bytes;
    for _ in 0..records {
        for s in &mut signals {
            for c in bytes[pos..pos + s.samples_per_record * 2].chunks_exact(2) {
                s.digital.push(i16::from_le_bytes([c[0], c[1]]));
            }
            pos += s.samples_per_record * 2;
        }
    }
    Ok(EdfFile {
        patient: text(bytes, 8, 80, "patient")?,
        recording: text(bytes, 88, 80, "recording")?,
        start_date: text(bytes, 168, 8, "start date")?,
        start_time: text(bytes, 176, 8, "start time")?,
        record_duration: duration,
        records,
        signals,
    })
}

fn put(out: &mut Vec<u8>, value: &str, width: usize) -> Result<(), IngestError> {
    if value.len() > width || !value.is_ascii() {
        return Err(IngestError::Invalid(format!("EDF field `{value}` does not fit {width} ASCII bytes")));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal text of at most 8 characters for `v`.
fn number_text(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 8 {
        return plain;
    }
    for prec in (0..8).rev() {
        let s = format!("{v:.prec$}");
        if s.len() <= 8 {
            return s;
        }
    }
    format!("{}", v.round() as i64)
}

impl EdfFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>, IngestError> {
        let ns = self.signals.len();
        let mut out = Vec::with_capacity(FIXED + ns * PER_SIGNAL);
        put(&mut out, "0", 8)?;
        put(&mut out, &self.patient, 80)?;
        put(&mut out, &self.recording, 80)?;
        put(&mut out, &self.start_date, 8)?;
        put(&mut out, &self.start_time, 8)?;
        put(&mut out, &(FIXED + ns * PER_SIGNAL).to_string(), 8)?;
        put(&mut out, "", 44)?;
        put(&mut out, &self.records.to_string(), 8)?;
        put(&mut out, &number_text(self.record_duration), 8)?;
        put(&mut out, &ns.to_string(), 4)?;
        let fields: [(usize, fn(&EdfSignal) -> String); 10] = [
            (16, |s| s.label.clone()),
            (80, |s| s.transducer.clone()),
            (8, |s| s.physical_dimension.clone()),
            (8, |s| number_text(s.physical_min)),
            (8, |s| number_text(s.physical_max)),
            (8, |s| s.digital_min.to_string()),
            (8, |s| s.digital_max.to_string()),
            (80, |s| s.prefiltering.clone()),
            (8, |s| s.samples_per_record.to_string()),
            (32, |_| String::new()),
        ];
        for (width, get) in fields {
            for s in &self.signals {
                put(&mut out, &get(s), width)?;
            }
        }
        for s in &self.signals {
            if s.digital.len() != self.records * s.samples_per_record {
                return Err(IngestError::Invalid(format!(
                    "signal `{}` holds {} samples, header implies {}",
                    s.label,
                    s.digital.len(),
                    self.records * s.samples_per_record
                )));
            }
        }
        for r in 0..self.records {
            for s in &self.signals {
                for d in &s.digital[r * s.samples_per_record..(r + 1) * s.samples_per_record] {
                    out.extend_from_slice(&d.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn sample_rate(&self) -> f64 {
        self.signals.first().map_or(0.0, |s| s.samples_per_record as f64 / self.record_duration)
    }

    pub fn to_recording(&self, patient_id: &str) -> Recording {
        Recording {
            patient_id: patient_id.to_string(),
            channel_names: self.signals.iter().map(|s| s.label.clone()).collect(),
            sample_rate: self.sample_rate(),
            samples: self.signals.iter().map(EdfSignal::physical).collect(),
            seizures: Vec::new(),
        }
    }

    /// Quantizes a recording to 16 bits with one-second records. The
    /// physical range of each channel is its data range, rounded outward to
    /// what fits the 8-byte header field.
    pub fn from_recording(rec: &Recording) -> Result<EdfFile, IngestError> {
        rec.validate()?;
        let per_record = rec.sample_rate.round() as usize;
        if (rec.sample_rate - per_record as f64).abs() > 1e-9 || per_record == 0 {
            return Err(IngestError::Invalid(format!("EDF export needs an integer sample rate, got {}", rec.sample_rate)));
        }
        let records = rec.len() / per_record;
        let mut signals = Vec::with_capacity(rec.channels());
        for (name, data) in rec.channel_names.iter().zip(&rec.samples) {
            let data = &data[..records * per_record];
            let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
            // Parse back what the header will hold so quantization uses it.
            let pmin: f64 = number_text(lo.floor()).parse().unwrap_or(lo.floor());
            let pmax: f64 = number_text(hi.ceil()).parse().unwrap_or(hi.ceil());
            let (dmin, dmax) = (i16::MIN as i32, i16::MAX as i32);
            let scale = (dmax - dmin) as f64 / (pmax - pmin);
            let digital = data
                .iter()
                .map(|&v| (((v - pmin) * scale).round() as i32 + dmin).clamp(dmin, dmax) as i16)
                .collect();
            signals.push(EdfSignal {
                label: name.chars().take(16).collect(),
                transducer: String::new(),
                physical_dimension: "uV".into(),
                physical_min: pmin,
                physical_max: pmax,
                digital_min: dmin,
                digital_max: dmax,
                prefiltering: String::new(),
                samples_per_record: per_record,
                digital,
            });
        }
        Ok(EdfFile {
            patient: rec.patient_id.chars().take(80).collect(),
            recording: String::new(),
            start_date: "01.01.00".into(),
            start_time: "00.00.00".into(),
            record_duration: 1.0,
            records,
            signals,
        })
    }
}

/// Reads an EDF file. Seizures come from the annotation sidecar when one
/// exists next to the file.
pub fn read_edf(path: &Path) -> Result<Recording, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let file = read_edf_bytes(&bytes)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut rec = file.to_recording(&id);
    let sidecar = annotation_path(path);
    if sidecar.exists() {
        rec.seizures = read_annotations(&sidecar)?;
    }
    rec.validate()?;
    Ok(rec)
}

pub fn write_edf(path: &Path, file: &EdfFile) -> Result<(), IngestError> {
    std::fs::write(path, file.to_bytes()?).map_err(|e| IngestError::io(path, e))
}
