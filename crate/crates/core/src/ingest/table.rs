//! CSV recordings and the seizure annotation sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::{validate_seizures, IngestError, Recording, Seizure};

/// `recording.csv` → `recording.csv.annotations`.
pub fn annotation_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".annotations");
    PathBuf::from(s)
}

fn table_err(path: &Path, line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Table {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a recording whose header names the channels, one column each.
/// The sample rate is not stored in the file. Seizures come from the
/// sidecar when it exists.
pub fn read_csv(path: &Path, sample_rate: f64) -> Result<Recording, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let channel_names: Vec<String> = reader
        .headers()
        .map_err(|e| table_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if channel_names.is_empty() || channel_names.iter().all(String::is_empty) {
        return Err(table_err(path, 1, "missing header row"));
    }
    let mut samples = vec![Vec::new(); channel_names.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            table_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != channel_names.len() {
            return Err(table_err(
                path,
                line,
                format!("{} cells, header has {}", record.len(), channel_names.len()),
            ));
        }
        for (col, (cell, out)) in record.iter().zip(&mut samples).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| table_err(path, line, format!("column {}: `{cell}` is not a number", col + 1)))?;
            out.push(v);
        }
    }
    let sidecar = annotation_path(path);
    let seizures = if sidecar.exists() {
        read_annotations(&sidecar)?
    } else {
        Vec::new()
    };
    let rec = Recording {
        patient_id: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        channel_names,
        sample_rate,
        samples,
        seizures,
    };
    rec.validate()?;
    Ok(rec)
}

/// Writes the channels as CSV. Values use the shortest text that parses
/// back to the same `f64`.
pub fn write_csv(path: &Path, rec: &Recording) -> Result<(), IngestError> {
    rec.validate()?;
    let io = |e: std::io::Error| IngestError::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| IngestError::Invalid(format!("{}: {e}", path.display()));
    w.write_record(&rec.channel_names).map_err(csv_err)?;
    let mut row = Vec::with_capacity(rec.channels());
    for t in 0..rec.len() {
        row.clear();
        row.extend(rec.samples.iter().map(|c| c[t].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

/// Parses `onset_s,offset_s` lines. Blank lines, `#` comments and a header
/// line are skipped.
pub fn read_annotations(path: &Path) -> Result<Vec<Seizure>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out: Vec<Seizure> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = (i + 1) as u64;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() || body.replace(' ', "") == "onset_s,offset_s" {
            continue;
        }
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        let [on, off] = fields[..] else {
            return Err(table_err(path, line, format!("expected `onset_s,offset_s`, got `{body}`")));
        };
        let parse = |s: &str| -> Result<f64, IngestError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| table_err(path, line, format!("`{s}` is not a number")))
        };
        let seizure = Seizure {
            onset_s: parse(on)?,
            offset_s: parse(off)?,
        };
        out.push(seizure);
        validate_seizures(&out).map_err(|e| table_err(path, line, e.to_string()))?;
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, seizures: &[Seizure]) -> Result<(), IngestError> {
    validate_seizures(seizures)?;
    let io = |e| IngestError::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "onset_s,offset_s").map_err(io)?;
    for s in seizures {
        writeln!(w, "{},{}", s.onset_s, s.offset_s).map_err(io)?;
    }
    w.flush().map_err(io)
}
