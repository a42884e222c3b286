//! C ABI over the `ictus` core.
//!
//! Objects cross the boundary as opaque handles created by `*_load` /
//! `*_read` / `*_generate` and released with the matching `*_free`. Every
//! fallible call returns an [`IctusStatus`]; on failure the message is kept
//! per thread and read with [`ictus_last_error`]. Panics never unwind into
//! the caller.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ictus::adversary::TrainedModel;
use ictus::eval::{detect_alarms, moving_average, ScoreStream};
use ictus::ingest::{read_csv, read_edf, Recording};
use ictus::numerics::Tensor;
use ictus::synth::{generate, SynthConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IctusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed input data (EDF header, CSV row, annotations).
    Data = 4,
    /// Shapes or parameters do not fit the model.
    Model = 5,
    /// Output buffer too small; the required length was still written.
    BufferTooSmall = 6,
    Panic = 7,
}

/// A trained generator/discriminator pair.
pub struct IctusModel(TrainedModel);

/// A multichannel recording with its seizure annotations.
pub struct IctusRecording(Recording);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

type Failure = (IctusStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IctusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            IctusStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IctusStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (IctusStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (IctusStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn ingest_failure(e: ictus::ingest::IngestError) -> Failure {
    use ictus::ingest::IngestError;
    let status = match e {
        IngestError::Io { .. } => IctusStatus::Io,
        IngestError::Invalid(_) => IctusStatus::InvalidArgument,
        _ => IctusStatus::Data,
    };
    (status, e.to_string())
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn ictus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ictus_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint written by `ictus train` (the `.json` architecture
/// file must sit next to it).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ictus_model_load(path: *const c_char, out: *mut *mut IctusModel) -> IctusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let model = TrainedModel::load(&path).map_err(|e| (IctusStatus::Model, format!("{}: {e}", path.display())))?;
        *out = Box::into_raw(Box::new(IctusModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ictus_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ictus_model_free(model: *mut IctusModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window shape the model expects: channels and samples per window.
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ictus_model_shape(model: *const IctusModel, channels: *mut usize, samples: *mut usize) -> IctusStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if channels.is_null() || samples.is_null() {
            return Err(null("output"));
        }
        *channels = m.0.stan.channels;
        *samples = m.0.stan.window_len;
        Ok(())
    })
}

/// Anomaly score of one window given channel-major (`channels × samples`)
/// data. Scores near 0 indicate the preictal state.
///
/// # Safety
/// `data` must hold `channels * samples` values; `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ictus_model_score(
    model: *const IctusModel,
    data: *const f64,
    channels: usize,
    samples: usize,
    score: *mut f64,
) -> IctusStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if score.is_null() {
            return Err(null("score"));
        }
        if (channels, samples) != (m.0.stan.channels, m.0.stan.window_len) {
            return Err((
                IctusStatus::Model,
                format!(
                    "window {channels}x{samples}, model expects {}x{}",
                    m.0.stan.channels, m.0.stan.window_len
                ),
            ));
        }
        let values = slice_arg(data, channels * samples, "data")?;
        let window = Tensor::new(vec![channels, samples], values.to_vec()).map_err(|e| (IctusStatus::Model, e.to_string()))?;
        *score = m.0.score(&window).map_err(|e| (IctusStatus::Model, e.to_string()))?;
        Ok(())
    })
}

/// Reads an EDF file (`csv_rate <= 0`) or a CSV file sampled at `csv_rate`
/// Hz. Annotations are taken from `<path>.annotations` when present.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ictus_recording_read(path: *const c_char, csv_rate: f64, out: *mut *mut IctusRecording) -> IctusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let rec = if csv_rate > 0.0 { read_csv(&path, csv_rate) } else { read_edf(&path) }.map_err(ingest_failure)?;
        *out = Box::into_raw(Box::new(IctusRecording(rec)));
        Ok(())
    })
}

/// Generates a synthetic recording from a JSON synthesis config; missing
/// fields take their defaults, so `"{}"` is valid.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ictus_recording_generate(config_json: *const c_char, out: *mut *mut IctusRecording) -> IctusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| (IctusStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
        let cfg: SynthConfig = serde_json::from_str(text).map_err(|e| (IctusStatus::InvalidArgument, e.to_string()))?;
        let rec = generate(&cfg).map_err(|e| (IctusStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(IctusRecording(rec)));
        Ok(())
    })
}

/// # Safety
/// `rec` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ictus_recording_free(rec: *mut IctusRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Channel count, samples per channel, rate in Hz and seizure count.
///
/// # Safety
/// `rec` must be a live handle; every output must be writable.
#[no_mangle]
pub unsafe extern "C" fn ictus_recording_info(
    rec: *const IctusRecording,
    channels: *mut usize,
    samples: *mut usize,
    sample_rate: *mut f64,
    seizures: *mut usize,
) -> IctusStatus {
    guard(|| {
        let r = &rec.as_ref().ok_or_else(|| null("rec"))?.0;
        if channels.is_null() || samples.is_null() || sample_rate.is_null() || seizures.is_null() {
            return Err(null("output"));
        }
        *channels = r.channels();
        *samples = r.len();
        *sample_rate = r.sample_rate;
        *seizures = r.seizures.len();
        Ok(())
    })
}

/// Copies one channel into `buf`, which must hold at least the channel's
/// sample count.
///
/// # Safety
/// `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ictus_recording_channel(rec: *const IctusRecording, channel: usize, buf: *mut f64, len: usize) -> IctusStatus {
    guard(|| {
        let r = &rec.as_ref().ok_or_else(|| null("rec"))?.0;
        let row = r
            .samples
            .get(channel)
            .ok_or_else(|| (IctusStatus::InvalidArgument, format!("channel {channel} of {}", r.channels())))?;
        if len < row.len() {
            return Err((IctusStatus::BufferTooSmall, format!("need {} values, got {len}", row.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(row.as_ptr(), buf, row.len());
        Ok(())
    })
}

/// Onset and offset in seconds of seizure `index`.
///
/// # Safety
/// `rec` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ictus_recording_seizure(rec: *const IctusRecording, index: usize, onset_s: *mut f64, offset_s: *mut f64) -> IctusStatus {
    guard(|| {
        let r = &rec.as_ref().ok_or_else(|| null("rec"))?.0;
        let z = r
            .seizures
            .get(index)
            .ok_or_else(|| (IctusStatus::InvalidArgument, format!("seizure {index} of {}", r.seizures.len())))?;
        if onset_s.is_null() || offset_s.is_null() {
            return Err(null("output"));
        }
        *onset_s = z.onset_s;
        *offset_s = z.offset_s;
        Ok(())
    })
}

unsafe fn stream_arg(times: *const f64, scores: *const f64, len: usize) -> Result<ScoreStream, Failure> {
    let t = slice_arg(times, len, "times")?;
    let s = slice_arg(scores, len, "scores")?;
    ScoreStream::new(t.to_vec(), s.to_vec()).map_err(|e| (IctusStatus::InvalidArgument, e.to_string()))
}

/// Trailing moving average over `horizon_s` seconds of an evenly spaced
/// score stream; writes `len` values to `out`.
///
/// # Safety
/// `times` and `scores` must hold `len` values; `out` must be writable for `len`.
#[no_mangle]
pub unsafe extern "C" fn ictus_moving_average(
    times: *const f64,
    scores: *const f64,
    len: usize,
    horizon_s: f64,
    out: *mut f64,
) -> IctusStatus {
    guard(|| {
        let stream = stream_arg(times, scores, len)?;
        if !(horizon_s > 0.0) {
            return Err((IctusStatus::InvalidArgument, "horizon_s must be positive".into()));
        }
        if len > 0 && out.is_null() {
            return Err(null("out"));
        }
        let smoothed = moving_average(&stream, horizon_s);
        if len > 0 {
            ptr::copy_nonoverlapping(smoothed.scores.as_ptr(), out, len);
        }
        Ok(())
    })
}

/// Alarm times where the stream drops below `tau`, with crossings inside
/// `refractory_s` of the last alarm suppressed. `count` receives the number
/// of alarms even when `capacity` is too small.
///
/// # Safety
/// `times` and `scores` must hold `len` values; `alarms` must be writable
/// for `capacity` values; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ictus_detect_alarms(
    times: *const f64,
    scores: *const f64,
    len: usize,
    tau: f64,
    refractory_s: f64,
    alarms: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> IctusStatus {
    guard(|| {
        if count.is_null() {
            return Err(null("count"));
        }
        let stream = stream_arg(times, scores, len)?;
        let found = detect_alarms(&stream, tau, refractory_s);
        *count = found.len();
        if found.len() > capacity {
            return Err((IctusStatus::BufferTooSmall, format!("{} alarms, capacity {capacity}", found.len())));
        }
        if !found.is_empty() {
            if alarms.is_null() {
                return Err(null("alarms"));
            }
            ptr::copy_nonoverlapping(found.as_ptr(), alarms, found.len());
        }
        Ok(())
    })
}

/// Runs the command-line tool in-process and returns its exit code.
/// `argv[0]` is the program name, as for `main`.
///
/// # Safety
/// `argv` must point to `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ictus_run(argc: c_int, argv: *const *const c_char) -> c_int {
    let argc = argc.max(0) as usize;
    let args: Option<Vec<String>> = if argc > 0 && argv.is_null() {
        None
    } else {
        (0..argc)
            .map(|i| {
                let p = *argv.add(i);
                (!p.is_null()).then(|| CStr::from_ptr(p).to_string_lossy().into_owned())
            })
            .collect()
    };
    let Some(args) = args else {
        set_error("argv contains NULL");
        return 1;
    };
    catch_unwind(|| ictus::cli::run(args)).unwrap_or_else(|_| {
        set_error("internal panic");
        IctusStatus::Panic as c_int
    })
}
