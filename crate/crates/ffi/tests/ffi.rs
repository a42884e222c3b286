use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ictus_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ictus_last_error()) }.to_string_lossy().into_owned()
}

fn tiny_synth() -> CString {
    CString::new(
        r#"{"patient_id": "ffi", "channels": 3, "sample_rate": 8.0, "duration_s": 120.0,
            "onsets_s": [90.0], "seizure_duration_s": 10.0, "ramp_s": 30.0, "oscillation_hz": 2.0, "seed": 4}"#,
    )
    .unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ictus_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_recording_round_trips_through_handles() {
    let mut rec = ptr::null_mut();
    assert_eq!(unsafe { ictus_recording_generate(tiny_synth().as_ptr(), &mut rec) }, IctusStatus::Ok);
    let (mut n, mut len, mut rate, mut seizures) = (0, 0, 0.0, 0);
    assert_eq!(unsafe { ictus_recording_info(rec, &mut n, &mut len, &mut rate, &mut seizures) }, IctusStatus::Ok);
    assert_eq!((n, len, rate, seizures), (3, 960, 8.0, 1));
    let (mut on, mut off) = (0.0, 0.0);
    assert_eq!(unsafe { ictus_recording_seizure(rec, 0, &mut on, &mut off) }, IctusStatus::Ok);
    assert_eq!((on, off), (90.0, 100.0));
    assert_eq!(unsafe { ictus_recording_seizure(rec, 1, &mut on, &mut off) }, IctusStatus::InvalidArgument);

    let mut buf = vec![f64::NAN; len];
    assert_eq!(unsafe { ictus_recording_channel(rec, 2, buf.as_mut_ptr(), len) }, IctusStatus::Ok);
    let cfg: ictus::synth::SynthConfig = serde_json::from_str(tiny_synth().to_str().unwrap()).unwrap();
    assert_eq!(buf, ictus::synth::generate(&cfg).unwrap().samples[2]);
    assert_eq!(unsafe { ictus_recording_channel(rec, 0, buf.as_mut_ptr(), len - 1) }, IctusStatus::BufferTooSmall);
    unsafe { ictus_recording_free(rec) };
}

#[test]
fn bad_inputs_set_status_and_message() {
    let mut rec = ptr::null_mut();
    assert_eq!(unsafe { ictus_recording_generate(ptr::null(), &mut rec) }, IctusStatus::NullPointer);
    assert!(last_error().contains("NULL"));
    let bad = CString::new(r#"{"channels": 0}"#).unwrap();
    assert_eq!(unsafe { ictus_recording_generate(bad.as_ptr(), &mut rec) }, IctusStatus::InvalidArgument);
    assert!(rec.is_null());
    assert!(last_error().contains("channels"));

    let missing = CString::new("/nonexistent/x.edf").unwrap();
    assert_eq!(unsafe { ictus_recording_read(missing.as_ptr(), 0.0, &mut rec) }, IctusStatus::Io);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.edf");
    std::fs::write(&junk, b"0       not an edf").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ictus_recording_read(junk.as_ptr(), 0.0, &mut rec) }, IctusStatus::Data);
    assert!(last_error().contains("at byte"), "{}", last_error());

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ictus_model_load(missing.as_ptr(), &mut model) }, IctusStatus::Model);
    assert!(model.is_null());
    unsafe {
        ictus_model_free(ptr::null_mut());
        ictus_recording_free(ptr::null_mut());
    }
}

#[test]
fn csv_read_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: ictus::synth::SynthConfig = serde_json::from_str(tiny_synth().to_str().unwrap()).unwrap();
    let (csv, _) = ictus::synth::write_recording(dir.path(), &ictus::synth::generate(&cfg).unwrap()).unwrap();
    let path = CString::new(csv.to_str().unwrap()).unwrap();
    let mut rec = ptr::null_mut();
    assert_eq!(unsafe { ictus_recording_read(path.as_ptr(), 8.0, &mut rec) }, IctusStatus::Ok);
    let (mut n, mut len, mut rate, mut seizures) = (0, 0, 0.0, 0);
    unsafe { ictus_recording_info(rec, &mut n, &mut len, &mut rate, &mut seizures) };
    assert_eq!((n, len, seizures), (3, 960, 1));
    unsafe { ictus_recording_free(rec) };
}

#[test]
fn alarms_and_smoothing_follow_core() {
    let times: Vec<f64> = (1..=6).map(|i| i as f64 * 2.5).collect();
    let scores = [0.9, 0.4, 0.8, 0.3, 0.7, 0.2];
    let mut alarms = [0.0; 3];
    let mut count = 0;
    let status = unsafe {
        ictus_detect_alarms(times.as_ptr(), scores.as_ptr(), 6, 0.5, 0.0, alarms.as_mut_ptr(), 3, &mut count)
    };
    assert_eq!(status, IctusStatus::Ok);
    assert_eq!(&alarms[..count], &[5.0, 10.0, 15.0]);
    let status = unsafe {
        ictus_detect_alarms(times.as_ptr(), scores.as_ptr(), 6, 0.5, 0.0, alarms.as_mut_ptr(), 2, &mut count)
    };
    assert_eq!((status, count), (IctusStatus::BufferTooSmall, 3));

    let mut out = [0.0; 6];
    assert_eq!(
        unsafe { ictus_moving_average(times.as_ptr(), scores.as_ptr(), 6, 5.0, out.as_mut_ptr()) },
        IctusStatus::Ok
    );
    assert_eq!(out[0], 0.9);
    assert!((out[1] - 0.65).abs() < 1e-15);
    let uneven = [1.0, 2.0, 4.0];
    assert_eq!(
        unsafe { ictus_moving_average(uneven.as_ptr(), scores.as_ptr(), 3, 5.0, out.as_mut_ptr()) },
        IctusStatus::InvalidArgument
    );
}

/// Trains a small model through the CLI entry point, then scores a
/// window through the model handle and compares with the core.
#[test]
fn trained_model_scores_through_the_handle() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "csv_sample_rate": 8.0,
        "working_rate": null,
        "labels": {"horizon_s": 300.0, "margin_s": 300.0},
        "folds": 2,
        "model": {"blocks": 1, "heads": 2, "spatial_dim": 3, "temporal_dim": 4},
        "adversarial": {"epochs": 1, "batch": 2, "hidden": 4, "max_windows_per_epoch": 4},
        "out": dir.path(),
        "synth": [{"patient_id": "p", "channels": 3, "sample_rate": 8.0, "duration_s": 2000.0,
                   "onsets_s": [900.0, 1700.0], "seizure_duration_s": 20.0, "ramp_s": 300.0,
                   "oscillation_hz": 2.0, "seed": 2}]
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, config.to_string()).unwrap();
    let run = |args: &[&str]| {
        let owned: Vec<CString> = ["ictus", "--config", cfg_path.to_str().unwrap()]
            .iter()
            .chain(args)
            .map(|a| CString::new(*a).unwrap())
            .collect();
        let ptrs: Vec<*const std::ffi::c_char> = owned.iter().map(|a| a.as_ptr()).collect();
        unsafe { ictus_run(ptrs.len() as i32, ptrs.as_ptr()) }
    };
    assert_eq!(run(&["synth"]), 0);
    let csv = dir.path().join("p.csv");
    assert_eq!(run(&["train", csv.to_str().unwrap()]), 0);
    assert_eq!(run(&["no-such-command"]), 1);

    let ckpt = dir.path().join("p").join("fold0.bin");
    let cpath = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ictus_model_load(cpath.as_ptr(), &mut model) }, IctusStatus::Ok, "{}", last_error());
    let (mut n, mut t) = (0, 0);
    assert_eq!(unsafe { ictus_model_shape(model, &mut n, &mut t) }, IctusStatus::Ok);
    assert_eq!((n, t), (3, 40));
    let window: Vec<f64> = (0..n * t).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut score = f64::NAN;
    assert_eq!(unsafe { ictus_model_score(model, window.as_ptr(), n, t, &mut score) }, IctusStatus::Ok);
    let core = ictus::adversary::TrainedModel::load(&ckpt).unwrap();
    let want = core.score(&ictus::numerics::Tensor::new(vec![n, t], window.clone()).unwrap()).unwrap();
    assert_eq!(score.to_bits(), want.to_bits());
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(unsafe { ictus_model_score(model, window.as_ptr(), n, t - 1, &mut score) }, IctusStatus::Model);
    unsafe { ictus_model_free(model) };
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ictus.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "ictus_version",
        "ictus_last_error",
        "ictus_model_load",
        "ictus_model_free",
        "ictus_model_shape",
        "ictus_model_score",
        "ictus_recording_read",
        "ictus_recording_generate",
        "ictus_recording_free",
        "ictus_recording_info",
        "ictus_recording_channel",
        "ictus_recording_seizure",
        "ictus_moving_average",
        "ictus_detect_alarms",
        "ictus_run",
        "typedef struct IctusModel IctusModel",
        "typedef struct IctusRecording IctusRecording",
        "ICTUS_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a small C program against the header and the static
/// library, when a C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let lib_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).parent().unwrap().join(if cfg!(debug_assertions) { "debug" } else { "release" });
    let lib = lib_dir.join("libictus_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library at {} or no cc", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "ictus.h"
int main(void) {
    IctusRecording *rec = NULL;
    if (ictus_recording_generate("{\"duration_s\": 60, \"onsets_s\": [], \"channels\": 2}", &rec) != ICTUS_STATUS_OK) return 2;
    size_t n, len, seizures; double rate;
    if (ictus_recording_info(rec, &n, &len, &rate, &seizures) != ICTUS_STATUS_OK) return 3;
    ictus_recording_free(rec);
    if (ictus_recording_generate(NULL, &rec) != ICTUS_STATUS_NULL_POINTER) return 4;
    if (strlen(ictus_last_error()) == 0) return 5;
    printf("%s %zu %zu %g\n", ictus_version(), n, len, rate);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("{} 2 3840 64", env!("CARGO_PKG_VERSION")));
}
