use proptest::prelude::*;

use super::*;
use crate::ingest::read_csv;

fn small() -> SynthConfig {
    SynthConfig {
        channels: 4,
        sample_rate: 32.0,
        duration_s: 600.0,
        onsets_s: vec![300.0, 500.0],
        seizure_duration_s: 20.0,
        ramp_s: 120.0,
        seed: 9,
        ..SynthConfig::default()
    }
}

fn mean_correlation(rec: &Recording, from_s: f64, to_s: f64) -> f64 {
    let (a, b) = ((from_s * rec.sample_rate) as usize, (to_s * rec.sample_rate) as usize);
    let rows: Vec<&[f64]> = rec.samples.iter().map(|c| &c[a..b]).collect();
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
            r.iter().map(|v| (v - m) / sd).collect()
        })
        .collect();
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            sum += z[i].iter().zip(&z[j]).map(|(p, q)| p * q).sum::<f64>() / z[i].len() as f64;
            pairs += 1;
        }
    }
    sum / pairs as f64
}

#[test]
fn same_seed_is_bit_identical() {
    let a = generate(&small()).unwrap();
    assert_eq!(a, generate(&small()).unwrap());
    let other = generate(&SynthConfig { seed: 10, ..small() }).unwrap();
    assert_ne!(a.samples, other.samples);
}

#[test]
fn annotations_are_as_configured() {
    let rec = generate(&small()).unwrap();
    assert_eq!(
        rec.seizures,
        vec![
            Seizure { onset_s: 300.0, offset_s: 320.0 },
            Seizure { onset_s: 500.0, offset_s: 520.0 }
        ]
    );
    assert_eq!(rec.len(), 600 * 32);
    assert_eq!(rec.channels(), 4);
}

#[test]
fn preictal_coupling_exceeds_interictal() {
    let rec = generate(&small()).unwrap();
    let late_preictal = mean_correlation(&rec, 240.0, 300.0);
    let interictal = mean_correlation(&rec, 0.0, 150.0);
    assert!(late_preictal > interictal + 0.3, "{late_preictal} vs {interictal}");
}

#[test]
fn negative_control_has_no_planted_change() {
    let cfg = SynthConfig {
        coupling: 0.0,
        amplitude: 0.0,
        ..small()
    };
    let rec = generate(&cfg).unwrap();
    let late_preictal = mean_correlation(&rec, 240.0, 300.0);
    let interictal = mean_correlation(&rec, 0.0, 150.0);
    assert!((late_preictal - interictal).abs() < 0.1, "{late_preictal} vs {interictal}");
}

#[test]
fn ramp_shape() {
    let cfg = small();
    assert_eq!(cfg.ramp(100.0), 0.0);
    assert_eq!(cfg.ramp(180.0), 0.0);
    assert_eq!(cfg.ramp(240.0), 0.5);
    assert_eq!(cfg.ramp(310.0), 1.0);
    assert_eq!(cfg.ramp(330.0), 0.0);
}

#[test]
fn invalid_configs_rejected() {
    for bad in [
        SynthConfig { onsets_s: vec![50.0], ..small() },
        SynthConfig { onsets_s: vec![590.0], ..small() },
        SynthConfig { onsets_s: vec![400.0, 300.0], ..small() },
        SynthConfig { oscillation_hz: 16.0, ..small() },
        SynthConfig { channels: 0, ..small() },
        SynthConfig { smoothing: 1.0, ..small() },
        SynthConfig { sample_rate: 0.0, ..small() },
    ] {
        assert!(generate(&bad).is_err(), "{bad:?}");
    }
}

#[test]
fn written_files_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let rec = generate(&SynthConfig { duration_s: 400.0, onsets_s: vec![300.0], ..small() }).unwrap();
    let (csv, sidecar) = write_recording(dir.path(), &rec).unwrap();
    assert!(sidecar.exists());
    assert_eq!(read_csv(&csv, rec.sample_rate).unwrap(), rec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn output_is_finite_and_bounded(
        seed in any::<u64>(),
        coupling in 0.0f64..5.0,
        amplitude in 0.0f64..5.0,
        noise in 0.1f64..10.0,
    ) {
        let cfg = SynthConfig { seed, coupling, amplitude, noise_scale: noise, duration_s: 400.0, onsets_s: vec![200.0], ..small() };
        let rec = generate(&cfg).unwrap();
        let bound = cfg.bound();
        prop_assert!(rec.samples.iter().flatten().all(|v| v.is_finite() && v.abs() <= bound));
    }
}
