use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{grad_check, AdamConfig};
use crate::stan::{AttentionConfig, Stan};

fn uniform_bundle(blocks: usize, heads: usize, n: usize, t: usize) -> AttentionBundle {
    AttentionBundle {
        reconstruction: Tensor::zeros(&[n, t]),
        spatial_maps: vec![Tensor::full(&[heads, n, n], 1.0 / n as f64); blocks],
        temporal_maps: vec![Tensor::full(&[heads, t, t], 1.0 / t as f64); blocks],
    }
}

fn random_pattern(len: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::vector((0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn small_disc(input: usize, hidden: usize, rng: &mut impl Rng) -> (Discriminator, ParameterStore) {
    let d = Discriminator::new(input, hidden);
    let mut p = d.init_params(rng);
    // Nonzero biases exercise every parameter path.
    p.insert("disc.b1", Tensor::vector((0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect()));
    p.insert("disc.b2", Tensor::vector(vec![rng.random_range(-0.5..0.5)]));
    (d, p)
}

#[test]
fn small_spatial_maps_pass_through_unpooled() {
    let mut b = uniform_bundle(1, 2, 2, 40);
    b.spatial_maps[0] = Tensor::new(vec![2, 2, 2], vec![0.9, 0.1, 0.4, 0.6, 0.7, 0.3, 0.2, 0.8]).unwrap();
    let agg = aggregate(&b, 16).unwrap();
    assert_eq!(agg.len(), 4 + 256);
    let want = [0.8, 0.2, 0.3, 0.7];
    for (g, w) in agg.data()[..4].iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
}

#[test]
fn uniform_maps_aggregate_to_reciprocals() {
    let (n, t) = (5, 37);
    let agg = aggregate(&uniform_bundle(2, 3, n, t), 16).unwrap();
    let per_block = n * n + 16 * 16;
    assert_eq!(agg.len(), 2 * per_block);
    for (i, v) in agg.data().iter().enumerate() {
        let want = if i % per_block < n * n { 1.0 / n as f64 } else { 1.0 / t as f64 };
        assert!((v - want).abs() < 1e-14);
    }
}

#[test]
fn default_pattern_length() {
    assert_eq!(pattern_len(3, true, true, 23, 320, 16), 1536);
    let agg = aggregate(&uniform_bundle(3, 4, 23, 320), 16).unwrap();
    assert_eq!(agg.len(), 1536);
}

#[test]
fn graph_aggregation_matches_bundle_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = AttentionConfig {
        blocks: 2,
        heads: 2,
        spatial_dim: 4,
        temporal_dim: 5,
        ..AttentionConfig::default()
    };
    let stan = Stan::new(cfg, 3, 20).unwrap();
    let params = stan.init_params(&mut rng);
    let w = Tensor::new(vec![3, 20], (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut g = Graph::new();
    let out = stan.forward(&mut g, &params, &w, false).unwrap();
    let flat = aggregate_graph(&mut g, &out, 16).unwrap();
    let direct = aggregate(&stan.run(&params, &w).unwrap(), 16).unwrap();
    assert_eq!(g.shape(flat), &[1, direct.len()]);
    for (a, b) in g.value(flat).data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_discriminator_scores_one_half() {
    let d = Discriminator::new(6, 4);
    let mut p = ParameterStore::new();
    p.insert("disc.w1", Tensor::zeros(&[6, 4]));
    p.insert("disc.b1", Tensor::zeros(&[4]));
    p.insert("disc.w2", Tensor::zeros(&[4, 1]));
    p.insert("disc.b2", Tensor::zeros(&[1]));
    let s = d.discriminate(&p, &Tensor::vector(vec![3.0, -1.0, 2.0, 0.0, 5.0, 1.0])).unwrap();
    assert_eq!(s, 0.5);
}

#[test]
fn scripted_two_two_one_forward() {
    let d = Discriminator::new(2, 2);
    let mut p = ParameterStore::new();
    p.insert("disc.w1", Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap());
    p.insert("disc.b1", Tensor::vector(vec![0.1, -0.2]));
    p.insert("disc.w2", Tensor::matrix(2, 1, vec![1.5, -0.5]).unwrap());
    p.insert("disc.b2", Tensor::vector(vec![0.3]));
    let z = [0.4, -0.8];
    // h = ReLU([0.4 - 0.4 + 0.1, -0.4 - 1.6 - 0.2]) = [0.1, 0]
    let h = [(z[0] * 1.0 + z[1] * 0.5 + 0.1f64).max(0.0), (z[0] * -1.0 + z[1] * 2.0 - 0.2f64).max(0.0)];
    let s = h[0] * 1.5 + h[1] * -0.5 + 0.3;
    let want = 1.0 / (1.0 + (-s).exp());
    let got = d.discriminate(&p, &Tensor::vector(z.to_vec())).unwrap();
    assert!((got - want).abs() < 1e-15);
}

#[test]
fn length_mismatch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (d, p) = small_disc(4, 3, &mut rng);
    assert!(matches!(
        d.discriminate(&p, &Tensor::vector(vec![1.0; 5])),
        Err(AdversaryError::LengthMismatch { expected: 4, got: 5 })
    ));
}

#[test]
fn interpolation_endpoint() {
    let a = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let b = Tensor::vector(vec![-0.3, 0.7, 9.1]);
    assert_eq!(mix(&a, &b, 0.0), b);
    assert_eq!(mix(&a, &b, 1.0), a);
}

#[test]
fn interpolation_rejects_uneven_or_empty_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = vec![Tensor::vector(vec![1.0]); 2];
    let b = vec![Tensor::vector(vec![1.0]); 3];
    assert!(matches!(interpolate(&a, &b, &mut rng), Err(AdversaryError::UnevenBatch { .. })));
    assert!(matches!(interpolate(&[], &[], &mut rng), Err(AdversaryError::EmptyBatch)));
}

/// Closed-form gradient of `(‖∇z D(z)‖ − 1)²` for one sample.
fn penalty_closed_form(p: &ParameterStore, z: &[f64]) -> (f64, BTreeMap<String, Vec<f64>>) {
    let w1 = p.get("disc.w1").unwrap();
    let (din, hid) = (w1.shape()[0], w1.shape()[1]);
    let w1 = w1.data();
    let b1 = p.get("disc.b1").unwrap().data();
    let w2 = p.get("disc.w2").unwrap().data();
    let b2 = p.get("disc.b2").unwrap().data()[0];
    let pre: Vec<f64> = (0..hid).map(|j| (0..din).map(|i| z[i] * w1[i * hid + j]).sum::<f64>() + b1[j]).collect();
    let m: Vec<f64> = pre.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let s = h.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>() + b2;
    let d = 1.0 / (1.0 + (-s).exp());
    let c = d * (1.0 - d);
    let u: Vec<f64> = (0..hid).map(|j| m[j] * w2[j]).collect();
    let q: Vec<f64> = (0..din).map(|i| (0..hid).map(|j| w1[i * hid + j] * u[j]).sum()).collect();
    let r = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let k = 2.0 * (c * r - 1.0);
    let dc = c * (1.0 - 2.0 * d);
    let mut out = BTreeMap::new();
    let mut dw1 = vec![0.0; din * hid];
    for i in 0..din {
        for j in 0..hid {
            dw1[i * hid + j] = k * (r * dc * z[i] * u[j] + c * q[i] * u[j] / r);
        }
    }
    out.insert("disc.w1".to_string(), dw1);
    out.insert("disc.b1".to_string(), u.iter().map(|uj| k * r * dc * uj).collect());
    let w1tq: Vec<f64> = (0..hid).map(|j| (0..din).map(|i| w1[i * hid + j] * q[i]).sum()).collect();
    out.insert(
        "disc.w2".to_string(),
        (0..hid).map(|j| k * (r * dc * h[j] + c * m[j] * w1tq[j] / r)).collect(),
    );
    out.insert("disc.b2".to_string(), vec![k * r * dc]);
    ((c * r - 1.0).powi(2), out)
}

#[test]
fn penalty_gradients_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (d, p) = small_disc(5, 4, &mut rng);
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let v = d.vars(&mut g, &p, true).unwrap();
        let pen = d.penalty_node(&mut g, &v, Tensor::new(vec![1, 5], z.clone()).unwrap(), 1.0).unwrap();
        let grads = g.backward(pen).unwrap();
        let (value, want) = penalty_closed_form(&p, &z);
        if want["disc.w1"].iter().any(|v| v.is_nan()) {
            // Every hidden unit inactive: the norm sits at its kink.
            continue;
        }
        assert!((g.value(pen).item() - value).abs() < 1e-12);
        for (name, w) in want {
            let got = grads.param(&name).map(|t| t.data().to_vec()).unwrap_or(vec![0.0; w.len()]);
            for (a, b) in got.iter().zip(&w) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{name}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn penalty_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..10 {
        let (d, p) = small_disc(4, 3, &mut rng);
        let hat = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let report = grad_check(
            &p,
            |g, s| {
                let v = d.vars(g, s, true)?;
                d.penalty_node(g, &v, hat.clone(), 10.0)
            },
            trial,
            16,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-3, "{report:?}");
    }
}

#[test]
fn identical_batches_leave_only_the_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (d, p) = small_disc(6, 5, &mut rng);
    let batch: Vec<Tensor> = (0..4).map(|_| random_pattern(6, &mut rng)).collect();
    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let (stats, _) = discriminator_loss(&d, &p, &batch, &batch, 10.0, &mut r1).unwrap();
    assert!((stats.loss - stats.penalty).abs() < 1e-15);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    let (pen, _) = gradient_penalty(&d, &p, &batch, &batch, 10.0, &mut r2).unwrap();
    assert!((pen - stats.penalty).abs() < 1e-15);
}

#[test]
fn unpenalized_critic_loss_decreases_on_separated_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (d, mut p) = small_disc(8, 6, &mut rng);
    let pre: Vec<Tensor> = (0..16).map(|_| Tensor::vector((0..8).map(|_| rng.random_range(0.5..1.0)).collect())).collect();
    let inter: Vec<Tensor> =
        (0..16).map(|_| Tensor::vector((0..8).map(|_| rng.random_range(-1.0..-0.5)).collect())).collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(1e-4));
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        let s = discriminator_step(&d, &mut p, &mut adam, &pre, &inter, 0.0, &mut rng).unwrap();
        assert!(s.loss < last, "{} !< {last}", s.loss);
        last = s.loss;
    }
}

fn tiny_stan(n: usize, t: usize) -> Stan {
    let cfg = AttentionConfig {
        blocks: 1,
        heads: 2,
        spatial_dim: 4,
        temporal_dim: 6,
        ..AttentionConfig::default()
    };
    Stan::new(cfg, n, t).unwrap()
}

fn sine_windows(count: usize, n: usize, t: usize, rng: &mut impl Rng) -> Vec<Tensor> {
    (0..count)
        .map(|_| {
            let phase: f64 = rng.random_range(0.0..6.0);
            let data = (0..n * t)
                .map(|i| ((i % t) as f64 * 0.7 + phase + (i / t) as f64).sin())
                .collect();
            Tensor::new(vec![n, t], data).unwrap()
        })
        .collect()
}

#[test]
fn generator_step_reduces_reconstruction_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stan = tiny_stan(3, 12);
    let c = &stan.config;
    let disc = Discriminator::new(pattern_len(c.blocks, true, true, 3, 12, 16), 8);
    let mut sp = stan.init_params(&mut rng);
    let dp = disc.init_params(&mut rng);
    let windows = sine_windows(4, 3, 12, &mut rng);
    let mut adam = AdamState::new(AdamConfig::with_lr(1e-3));
    let (_, first) = generator_step(&stan, &disc, 16, &mut sp, &dp, &mut adam, &windows[..2], &windows, 1.0).unwrap();
    let mut last = first;
    for _ in 0..49 {
        last = generator_step(&stan, &disc, 16, &mut sp, &dp, &mut adam, &windows[..2], &windows, 1.0).unwrap().1;
    }
    assert!(last < first, "MSE {last} did not drop below {first}");
}

#[test]
fn constant_discriminator_leaves_only_reconstruction_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let stan = tiny_stan(2, 6);
    let disc = Discriminator::new(pattern_len(1, true, true, 2, 6, 16), 5);
    let mut dp = disc.init_params(&mut rng);
    dp.insert("disc.w2", Tensor::zeros(&[5, 1]));
    let sp = stan.init_params(&mut rng);
    let windows = sine_windows(3, 2, 6, &mut rng);
    let mut with_adv = sp.clone();
    let mut without = sp.clone();
    let mut a1 = AdamState::new(AdamConfig::default());
    let mut a2 = AdamState::new(AdamConfig::default());
    let (lg1, m1) = generator_step(&stan, &disc, 16, &mut with_adv, &dp, &mut a1, &windows, &windows, 1.0).unwrap();
    let (lg0, m0) = generator_step(&stan, &disc, 16, &mut without, &dp, &mut a2, &windows, &windows, 0.0).unwrap();
    assert_eq!(lg1, -0.5);
    assert_eq!(lg0, -0.5);
    assert_eq!(m1, m0);
    assert_eq!(with_adv, without);
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let stan = tiny_stan(2, 8);
    let windows = sine_windows(10, 2, 8, &mut rng);
    let source = |i: usize| windows[i].clone();
    let cfg = AdversarialConfig {
        epochs: 3,
        batch: 2,
        hidden: 6,
        ratio: 2,
        ..AdversarialConfig::default()
    };
    let pre = [0, 1, 2, 3];
    let inter = [4, 5, 6, 7, 8, 9];
    let (m1, log1) = train(&stan, &cfg, &pre, &inter, &source, 77).unwrap();
    let (m2, log2) = train(&stan, &cfg, &pre, &inter, &source, 77).unwrap();
    assert_eq!(log1.len(), 3);
    assert_eq!(m1.params, m2.params);
    for (a, b) in log1.iter().zip(&log2) {
        assert_eq!((a.loss_d, a.loss_g, a.mse, a.gp), (b.loss_d, b.loss_g, b.mse, b.gp));
    }
    let (m3, _) = train(&stan, &cfg, &pre, &inter, &source, 78).unwrap();
    assert_ne!(m1.params, m3.params);
    let s = m1.score(&windows[0]).unwrap();
    assert!(s > 0.0 && s < 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    m1.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back.params, m1.params);
    assert_eq!(back.score(&windows[0]).unwrap(), s);
    std::fs::write(&path, b"ICTUS01").unwrap();
    assert!(TrainedModel::load(&path).is_err());
}

#[test]
fn training_needs_both_classes() {
    let stan = tiny_stan(2, 8);
    let source = |_: usize| Tensor::zeros(&[2, 8]);
    let cfg = AdversarialConfig::default();
    assert!(matches!(train(&stan, &cfg, &[], &[1], &source, 0), Err(AdversaryError::EmptyBatch)));
}

fn brute_auc(pre: &[f64], inter: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &p in pre {
        for &i in inter {
            acc += if i > p {
                1.0
            } else if i == p {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / (pre.len() * inter.len()) as f64
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.1, 0.2], &[0.8, 0.9]), Some(1.0));
    assert_eq!(auc(&[0.8, 0.9], &[0.1, 0.2]), Some(0.0));
    assert_eq!(auc(&[0.5, 0.5], &[0.5]), Some(0.5));
    assert_eq!(auc(&[], &[0.5]), None);
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count(
        pre in prop::collection::vec(0u8..6, 1..12),
        inter in prop::collection::vec(0u8..6, 1..12),
    ) {
        let p: Vec<f64> = pre.iter().map(|&v| v as f64 / 5.0).collect();
        let i: Vec<f64> = inter.iter().map(|&v| v as f64 / 5.0).collect();
        prop_assert!((auc(&p, &i).unwrap() - brute_auc(&p, &i)).abs() < 1e-12);
    }

    #[test]
    fn scores_are_monotone_in_the_preactivation(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, p) = small_disc(4, 3, &mut rng);
        let zs: Vec<Tensor> = (0..6).map(|_| random_pattern(4, &mut rng)).collect();
        let scores = d.discriminate_batch(&p, &zs).unwrap();
        let w1 = p.get("disc.w1").unwrap().data();
        let b1 = p.get("disc.b1").unwrap().data();
        let w2 = p.get("disc.w2").unwrap().data();
        let logits: Vec<f64> = zs.iter().map(|z| {
            (0..3).map(|j| {
                let h = (0..4).map(|i| z.data()[i] * w1[i * 3 + j]).sum::<f64>() + b1[j];
                h.max(0.0) * w2[j]
            }).sum::<f64>()
        }).collect();
        for a in 0..6 {
            prop_assert!(scores[a] > 0.0 && scores[a] < 1.0);
            for b in 0..6 {
                if logits[a] < logits[b] - 1e-12 {
                    prop_assert!(scores[a] <= scores[b]);
                }
            }
        }
    }
}
