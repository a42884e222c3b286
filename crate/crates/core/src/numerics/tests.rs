use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.25; 4]);
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 5], 3.7));
    let gamma = g.constant(Tensor::ones(&[5]));
    let beta = g.constant(Tensor::zeros(&[5]));
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_kernel_difference_example() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 4.0, 8.0]).unwrap());
    let w = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap());
    let y = g.conv1d(x, w, None, 0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 4.0]);
}

#[test]
fn conv_same_padding_preserves_length() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 4.0, 8.0]).unwrap());
    let w = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap());
    let y = g.conv1d(x, w, None, 1).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 4.0]);
}

#[test]
fn mse_gradient_closed_form() {
    let mut g = Graph::new();
    let x = g.param("x", Tensor::vector(vec![1.0, 2.0]));
    let y = g.constant(Tensor::zeros(&[2]));
    let l = g.mse(x, y).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.param("x").unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn sigmoid_slope_at_zero() {
    let mut g = Graph::new();
    let x = g.param("x", Tensor::scalar(0.0));
    let s = g.sigmoid(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param("x").unwrap().item(), 0.25);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.param("x", Tensor::zeros(&[3]));
    let y = g.relu(x);
    assert!(matches!(g.backward(y), Err(NumericsError::NonScalarLoss { .. })));
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul#2"), "{err}");
}

#[test]
fn backward_visits_shared_nodes_once() {
    // y = x * x + x, dy/dx = 2x + 1.
    let mut g = Graph::new();
    let x = g.param("x", Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    let y = g.add(sq, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.param("x").unwrap().item(), 7.0);
}

#[test]
fn relu_kink_uses_zero_subgradient() {
    let mut g = Graph::new();
    let x = g.param("x", Tensor::vector(vec![0.0, 1.0, -1.0]));
    let r = g.relu(x);
    let s = g.sum(r);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param("x").unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn linear_input_gradient_is_weight() {
    let w = vec![0.3, -1.2, 2.0];
    let mut g = Graph::new();
    let z = g.constant(Tensor::new(vec![2, 3], vec![1.0, 5.0, -2.0, 0.1, 0.0, 4.0]).unwrap());
    let wv = g.param("w", Tensor::new(vec![3, 1], w.clone()).unwrap());
    let d = g.matmul(z, wv).unwrap();
    let total = g.sum(d);
    let grad = g.input_gradient(total, z).unwrap();
    let got = g.value(grad).data().to_vec();
    assert_eq!(got, [w.clone(), w].concat());
}

#[test]
fn linear_penalty_closed_form() {
    // P = λ(‖w‖ − 1)²,  ∂P/∂w = 2λ(‖w‖ − 1) w/‖w‖.
    let lambda = 10.0;
    let w = [1.5, -0.5, 2.0];
    let norm = w.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    let mut g = Graph::new();
    let z = g.constant(Tensor::new(vec![1, 3], vec![0.2, 0.4, -0.3]).unwrap());
    let wv = g.param("w", Tensor::new(vec![3, 1], w.to_vec()).unwrap());
    let d = g.matmul(z, wv).unwrap();
    let total = g.sum(d);
    let grad = g.input_gradient(total, z).unwrap();
    let n = g.l2_norm(grad);
    let c = g.affine(n, 1.0, -1.0);
    let sq = g.mul(c, c).unwrap();
    let m = g.mean(sq);
    let p = g.affine(m, lambda, 0.0);
    assert!((g.value(p).item() - lambda * (norm - 1.0).powi(2)).abs() < 1e-12);
    let grads = g.backward(p).unwrap();
    let got = grads.param("w").unwrap().data();
    for (gi, wi) in got.iter().zip(w) {
        let want = 2.0 * lambda * (norm - 1.0) * wi / norm;
        assert!((gi - want).abs() < 1e-12);
    }
}

#[test]
fn second_order_rejects_unsupported_ops() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[1, 3]));
    let s = g.softmax(z, 1).unwrap();
    let t = g.sum(s);
    assert!(matches!(
        g.input_gradient(t, z),
        Err(NumericsError::UnsupportedSecondOrder { .. })
    ));
}

#[test]
fn identity_graph_checks_exactly() {
    let mut store = ParameterStore::new();
    store.insert("p", Tensor::vector(vec![0.625, -0.375, 1.5]));
    let report = grad_check(&store, |g, s| {
        let p = s.leaf(g, "p")?;
        Ok(g.sum(p))
    }, 1, 16)
    .unwrap();
    assert_eq!(report.max_rel_error, 0.0);
}

fn bad_square_backward(x: &Tensor, _y: &Tensor, dy: &Tensor) -> Tensor {
    // Wrong on purpose: should be 2x·dy.
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(dy.data()).map(|(v, g)| 3.0 * v * g).collect(),
    )
    .unwrap()
}

#[test]
fn corrupted_adjoint_is_flagged() {
    let mut store = ParameterStore::new();
    store.insert("p", Tensor::vector(vec![0.4, -0.9, 1.3]));
    let report = grad_check(&store, |g, s| {
        let p = s.leaf(g, "p")?;
        let q = g.custom_unary(p, "bad_square", |v| v * v, bad_square_backward)?;
        Ok(g.sum(q))
    }, 1, 16)
    .unwrap();
    assert!(report.max_rel_error > 1e-2);
}

#[test]
fn forward_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&[5, 7], &mut rng);
    let b = rand_tensor(&[7, 4], &mut rng);
    let run = || {
        let mut g = Graph::new();
        let x = g.constant(a.clone());
        let y = g.constant(b.clone());
        let m = g.matmul(x, y).unwrap();
        let s = g.softmax(m, 1).unwrap();
        g.value(s).clone()
    };
    assert_eq!(run(), run());
}

/// Loss for a single primitive applied to random parameters; the tail
/// multiplies by a fixed random tensor so every output entry matters.
fn primitive_loss(kind: u8, g: &mut Graph, s: &ParameterStore) -> Result<Var, NumericsError> {
    let a = s.leaf(g, "a")?;
    let b = s.leaf(g, "b")?;
    let out = match kind {
        0 => g.matmul_t(a, b, false, true)?,
        1 => {
            let at = g.reshape(a, &[1, s.get("a")?.shape()[0], s.get("a")?.shape()[1]])?;
            let bt = g.reshape(b, &[1, s.get("b")?.shape()[0], s.get("b")?.shape()[1]])?;
            g.batch_matmul(at, bt, true, false)?
        }
        2 => g.softmax(a, 1)?,
        3 => {
            let w = s.get("a")?.shape()[1];
            let gamma = s.leaf(g, "gamma")?;
            let beta = g.constant(Tensor::full(&[w], 0.1));
            g.layer_norm(a, gamma, beta, 1e-5)?
        }
        4 => g.sigmoid(a),
        5 => {
            let p = g.mul(a, a)?;
            g.add(p, a)?
        }
        6 => {
            let shp = s.get("a")?.shape().to_vec();
            let x = g.reshape(a, &[1, shp[0], shp[1]])?;
            let w = s.leaf(g, "kern")?;
            let bias = s.leaf(g, "kbias")?;
            g.conv1d(x, w, Some(bias), 1)?
        }
        7 => {
            let n = g.l2_norm(a);
            g.affine(n, 2.0, 0.5)
        }
        8 => g.avg_pool2d(a, PoolCap(2))?,
        9 => {
            let t = g.transpose(a)?;
            g.mean_axis(t, 0)?
        }
        10 => {
            let sc = s.leaf(g, "scalar")?;
            let x = g.scale(a, sc)?;
            let sh = s.get("a")?.shape()[1];
            let bias = g.constant(Tensor::full(&[sh], 0.3));
            g.add_bias(x, bias)?
        }
        11 => {
            let fa = g.reshape(a, &[s.get("a")?.len()])?;
            let fb = g.reshape(b, &[s.get("b")?.len()])?;
            g.concat(&[fa, fb])?
        }
        _ => {
            let c = g.constant(Tensor::full(s.get("a")?.shape(), 0.2));
            let m = g.mse(a, c)?;
            return Ok(m);
        }
    };
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let weights = Tensor::new(shape, (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect())?;
    let w = g.constant(weights);
    let prod = g.mul(out, w)?;
    let relu_free = g.sum(prod);
    Ok(relu_free)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn primitives_match_finite_differences(kind in 0u8..13, rows in 1usize..5, cols in 2usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        store.insert("a", rand_tensor(&[rows, cols], &mut rng));
        store.insert("b", rand_tensor(&[rows, cols], &mut rng));
        store.insert("gamma", rand_tensor(&[cols], &mut rng));
        store.insert("kern", rand_tensor(&[3, rows, 2], &mut rng));
        store.insert("kbias", rand_tensor(&[3], &mut rng));
        store.insert("scalar", Tensor::scalar(rng.random_range(0.5..2.0)));
        let report = grad_check(&store, |g, s| primitive_loss(kind, g, s), seed, 64).unwrap();
        prop_assert!(report.max_rel_error <= 1e-4, "kind {} report {:?}", kind, report);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rand_tensor(&[rows, cols], &mut rng).map(|v| v * 30.0);
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = g.softmax(x, 1).unwrap();
        for row in g.value(y).data().chunks(cols) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
