//! Central finite-difference verification of [`Graph::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, ParameterStore, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative-error floor: gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

fn step_for(x: f64) -> f64 {
    // Power-of-two step so `x ± h` are exact for moderate |x|.
    let scale = x.abs().max(1.0);
    let h = 2f64.powi(-17) * scale;
    2f64.powi(h.log2().round() as i32)
}

/// Compares analytic gradients of `loss_fn` against central differences.
///
/// `loss_fn` builds a scalar loss from the store. At most `max_per_param`
/// entries are probed per parameter, chosen by `seed`.
pub fn grad_check<F>(
    params: &ParameterStore,
    loss_fn: F,
    seed: u64,
    max_per_param: usize,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    let grads = g.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let eval = |store: &ParameterStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store)?;
        Ok(g.value(l).item())
    };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let n = value.len();
        let indices: Vec<usize> = if n <= max_per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, max_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let analytic = grads.param(name);
        for i in indices {
            let x = value.data()[i];
            let h = step_for(x);
            probe.get_mut(name)?.data_mut()[i] = x + h;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = x - h;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.map_or(0.0, |t| t.data()[i]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
