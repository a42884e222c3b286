//! Discriminator over aggregated attention patterns and the adversarial
//! objective with gradient penalty.
//!
//! Score convention: the discriminator is pushed toward 0 on preictal
//! patterns and toward 1 on interictal ones.

mod train;

pub use train::{generator_step, train, write_log, EpochLog, TrainedModel, WindowSource};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{glorot_uniform, AdamConfig, AdamState, Graph, NumericsError, ParameterStore, PoolCap, Tensor, Var};
use crate::stan::{AttentionBundle, StanOutput};

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("pattern length {got}, discriminator expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("batch sizes differ: {pre} preictal vs {inter} interictal")]
    UnevenBatch { pre: usize, inter: usize },
    #[error("invalid adversarial config: {0}")]
    Config(String),
}

impl AdversaryError {
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            AdversaryError::Numerics(NumericsError::Divergence { .. } | NumericsError::NonFinite { .. })
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    /// Gradient-penalty weight.
    pub lambda: f64,
    pub disc_lr: f64,
    pub gen_lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Critic updates per generator update.
    pub ratio: usize,
    /// Weight of the adversarial term in the generator objective.
    pub gamma: f64,
    pub hidden: usize,
    /// Side cap for pooled attention maps.
    pub pool: usize,
    /// Caps the windows drawn per class in one epoch. `None` uses the
    /// smaller class in full.
    pub max_windows_per_epoch: Option<usize>,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            disc_lr: 1e-4,
            gen_lr: 1e-3,
            epochs: 100,
            batch: 32,
            ratio: 1,
            gamma: 1.0,
            hidden: 150,
            pool: 16,
            max_windows_per_epoch: None,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0) {
            return Err(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.ratio == 0 || self.batch == 0 || self.hidden == 0 || self.pool == 0 {
            return Err("ratio, batch, hidden and pool must be at least 1".into());
        }
        if !(self.disc_lr > 0.0 && self.gen_lr > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if self.max_windows_per_epoch == Some(0) {
            return Err("max_windows_per_epoch must be positive".into());
        }
        Ok(())
    }
}

/// Length of the aggregated pattern for a model shape.
pub fn pattern_len(blocks: usize, spatial: bool, temporal: bool, n: usize, t: usize, pool: usize) -> usize {
    let s = if spatial { n.min(pool).pow(2) } else { 0 };
    let tm = if temporal { t.min(pool).pow(2) } else { 0 };
    blocks * (s + tm)
}

/// Head-averaged, pooled and flattened maps: spatial then temporal per block.
pub fn aggregate(bundle: &AttentionBundle, pool: usize) -> Result<Tensor, NumericsError> {
    let mut g = Graph::new();
    let spatial: Vec<Var> = bundle.spatial_maps.iter().map(|m| g.constant(m.clone())).collect();
    let temporal: Vec<Var> = bundle.temporal_maps.iter().map(|m| g.constant(m.clone())).collect();
    let blocks = spatial.len().max(temporal.len());
    let mut parts = Vec::new();
    for m in 0..blocks {
        for maps in [&spatial, &temporal] {
            if let Some(&v) = maps.get(m) {
                let avg = g.mean_axis(v, 0)?;
                parts.push(pool_flat(&mut g, avg, pool)?);
            }
        }
    }
    let flat = g.concat(&parts)?;
    Ok(g.value(flat).clone())
}

fn pool_flat(g: &mut Graph, map: Var, pool: usize) -> Result<Var, NumericsError> {
    let pooled = g.avg_pool2d(map, PoolCap(pool))?;
    let len = g.value(pooled).len();
    g.reshape(pooled, &[len])
}

/// Differentiable aggregation of a forward pass, as a `1 × len` row.
///
/// Spatial maps are averaged over heads and time steps together, which
/// equals the head average of the time-averaged maps.
pub fn aggregate_graph(g: &mut Graph, out: &StanOutput, pool: usize) -> Result<Var, NumericsError> {
    let blocks = out.spatial.len().max(out.temporal.len());
    let mut parts = Vec::new();
    for m in 0..blocks {
        for maps in [&out.spatial, &out.temporal] {
            if let Some(heads) = maps.get(m) {
                let stacked = g.concat(heads)?;
                let avg = g.mean_axis(stacked, 0)?;
                parts.push(pool_flat(g, avg, pool)?);
            }
        }
    }
    let flat = g.concat(&parts)?;
    let len = g.value(flat).len();
    g.reshape(flat, &[1, len])
}

/// Two-layer MLP: `σ(ReLU(z W1 + b1) w2 + b2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub input_dim: usize,
    pub hidden: usize,
}

pub(crate) struct DiscVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl Discriminator {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self { input_dim, hidden }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParameterStore {
        let mut p = ParameterStore::new();
        p.insert("disc.w1", glorot_uniform(&[self.input_dim, self.hidden], self.input_dim, self.hidden, rng));
        p.insert("disc.b1", Tensor::zeros(&[self.hidden]));
        p.insert("disc.w2", glorot_uniform(&[self.hidden, 1], self.hidden, 1, rng));
        p.insert("disc.b2", Tensor::zeros(&[1]));
        p
    }

    pub(crate) fn vars(&self, g: &mut Graph, params: &ParameterStore, trainable: bool) -> Result<DiscVars, NumericsError> {
        let mut get = |name: &str| {
            if trainable {
                params.leaf(g, name)
            } else {
                params.frozen(g, name)
            }
        };
        Ok(DiscVars {
            w1: get("disc.w1")?,
            b1: get("disc.b1")?,
            w2: get("disc.w2")?,
            b2: get("disc.b2")?,
        })
    }

    /// Scores for a `B × input_dim` batch, as `B × 1`.
    pub(crate) fn apply(&self, g: &mut Graph, v: &DiscVars, z: Var) -> Result<Var, NumericsError> {
        let h = g.matmul(z, v.w1)?;
        let h = g.add_bias(h, v.b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, v.w2)?;
        let o = g.add_bias(o, v.b2)?;
        Ok(g.sigmoid(o))
    }

    fn check_len(&self, len: usize) -> Result<(), AdversaryError> {
        if len != self.input_dim {
            return Err(AdversaryError::LengthMismatch {
                expected: self.input_dim,
                got: len,
            });
        }
        Ok(())
    }

    fn stack(&self, patterns: &[Tensor]) -> Result<Tensor, AdversaryError> {
        if patterns.is_empty() {
            return Err(AdversaryError::EmptyBatch);
        }
        let mut data = Vec::with_capacity(patterns.len() * self.input_dim);
        for p in patterns {
            self.check_len(p.len())?;
            data.extend_from_slice(p.data());
        }
        Ok(Tensor::new(vec![patterns.len(), self.input_dim], data)?)
    }

    pub fn discriminate(&self, params: &ParameterStore, pattern: &Tensor) -> Result<f64, AdversaryError> {
        Ok(self.discriminate_batch(params, std::slice::from_ref(pattern))?[0])
    }

    pub fn discriminate_batch(&self, params: &ParameterStore, patterns: &[Tensor]) -> Result<Vec<f64>, AdversaryError> {
        let z = self.stack(patterns)?;
        let mut g = Graph::new();
        let v = self.vars(&mut g, params, false)?;
        let z = g.constant(z);
        let out = self.apply(&mut g, &v, z)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Builds `λ · mean((‖∇ẑ D(ẑ)‖ − 1)²)` on `g` for the given interpolates.
    pub(crate) fn penalty_node(&self, g: &mut Graph, v: &DiscVars, hat: Tensor, lambda: f64) -> Result<Var, NumericsError> {
        let z = g.constant(hat);
        let d = self.apply(g, v, z)?;
        let total = g.sum(d);
        let grad = g.input_gradient(total, z)?;
        let norms = g.l2_norm(grad);
        let dev = g.affine(norms, 1.0, -1.0);
        let sq = g.mul(dev, dev)?;
        let m = g.mean(sq);
        Ok(g.affine(m, lambda, 0.0))
    }

    /// Per-pair mean of `|‖∇ẑ D(ẑ)‖ − 1|`.
    pub fn gradient_norm_deviation(&self, params: &ParameterStore, hat: &[Tensor]) -> Result<f64, AdversaryError> {
        let z = self.stack(hat)?;
        let mut g = Graph::new();
        let v = self.vars(&mut g, params, false)?;
        let z = g.constant(z);
        let d = self.apply(&mut g, &v, z)?;
        let total = g.sum(d);
        let grad = g.input_gradient(total, z)?;
        let norms = g.l2_norm(grad);
        let vals = g.value(norms).data();
        Ok(vals.iter().map(|n| (n - 1.0).abs()).sum::<f64>() / vals.len() as f64)
    }
}

/// Interpolates `ε·pre + (1−ε)·inter` with one `ε ~ U(0,1)` per pair.
pub fn interpolate(pre: &[Tensor], inter: &[Tensor], rng: &mut impl Rng) -> Result<Vec<Tensor>, AdversaryError> {
    if pre.is_empty() {
        return Err(AdversaryError::EmptyBatch);
    }
    if pre.len() != inter.len() {
        return Err(AdversaryError::UnevenBatch {
            pre: pre.len(),
            inter: inter.len(),
        });
    }
    pre.iter()
        .zip(inter)
        .map(|(a, b)| {
            if a.shape() != b.shape() {
                return Err(AdversaryError::LengthMismatch {
                    expected: a.len(),
                    got: b.len(),
                });
            }
            let eps: f64 = rng.random();
            Ok(mix(a, b, eps))
        })
        .collect()
}

fn mix(a: &Tensor, b: &Tensor, eps: f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| eps * x + (1.0 - eps) * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Penalty value and its parameter gradients.
pub fn gradient_penalty(
    disc: &Discriminator,
    params: &ParameterStore,
    pre: &[Tensor],
    inter: &[Tensor],
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<(f64, BTreeMap<String, Tensor>), AdversaryError> {
    let hat = interpolate(pre, inter, rng)?;
    let hat = disc.stack(&hat)?;
    let mut g = Graph::new();
    let v = disc.vars(&mut g, params, true)?;
    let p = disc.penalty_node(&mut g, &v, hat, lambda)?;
    let grads = g.backward(p)?;
    Ok((g.value(p).item(), grads.into_params()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub penalty: f64,
}

/// `L_D = mean D(pre) − mean D(inter) + GP`, value and gradients.
pub fn discriminator_loss(
    disc: &Discriminator,
    params: &ParameterStore,
    pre: &[Tensor],
    inter: &[Tensor],
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<(CriticStats, BTreeMap<String, Tensor>), AdversaryError> {
    let zp = disc.stack(pre)?;
    let zi = disc.stack(inter)?;
    let hat = if lambda > 0.0 {
        Some(disc.stack(&interpolate(pre, inter, rng)?)?)
    } else {
        None
    };
    let mut g = Graph::new();
    let v = disc.vars(&mut g, params, true)?;
    let zp = g.constant(zp);
    let zi = g.constant(zi);
    let dp = disc.apply(&mut g, &v, zp)?;
    let di = disc.apply(&mut g, &v, zi)?;
    let mp = g.mean(dp);
    let mi = g.mean(di);
    let mut loss = g.sub(mp, mi)?;
    let mut penalty = 0.0;
    if let Some(hat) = hat {
        let p = disc.penalty_node(&mut g, &v, hat, lambda)?;
        penalty = g.value(p).item();
        loss = g.add(loss, p)?;
    }
    let grads = g.backward(loss)?;
    let stats = CriticStats {
        loss: g.value(loss).item(),
        penalty,
    };
    Ok((stats, grads.into_params()))
}

/// One Adam update of the discriminator on fixed patterns.
pub fn discriminator_step(
    disc: &Discriminator,
    params: &mut ParameterStore,
    adam: &mut AdamState,
    pre: &[Tensor],
    inter: &[Tensor],
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<CriticStats, AdversaryError> {
    let (stats, grads) = discriminator_loss(disc, params, pre, inter, lambda, rng)?;
    adam.step(params, &grads)?;
    Ok(stats)
}

pub fn disc_adam(cfg: &AdversarialConfig) -> AdamState {
    AdamState::new(AdamConfig::with_lr(cfg.disc_lr))
}

/// Probability that an interictal score exceeds a preictal one (ties count
/// one half). Returns `None` when either class is empty.
pub fn auc(pre_scores: &[f64], inter_scores: &[f64]) -> Option<f64> {
    if pre_scores.is_empty() || inter_scores.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pre_scores
        .iter()
        .map(|&s| (s, false))
        .chain(inter_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney with midranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += all[i..j].iter().filter(|e| e.1).count() as f64 * mid;
        i = j;
    }
    let (np, ni) = (pre_scores.len() as f64, inter_scores.len() as f64);
    Some((rank_sum - ni * (ni + 1.0) / 2.0) / (np * ni))
}

#[cfg(test)]
mod tests;
