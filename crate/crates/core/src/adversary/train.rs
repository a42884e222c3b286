use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, aggregate_graph, disc_adam, discriminator_step, AdversarialConfig, AdversaryError, Discriminator};
use crate::numerics::{checkpoint, AdamConfig, AdamState, Graph, NumericsError, ParameterStore, Tensor, Var};
use crate::stan::{Stan, StanOutput};

/// Random access to `n × T` windows by id.
pub trait WindowSource: Sync {
    fn window(&self, id: usize) -> Tensor;
}

impl<F: Fn(usize) -> Tensor + Sync> WindowSource for F {
    fn window(&self, id: usize) -> Tensor {
        self(id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub mse: f64,
    pub gp: f64,
    pub wall_seconds: f64,
}

/// A generator/discriminator pair with their parameters.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub stan: Stan,
    pub disc: Discriminator,
    pub pool: usize,
    /// `stan.*` and `disc.*` entries.
    pub params: ParameterStore,
}

impl TrainedModel {
    pub fn pattern(&self, window: &Tensor) -> Result<Tensor, AdversaryError> {
        let bundle = self.stan.run(&self.params, window)?;
        Ok(aggregate(&bundle, self.pool)?)
    }

    /// Anomaly score of one window (near 0 means preictal).
    pub fn score(&self, window: &Tensor) -> Result<f64, AdversaryError> {
        let p = self.pattern(window)?;
        self.disc.discriminate(&self.params, &p)
    }

    /// Writes parameters to `path` and the architecture next to it as JSON.
    pub fn save(&self, path: &Path) -> Result<(), AdversaryError> {
        checkpoint::save(path, &self.params)?;
        let spec = ModelSpec {
            stan: self.stan.clone(),
            disc: self.disc.clone(),
            pool: self.pool,
        };
        let json = serde_json::to_string_pretty(&spec).expect("model spec serializes");
        std::fs::write(path.with_extension("json"), json).map_err(NumericsError::Io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedModel, AdversaryError> {
        let text = std::fs::read_to_string(path.with_extension("json")).map_err(NumericsError::Io)?;
        let spec: ModelSpec = serde_json::from_str(&text)
            .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.with_extension("json").display())))?;
        let params = checkpoint::load(path)?;
        let model = TrainedModel {
            stan: spec.stan,
            disc: spec.disc,
            pool: spec.pool,
            params,
        };
        // A dry run catches parameter files that do not fit the architecture.
        model.score(&Tensor::zeros(&[model.stan.channels, model.stan.window_len]))?;
        Ok(model)
    }

    /// Scores windows in parallel; output order follows `ids`.
    pub fn score_ids(&self, ids: &[usize], source: &impl WindowSource) -> Result<Vec<f64>, AdversaryError> {
        ids.par_iter().map(|&i| self.score(&source.window(i))).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelSpec {
    stan: Stan,
    disc: Discriminator,
    pool: usize,
}

struct Pass {
    graph: Graph,
    out: StanOutput,
    pattern: Var,
    window: Tensor,
}

fn forward_pass(stan: &Stan, params: &ParameterStore, pool: usize, window: Tensor) -> Result<Pass, AdversaryError> {
    let mut graph = Graph::new();
    let out = stan.forward(&mut graph, params, &window, true)?;
    let pattern = aggregate_graph(&mut graph, &out, pool)?;
    Ok(Pass {
        graph,
        out,
        pattern,
        window,
    })
}

struct WindowGrad {
    mse: f64,
    score: Option<f64>,
    grads: BTreeMap<String, Tensor>,
}

/// Finishes one window's generator loss on its retained graph:
/// `mse_weight · MSE − adv_weight · D(pattern)`, with either term optional.
fn generator_grads(
    mut pass: Pass,
    disc: &Discriminator,
    disc_params: &ParameterStore,
    mse_weight: Option<f64>,
    adv_weight: Option<f64>,
) -> Result<WindowGrad, AdversaryError> {
    let g = &mut pass.graph;
    let target = g.constant(pass.window);
    let mse = g.mse(pass.out.reconstruction, target)?;
    let mut loss = g.affine(mse, mse_weight.unwrap_or(0.0), 0.0);
    let mut score = None;
    if let Some(weight) = adv_weight {
        let v = disc.vars(g, disc_params, false)?;
        let d = disc.apply(g, &v, pass.pattern)?;
        let d = g.mean(d);
        score = Some(g.value(d).item());
        let term = g.affine(d, -weight, 0.0);
        loss = g.add(loss, term)?;
    }
    let grads = g.backward(loss)?;
    Ok(WindowGrad {
        mse: g.value(mse).item(),
        score,
        grads: grads.into_params(),
    })
}

/// Per-window generator gradients, summed in input order.
fn generator_update(
    jobs: Vec<(Pass, Option<f64>, Option<f64>)>,
    disc: &Discriminator,
    disc_params: &ParameterStore,
) -> Result<(BTreeMap<String, Tensor>, Vec<WindowGrad>), AdversaryError> {
    let mut results: Vec<WindowGrad> = jobs
        .into_par_iter()
        .map(|(pass, mse_w, adv_w)| generator_grads(pass, disc, disc_params, mse_w, adv_w))
        .collect::<Result<_, _>>()?;
    let mut grads = BTreeMap::new();
    for r in &mut results {
        accumulate(&mut grads, std::mem::take(&mut r.grads));
    }
    Ok((grads, results))
}

/// One Adam update of the generator on `MSE(windows) + γ · L_G(pre)`, where
/// `L_G = −mean D(pattern)` over the preictal batch. Returns `(L_G, MSE)`.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    stan: &Stan,
    disc: &Discriminator,
    pool: usize,
    stan_params: &mut ParameterStore,
    disc_params: &ParameterStore,
    adam: &mut AdamState,
    pre: &[Tensor],
    windows: &[Tensor],
    gamma: f64,
) -> Result<(f64, f64), AdversaryError> {
    if pre.is_empty() || windows.is_empty() {
        return Err(AdversaryError::EmptyBatch);
    }
    let adv = gamma / pre.len() as f64;
    let mse_w = 1.0 / windows.len() as f64;
    let jobs: Vec<(Pass, Option<f64>, Option<f64>)> = pre
        .par_iter()
        .map(|w| forward_pass(stan, stan_params, pool, w.clone()).map(|p| (p, None, Some(adv))))
        .chain(
            windows
                .par_iter()
                .map(|w| forward_pass(stan, stan_params, pool, w.clone()).map(|p| (p, Some(mse_w), None))),
        )
        .collect::<Result<_, _>>()?;
    let (grads, results) = generator_update(jobs, disc, disc_params)?;
    let l_g = -results.iter().filter_map(|r| r.score).sum::<f64>() / pre.len() as f64;
    let mse = results[pre.len()..].iter().map(|r| r.mse).sum::<f64>() / windows.len() as f64;
    adam.step(stan_params, &grads)?;
    Ok((l_g, mse))
}

fn accumulate(total: &mut BTreeMap<String, Tensor>, part: BTreeMap<String, Tensor>) {
    for (k, v) in part {
        match total.get_mut(&k) {
            Some(acc) => acc.add_assign(&v),
            None => {
                total.insert(k, v);
            }
        }
    }
}

/// Alternating adversarial training on preictal and interictal window ids.
///
/// Each step draws a balanced batch, runs the generator forward once per
/// window, performs `ratio` critic updates on the resulting patterns (fresh
/// interpolation weights each time), then one generator update against the
/// refreshed discriminator. An epoch covers the smaller class once, or
/// `max_windows_per_epoch` windows per class when set.
pub fn train(
    stan: &Stan,
    cfg: &AdversarialConfig,
    pre: &[usize],
    inter: &[usize],
    source: &impl WindowSource,
    seed: u64,
) -> Result<(TrainedModel, Vec<EpochLog>), AdversaryError> {
    cfg.validate().map_err(AdversaryError::Config)?;
    if pre.is_empty() || inter.is_empty() {
        return Err(AdversaryError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = &stan.config;
    let disc = Discriminator::new(
        super::pattern_len(c.blocks, c.use_spatial, c.use_temporal, stan.channels, stan.window_len, cfg.pool),
        cfg.hidden,
    );
    let mut stan_params = stan.init_params(&mut rng);
    let mut disc_params = disc.init_params(&mut rng);
    let mut gen_adam = AdamState::new(AdamConfig::with_lr(cfg.gen_lr));
    let mut critic_adam = disc_adam(cfg);

    let per_epoch = pre.len().min(inter.len()).min(cfg.max_windows_per_epoch.unwrap_or(usize::MAX));
    let steps = per_epoch.div_ceil(cfg.batch);
    let b = cfg.batch;
    let adversarial = (cfg.gamma != 0.0).then_some(cfg.gamma / b as f64);
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let mut pre_order = pre.to_vec();
        let mut inter_order = inter.to_vec();
        pre_order.shuffle(&mut rng);
        inter_order.shuffle(&mut rng);
        let (mut sum_d, mut sum_gp, mut sum_g, mut sum_mse) = (0.0, 0.0, 0.0, 0.0);
        for s in 0..steps {
            let pick = |order: &[usize]| -> Vec<usize> { (0..b).map(|j| order[(s * b + j) % order.len()]).collect() };
            let ids: Vec<(usize, bool)> = pick(&pre_order)
                .into_iter()
                .map(|i| (i, true))
                .chain(pick(&inter_order).into_iter().map(|i| (i, false)))
                .collect();

            let passes: Vec<Pass> = ids
                .par_iter()
                .map(|&(id, _)| forward_pass(stan, &stan_params, cfg.pool, source.window(id)))
                .collect::<Result<_, _>>()?;
            let patterns: Vec<Tensor> = passes.iter().map(|p| p.graph.value(p.pattern).clone()).collect();
            let (zp, zi) = patterns.split_at(b);

            for _ in 0..cfg.ratio {
                let stats = discriminator_step(&disc, &mut disc_params, &mut critic_adam, zp, zi, cfg.lambda, &mut rng)?;
                sum_d += stats.loss;
                sum_gp += stats.penalty;
            }

            let n_windows = passes.len();
            let mse_w = Some(1.0 / n_windows as f64);
            let jobs = passes
                .into_iter()
                .zip(&ids)
                .map(|(pass, &(_, is_pre))| (pass, mse_w, adversarial.filter(|_| is_pre)))
                .collect();
            let (grads, results) = generator_update(jobs, &disc, &disc_params)?;
            let mse: f64 = results.iter().map(|r| r.mse).sum();
            let score: f64 = results.iter().filter_map(|r| r.score).sum();
            gen_adam.step(&mut stan_params, &grads)?;
            sum_mse += mse / n_windows as f64;
            sum_g += -score / b as f64;
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            loss_d: sum_d / (steps * cfg.ratio) as f64,
            loss_g: if adversarial.is_some() { sum_g / steps as f64 } else { 0.0 },
            mse: sum_mse / steps as f64,
            gp: sum_gp / (steps * cfg.ratio) as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} L_D {:.5} L_G {:.5} MSE {:.5} GP {:.5} ({:.1}s)",
            entry.epoch,
            entry.loss_d,
            entry.loss_g,
            entry.mse,
            entry.gp,
            entry.wall_seconds
        );
        log.push(entry);
    }
    let mut params = stan_params;
    params.merge(disc_params);
    Ok((
        TrainedModel {
            stan: stan.clone(),
            disc,
            pool: cfg.pool,
            params,
        },
        log,
    ))
}

/// Writes the training log as CSV.
pub fn write_log(path: &std::path::Path, log: &[EpochLog]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "L_D", "L_G", "MSE", "GP", "wall_seconds"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.loss_d.to_string(),
            e.loss_g.to_string(),
            e.mse.to_string(),
            e.gp.to_string(),
            format!("{:.3}", e.wall_seconds),
        ])?;
    }
    w.flush()
}
