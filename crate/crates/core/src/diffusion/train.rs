//! Two-phase training: pretrain the unconditional base, then freeze it and
//! train the conditioning pathways (control branch, zero convolutions,
//! reference attention) on noise prediction.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{is_conditional_trainable, MicroDiffusion};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::tensor::{merge_gradients, Graph, ParamStore, Scalar, Tensor};

/// One training example: target/reference images in `[-1,1]` channel-major
/// layout plus the encoded point maps (both built with one shared
/// normalization).
#[derive(Clone, Debug)]
pub struct TrainSample<T: Scalar> {
    pub target: Tensor<T>,
    pub reference: Tensor<T>,
    pub enc_target: Tensor<T>,
    pub enc_reference: Tensor<T>,
}

/// Which parameter family trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Unconditional denoiser; every `base.*` parameter trains.
    Base,
    /// Base frozen; control/zero-conv/reference-attention parameters train.
    Conditional,
}

impl Phase {
    pub fn trainable(&self, name: &str) -> bool {
        match self {
            Phase::Base => name.starts_with("base."),
            Phase::Conditional => is_conditional_trainable(name),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Emit a log record every N steps (0: only the final step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 500, batch: 8, lr: 1e-4, weight_decay: 0.01, seed: 0, log_every: 25 }
    }
}

/// One line of the JSONL training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u128,
}

fn sample_loss_graph<T: Scalar>(
    model: &MicroDiffusion,
    store: &ParamStore<T>,
    schedule: &DiffusionSchedule,
    sample: &TrainSample<T>,
    phase: Phase,
    tau: usize,
    noise_seed: u64,
) -> Result<(f64, crate::tensor::GradMap<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let z0 = sample.target.to_f64_vec();
    let (z_tau, eps) = schedule.add_noise(&z0, tau, &mut rng)?;
    let shape = sample.target.shape();
    let z_tau_t = Tensor::<f64>::from_vec(shape, z_tau).cast::<T>();
    let eps_t = Tensor::<f64>::from_vec(shape, eps).cast::<T>();

    let mut g = Graph::<T>::new();
    g.set_check_finite(false); // the loss is checked below
    let z = g.constant(z_tau_t)?;
    let eps_true = g.constant(eps_t)?;
    let eps_hat = match phase {
        Phase::Base => model.eps_unconditional(&mut g, store, z, tau)?,
        Phase::Conditional => {
            let z_r = g.constant(sample.reference.clone())?;
            let enc_r = g.constant(sample.enc_reference.clone())?;
            let enc_t = g.constant(sample.enc_target.clone())?;
            let feats = model.ref_features(&mut g, store, z_r, enc_r)?;
            model.eps_conditional(&mut g, store, z, tau, enc_t, &[feats])?
        }
    };
    let loss = g.mean_sq_diff(eps_hat, eps_true)?;
    let loss_val = g.value(loss).item().to_f64();
    if !loss_val.is_finite() {
        return Err(Error::NonFinite { node: "training loss".into() });
    }
    let grads = g.backward(loss)?;
    Ok((loss_val, grads))
}

/// Runs one phase of training. Batch elements are evaluated in parallel
/// and reduced in slot order, so results do not depend on thread timing.
/// Returns the log records it also hands to `sink` as they are produced.
pub fn train<T: Scalar>(
    model: &MicroDiffusion,
    store: &mut ParamStore<T>,
    samples: &[TrainSample<T>],
    phase: Phase,
    cfg: &TrainConfig,
    mut sink: impl FnMut(&LogRecord),
) -> Result<Vec<LogRecord>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("training needs at least one sample".into()));
    }
    let schedule = model.config().schedule()?;
    store.set_trainable_where(|name| phase.trainable(name));

    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() });
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let started = Instant::now();

    for step in 0..cfg.steps {
        // Draw the batch plan sequentially so it is independent of any
        // parallel execution below.
        let plan: Vec<(usize, usize, u64)> = (0..cfg.batch)
            .map(|_| {
                (
                    master.gen_range(0..samples.len()),
                    master.gen_range(1..=schedule.t_max()),
                    master.gen::<u64>(),
                )
            })
            .collect();
        let results: Result<Vec<_>> = plan
            .par_iter()
            .map(|&(idx, tau, noise_seed)| {
                sample_loss_graph(model, store, &schedule, &samples[idx], phase, tau, noise_seed)
            })
            .collect();
        let results = results.map_err(|e| {
            log::error!(
                "aborting at step {step}: {e}; batch plan (sample, tau, seed) = {plan:?}"
            );
            e
        })?;
        let loss = results.iter().map(|(l, _)| l).sum::<f64>() / cfg.batch as f64;
        let grad_maps: Vec<_> = results.into_iter().map(|(_, g)| g).collect();
        let merged = merge_gradients(&grad_maps);
        let lr = cosine_lr(cfg.lr, step, cfg.steps);
        opt.step(store, &merged, lr);

        let last = step + 1 == cfg.steps;
        if last || (cfg.log_every > 0 && step % cfg.log_every == 0) {
            let rec = LogRecord { step, loss, lr, wall_ms: started.elapsed().as_millis() };
            sink(&rec);
            records.push(rec);
        }
    }
    Ok(records)
}

/// Deterministic conditional loss on a fixed probe set: taus and noise are
/// derived from `seed` only, so two evaluations differ only through the
/// parameters. Used to certify a training run reduced the loss.
pub fn probe_loss<T: Scalar>(
    model: &MicroDiffusion,
    store: &ParamStore<T>,
    samples: &[TrainSample<T>],
    seed: u64,
) -> Result<f64> {
    let schedule = model.config().schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<(usize, u64)> = samples
        .iter()
        .enumerate()
        .map(|(i, _)| (rng.gen_range(1..=schedule.t_max()), rng.gen::<u64>().wrapping_add(i as u64)))
        .collect();
    let losses: Result<Vec<f64>> = samples
        .par_iter()
        .zip(plan.par_iter())
        .map(|(sample, &(tau, noise_seed))| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let z0 = sample.target.to_f64_vec();
            let (z_tau, eps) = schedule.add_noise(&z0, tau, &mut rng)?;
            let shape = sample.target.shape();
            let mut g = Graph::<T>::new();
            g.set_check_finite(false);
            let z = g.constant(Tensor::<f64>::from_vec(shape, z_tau).cast::<T>())?;
            let eps_true = g.constant(Tensor::<f64>::from_vec(shape, eps).cast::<T>())?;
            let z_r = g.constant(sample.reference.clone())?;
            let enc_r = g.constant(sample.enc_reference.clone())?;
            let enc_t = g.constant(sample.enc_target.clone())?;
            let feats = model.ref_features(&mut g, store, z_r, enc_r)?;
            let eps_hat = model.eps_conditional(&mut g, store, z, tau, enc_t, &[feats])?;
            let loss = g.mean_sq_diff(eps_hat, eps_true)?;
            Ok(g.value(loss).item().to_f64())
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
