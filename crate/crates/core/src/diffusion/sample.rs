//! Deterministic DDIM sampling and noisy-render refinement.
//!
//! Reference features do not depend on the sampler step (the reference is
//! clean and its timestep pinned to 0), so they are computed once and fed
//! to every step's graph as constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::MicroDiffusion;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor};

/// Conditioning inputs for sampling: one or more (reference image, encoded
/// reference map) pairs plus the target's encoded map. Images are
/// channel-major in `[-1,1]`.
#[derive(Clone, Debug)]
pub struct Condition<T: Scalar> {
    pub references: Vec<(Tensor<T>, Tensor<T>)>,
    pub enc_target: Tensor<T>,
}

/// Reference features materialized as plain tensors.
struct CachedRefs<T: Scalar> {
    per_ref: Vec<[Tensor<T>; 3]>,
}

fn cache_ref_features<T: Scalar>(
    model: &MicroDiffusion,
    store: &ParamStore<T>,
    cond: &Condition<T>,
) -> Result<CachedRefs<T>> {
    if cond.references.is_empty() {
        return Err(Error::InvalidParameter("sampling needs at least one reference".into()));
    }
    let mut per_ref = Vec::with_capacity(cond.references.len());
    for (img, enc) in &cond.references {
        let mut g = Graph::<T>::new();
        g.set_check_finite(false);
        let z_r = g.constant(img.clone())?;
        let enc_r = g.constant(enc.clone())?;
        let feats = model.ref_features(&mut g, store, z_r, enc_r)?;
        per_ref.push([
            g.value(feats[0]).clone(),
            g.value(feats[1]).clone(),
            g.value(feats[2]).clone(),
        ]);
    }
    Ok(CachedRefs { per_ref })
}

fn eps_step<T: Scalar>(
    model: &MicroDiffusion,
    store: &ParamStore<T>,
    cached: &CachedRefs<T>,
    enc_target: &Tensor<T>,
    z: &Tensor<T>,
    tau: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::<T>::new();
    g.set_check_finite(false);
    let zv = g.constant(z.clone())?;
    let enc_t = g.constant(enc_target.clone())?;
    let refs: Result<Vec<[crate::tensor::ValId; 3]>> = cached
        .per_ref
        .iter()
        .map(|feats| {
            Ok([
                g.constant(feats[0].clone())?,
                g.constant(feats[1].clone())?,
                g.constant(feats[2].clone())?,
            ])
        })
        .collect();
    let eps = model.eps_conditional(&mut g, store, zv, tau, enc_t, &refs?)?;
    let out = g.value(eps).clone();
    if !out.all_finite() {
        return Err(Error::NonFinite { node: format!("eps at tau {tau}") });
    }
    Ok(out)
}

/// Runs the DDIM trajectory over the given descending timesteps starting
/// from `z_start` at `taus[0]`, with `eps_of` supplying the noise
/// prediction. Exposed so tests can drive the sampler with an oracle
/// predictor.
pub fn ddim_trajectory<T: Scalar>(
    model: &MicroDiffusion,
    z_start: Tensor<T>,
    taus: &[usize],
    mut eps_of: impl FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let schedule = model.config().schedule()?;
    let mut z = z_start;
    let mut path: Vec<usize> = taus.to_vec();
    path.push(0);
    for w in path.windows(2) {
        let (tau, tau_prev) = (w[0], w[1]);
        let eps_hat = eps_of(&z, tau)?;
        let next = schedule.ddim_step(&z.to_f64_vec(), &eps_hat.to_f64_vec(), tau, tau_prev);
        z = Tensor::<f64>::from_vec(z.shape(), next).cast::<T>();
    }
    Ok(z)
}

/// Deterministic conditional sampling: pure noise at the final training
/// step, then `steps` DDIM updates down to 0. Fixed (seed, condition,
/// params) give bit-identical outputs.
pub fn ddim_sample<T: Scalar>(
    model: &MicroDiffusion,
    store: &ParamStore<T>,
    cond: &Condition<T>,
    steps: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    let cfg = model.config();
    let schedule = cfg.schedule()?;
    let taus = schedule.ddim_timesteps(steps)?;
    let cached = cache_ref_features(model, store, cond)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = Tensor::<f64>::randn(&[3, cfg.height, cfg.width], 1.0, &mut rng).cast::<T>();
    ddim_trajectory(model, z0, &taus, |z, tau| {
        eps_step(model, store, &cached, &cond.enc_target, z, tau)
    })
}

/// Refinement: noise the candidate to `tau = round(s * T)`, then run the
/// conditional DDIM tail from there. `s == 0` returns the input
/// byte-identically; `s == 1` noises all the way to the final training
/// step before denoising.
pub fn refine_render<T: Scalar>(
    model: &MicroDiffusion,
    store: &ParamStore<T>,
    candidate: &Tensor<T>,
    s: f64,
    cond: &Condition<T>,
    seed: u64,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParameter(format!("noise scale s={s} outside [0, 1]")));
    }
    let cfg = model.config();
    let schedule = cfg.schedule()?;
    let tau0 = (s * cfg.t_max as f64).round() as usize;
    if tau0 == 0 {
        return Ok(candidate.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (noised, _) = schedule.add_noise(&candidate.to_f64_vec(), tau0, &mut rng)?;
    let z = Tensor::<f64>::from_vec(candidate.shape(), noised).cast::<T>();
    // Tail of the sampler grid at or below the entry step.
    let taus: Vec<usize> = schedule
        .ddim_timesteps(cfg.sampler_steps)?
        .into_iter()
        .filter(|&t| t <= tau0)
        .collect();
    if taus.is_empty() {
        // Entry step below the coarsest grid point: single hop to zero.
        return ddim_trajectory(model, z, &[tau0], |zv, tau| {
            let cached = cache_ref_features(model, store, cond)?;
            eps_step(model, store, &cached, &cond.enc_target, zv, tau)
        });
    }
    let cached = cache_ref_features(model, store, cond)?;
    // Enter the grid: if tau0 is not on it, take one step from tau0 to the
    // first grid point.
    let mut z = z;
    if taus[0] != tau0 {
        let eps_hat = eps_step(model, store, &cached, &cond.enc_target, &z, tau0)?;
        let next = schedule.ddim_step(&z.to_f64_vec(), &eps_hat.to_f64_vec(), tau0, taus[0]);
        z = Tensor::<f64>::from_vec(candidate.shape(), next).cast::<T>();
    }
    ddim_trajectory(model, z, &taus, |zv, tau| {
        eps_step(model, store, &cached, &cond.enc_target, zv, tau)
    })
}
