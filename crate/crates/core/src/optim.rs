//! Adaptive-moment optimizer with decoupled weight decay, plus the cosine
//! learning-rate schedule.

use std::collections::BTreeMap;

use crate::tensor::{GradMap, ParamStore, Scalar};

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay. Moment buffers are kept in f64
/// regardless of the parameter storage mode.
pub struct AdamW {
    cfg: AdamWConfig,
    step: usize,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update of every parameter present in `grads`.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &GradMap<T>, lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (name, grad) in grads {
            let param = store.get_mut(name);
            let n = param.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let data = param.data_mut();
            for i in 0..n {
                let g = grad.data()[i].to_f64();
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = data[i].to_f64();
                let updated =
                    p - lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * p);
                data[i] = T::from_f64(updated);
            }
        }
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).clamp(0.0, 1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::from_vec(&[2], vec![3.0, -2.0]), true);
        let target = Tensor::from_vec(&[2], vec![0.5, 1.5]);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let mut g = Graph::new();
            let x = g.param(&store, "x").unwrap();
            let t = g.constant(target.clone()).unwrap();
            let loss = g.mean_sq_diff(x, t).unwrap();
            let grads = g.backward(loss).unwrap();
            opt.step(&mut store, &grads, 0.05);
            last = g.value(loss).item();
        }
        assert!(last < 1e-3, "loss stayed at {last}");
        assert!((store.get("x").data()[0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient_signal() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::from_vec(&[1], vec![1.0]), true);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.1, ..Default::default() });
        let mut grads = GradMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(&[1], vec![0.0]));
        for _ in 0..10 {
            opt.step(&mut store, &grads, 0.1);
        }
        let w = store.get("w").data()[0];
        assert!(w < 1.0 && w > 0.8);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(1e-4, 0, 100), 1e-4);
        assert!((cosine_lr(1e-4, 50, 100) - 0.5e-4).abs() < 1e-12);
        assert!(cosine_lr(1e-4, 100, 100).abs() < 1e-20);
    }
}
