//! Central finite differences against analytic gradients.
//!
//! Runs in f64 only: the f32 mode has too little headroom between
//! truncation and rounding error for the tolerances used here.

use rayon::prelude::*;

use super::params::{GradMap, ParamStore};
use super::Tensor;
use crate::error::Result;

/// Worst relative error observed for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Per-parameter report of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.rel_tol)
    }

    /// Parameters exceeding the tolerance, worst first.
    pub fn failures(&self) -> Vec<&ParamError> {
        let mut v: Vec<&ParamError> =
            self.params.iter().filter(|p| p.max_rel_err > self.rel_tol).collect();
        v.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));
        v
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

/// Central-difference gradients of `loss_fn` with respect to every
/// trainable parameter in `store`.
pub fn finite_diff_gradients<F>(
    store: &ParamStore<f64>,
    step: f64,
    loss_fn: F,
) -> Result<GradMap<f64>>
where
    F: Fn(&ParamStore<f64>) -> Result<f64> + Sync,
{
    let mut out = GradMap::new();
    for name in store.trainable_names() {
        let n = store.get(&name).len();
        let grads: Result<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut plus = store.clone();
                plus.get_mut(&name).data_mut()[i] += step;
                let lp = loss_fn(&plus)?;
                let mut minus = store.clone();
                minus.get_mut(&name).data_mut()[i] -= step;
                let lm = loss_fn(&minus)?;
                Ok((lp - lm) / (2.0 * step))
            })
            .collect();
        out.insert(name.clone(), Tensor::from_vec(store.get(&name).shape(), grads?));
    }
    Ok(out)
}

/// Elementwise comparison of analytic vs numeric gradients.
///
/// The error is relative where either gradient has magnitude >= 1e-6 and
/// absolute below that (both near zero means agreement, not blow-up).
pub fn compare_gradients(
    analytic: &GradMap<f64>,
    numeric: &GradMap<f64>,
    rel_tol: f64,
) -> GradCheckReport {
    let mut params = Vec::new();
    for (name, num) in numeric {
        let ana = analytic
            .get(name)
            .unwrap_or_else(|| panic!("analytic gradients missing parameter {name}"));
        let mut max_rel = 0.0f64;
        let mut worst = 0usize;
        for (i, (&a, &n)) in ana.data().iter().zip(num.data().iter()).enumerate() {
            let denom = a.abs().max(n.abs());
            let err = if denom >= 1e-6 { (a - n).abs() / denom } else { (a - n).abs() };
            if err > max_rel {
                max_rel = err;
                worst = i;
            }
        }
        params.push(ParamError { name: name.clone(), max_rel_err: max_rel, worst_index: worst });
    }
    GradCheckReport { params, rel_tol }
}

/// Full check: numeric differentiation of `loss_fn` compared against the
/// caller's analytic gradients.
pub fn gradient_check<F>(
    store: &ParamStore<f64>,
    analytic: &GradMap<f64>,
    step: f64,
    rel_tol: f64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<f64> + Sync,
{
    let numeric = finite_diff_gradients(store, step, loss_fn)?;
    Ok(compare_gradients(analytic, &numeric, rel_tol))
}
