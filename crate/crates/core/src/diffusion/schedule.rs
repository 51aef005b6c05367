//! Noise schedule and the deterministic sampler arithmetic.

use rand::Rng;

use crate::error::{Error, Result};

/// Default training step count.
pub const DEFAULT_T: usize = 100;
/// Default linear-schedule endpoints.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
/// Default sampler step count.
pub const DEFAULT_SAMPLER_STEPS: usize = 50;

/// Per-step noise variances and their cumulative products.
///
/// `alpha_bar[0] = 1` by convention, so noising at step 0 returns the
/// input exactly.
#[derive(Clone, Debug)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear beta ramp over `t_max` steps.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        for &b in &betas {
            alpha_bar.push(alpha_bar.last().unwrap() * (1.0 - b));
        }
        Ok(DiffusionSchedule { betas, alpha_bar })
    }

    pub fn default_linear() -> Self {
        DiffusionSchedule::linear(DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Cumulative product at step `tau` (0..=t_max).
    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bar[tau]
    }

    /// Forward process: `z_tau = sqrt(a_bar) z0 + sqrt(1 - a_bar) eps`.
    /// Returns the noised signal and the exact noise used. At `tau == 0`
    /// the input comes back bit-identical.
    pub fn add_noise(
        &self,
        z0: &[f64],
        tau: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if tau > self.t_max() {
            return Err(Error::InvalidParameter(format!(
                "tau {tau} out of range 0..={}",
                self.t_max()
            )));
        }
        use rand_distr::{Distribution, StandardNormal};
        let eps: Vec<f64> = (0..z0.len()).map(|_| StandardNormal.sample(rng)).collect();
        if tau == 0 {
            return Ok((z0.to_vec(), eps));
        }
        let ab = self.alpha_bar(tau);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let z = z0.iter().zip(eps.iter()).map(|(&z, &e)| sa * z + sn * e).collect();
        Ok((z, eps))
    }

    /// Descending sampler timesteps: `steps` evaluations ending with an
    /// implicit final hop to 0. For `t_max = 100, steps = 50` this is
    /// `[100, 98, ..., 2]`.
    pub fn ddim_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.t_max() {
            return Err(Error::InvalidParameter(format!(
                "sampler steps {steps} out of range 1..={}",
                self.t_max()
            )));
        }
        Ok((1..=steps).map(|i| i * self.t_max() / steps).rev().collect())
    }

    /// One deterministic update from `tau` to `tau_prev < tau`:
    /// reconstruct the clean estimate, then re-noise at the earlier step.
    pub fn ddim_step(&self, z_tau: &[f64], eps_hat: &[f64], tau: usize, tau_prev: usize) -> Vec<f64> {
        debug_assert!(tau_prev < tau && tau <= self.t_max());
        let ab = self.alpha_bar(tau);
        let ab_prev = self.alpha_bar(tau_prev);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        z_tau
            .iter()
            .zip(eps_hat.iter())
            .map(|(&z, &e)| {
                let x0 = (z - sn * e) / sa;
                pa * x0 + pn * e
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_invariants() {
        let s = DiffusionSchedule::default_linear();
        assert_eq!(s.t_max(), 100);
        assert!((s.betas()[0] - 1e-4).abs() < 1e-15);
        assert!((s.betas()[99] - 0.02).abs() < 1e-15);
        // Betas monotone non-decreasing in (0,1); alpha_bar strictly
        // decreasing in (0,1].
        for w in s.betas().windows(2) {
            assert!(w[0] <= w[1] && w[0] > 0.0 && w[1] < 1.0);
        }
        for tau in 1..=100 {
            assert!(s.alpha_bar(tau) < s.alpha_bar(tau - 1));
            assert!(s.alpha_bar(tau) > 0.0 && s.alpha_bar(tau) <= 1.0);
        }
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn add_noise_tau_zero_is_identity() {
        let s = DiffusionSchedule::default_linear();
        let z0 = vec![0.25, -0.5, 0.75];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (z, eps) = s.add_noise(&z0, 0, &mut rng).unwrap();
        assert_eq!(z, z0);
        assert_eq!(eps.len(), 3);
    }

    #[test]
    fn add_noise_is_deterministic_per_seed() {
        let s = DiffusionSchedule::default_linear();
        let z0 = vec![0.1; 64];
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            s.add_noise(&z0, 37, &mut rng).unwrap()
        };
        let (a, ea) = draw();
        let (b, eb) = draw();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(ea.iter().zip(eb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn add_noise_variance_matches_theory() {
        // Monte-Carlo oracle: Var(z_tau) ~= a_bar Var(z0) + (1 - a_bar).
        let s = DiffusionSchedule::default_linear();
        let tau = 60;
        let n = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // z0 with known variance: +-1 alternating, variance 1, mean 0.
        let z0: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let var_z0 = 1.0;
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        let mut count = 0usize;
        for _ in 0..n {
            let (z, _) = s.add_noise(&z0, tau, &mut rng).unwrap();
            for v in z {
                acc += v;
                acc_sq += v * v;
                count += 1;
            }
        }
        let mean = acc / count as f64;
        let var = acc_sq / count as f64 - mean * mean;
        let ab = s.alpha_bar(tau);
        let expect = ab * var_z0 + (1.0 - ab);
        // Standard error of the variance estimate ~ sqrt(2/n) * var.
        let se = (2.0 / count as f64).sqrt() * expect;
        assert!(
            (var - expect).abs() < 3.0 * se + 1e-3,
            "empirical {var} vs {expect} (se {se})"
        );
    }

    #[test]
    fn ddim_timesteps_grid() {
        let s = DiffusionSchedule::default_linear();
        let ts = s.ddim_timesteps(50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], 100);
        assert_eq!(*ts.last().unwrap(), 2);
        let full = s.ddim_timesteps(100).unwrap();
        assert_eq!(full[0], 100);
        assert_eq!(*full.last().unwrap(), 1);
        assert!(s.ddim_timesteps(0).is_err());
        assert!(s.ddim_timesteps(101).is_err());
    }

    #[test]
    fn ddim_with_oracle_noise_recovers_clean_signal() {
        // If eps_hat is the true noise toward a fixed z0, each step maps
        // exactly onto the forward-process manifold of that z0 and the
        // final hop to tau=0 returns z0.
        let s = DiffusionSchedule::default_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand_distr::{Distribution, StandardNormal};
        let z0: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut z: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut taus = s.ddim_timesteps(50).unwrap();
        taus.push(0);
        for w in taus.windows(2) {
            let (tau, tau_prev) = (w[0], w[1]);
            let ab = s.alpha_bar(tau);
            let eps_hat: Vec<f64> = z
                .iter()
                .zip(z0.iter())
                .map(|(&zt, &z0v)| (zt - ab.sqrt() * z0v) / (1.0 - ab).sqrt())
                .collect();
            z = s.ddim_step(&z, &eps_hat, tau, tau_prev);
        }
        for (a, b) in z.iter().zip(z0.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
