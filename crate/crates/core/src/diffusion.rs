//! Model-free diffusion mathematics: variance schedules, forward noising,
//! DDPM and DDIM reverse steps, and classifier-free guidance.
//!
//! Timesteps are 1-based: `t` ranges over `1..=T` and `alpha_bar(0)` is 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Variance schedule with its derived products.
///
/// Arrays are stored 0-based, so `betas[t - 1]` is the variance of timestep `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule whose betas interpolate linearly from `beta_min` to `beta_max`.
    pub fn new(steps: usize, beta_min: f64, beta_max: f64, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if !(beta_min > 0.0 && beta_max < 1.0) {
            return Err(Error::invalid(format!(
                "beta bounds must lie in (0, 1), got [{beta_min}, {beta_max}]"
            )));
        }
        if beta_min > beta_max {
            return Err(Error::invalid(format!(
                "beta_min {beta_min} exceeds beta_max {beta_max}"
            )));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    if steps == 1 {
                        beta_min
                    } else {
                        beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        };
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit per-step variances.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid("every beta must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let sigmas = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i])
                    .max(0.0)
                    .sqrt()
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    /// Uniformly strided, descending timesteps over `[1, t_max]` (rounding down).
    pub fn sampling_timesteps(&self, num_steps: usize, t_max: usize) -> Result<Vec<usize>> {
        if num_steps == 0 {
            return Err(Error::invalid("num_steps must be at least 1"));
        }
        self.check_timestep(t_max)?;
        let mut ts: Vec<usize> = if num_steps == 1 {
            vec![t_max]
        } else {
            (0..num_steps)
                .map(|k| 1 + (k * (t_max - 1)) / (num_steps - 1))
                .collect()
        };
        ts.dedup();
        ts.reverse();
        Ok(ts)
    }
}

/// Result of forward noising; `eps` is retained so reconstructions can be checked exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample {
    pub x_t: Mat,
    pub t: usize,
    pub eps: Mat,
}

fn same_shape(a: &Mat, b: &Mat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    Ok(())
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(
    x0: &Mat,
    t: usize,
    eps: &Mat,
    schedule: &NoiseSchedule,
) -> Result<NoisedSample> {
    same_shape(x0, eps)?;
    schedule.check_timestep(t)?;
    let ab = schedule.alpha_bar(t);
    let x_t = x0 * ab.sqrt() + eps * (1.0 - ab).sqrt();
    Ok(NoisedSample {
        x_t,
        t,
        eps: eps.clone(),
    })
}

/// One ancestral DDPM step from `t` to `t - 1`.
pub fn ddpm_step(
    x_t: &Mat,
    t: usize,
    eps_pred: &Mat,
    schedule: &NoiseSchedule,
    z: &Mat,
) -> Result<Mat> {
    same_shape(x_t, eps_pred)?;
    same_shape(x_t, z)?;
    schedule.check_timestep(t)?;
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let mean = (x_t - &(eps_pred * coef)) / schedule.alpha(t).sqrt();
    Ok(mean + z * schedule.sigma(t))
}

/// Deterministic DDIM step from `t` to `t_prev`, returning `(x_prev, x0_hat)`.
pub fn ddim_step(
    x_t: &Mat,
    t: usize,
    t_prev: usize,
    eps_pred: &Mat,
    schedule: &NoiseSchedule,
) -> Result<(Mat, Mat)> {
    same_shape(x_t, eps_pred)?;
    schedule.check_timestep(t)?;
    if t_prev >= t {
        return Err(Error::invalid(format!(
            "t_prev ({t_prev}) must be smaller than t ({t})"
        )));
    }
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let x0_hat = (x_t - &(eps_pred * (1.0 - ab).sqrt())) / ab.sqrt();
    let x_prev = &x0_hat * ab_prev.sqrt() + eps_pred * (1.0 - ab_prev).sqrt();
    Ok((x_prev, x0_hat))
}

/// Classifier-free guidance: `(1 + s) eps_cond - s eps_uncond`.
pub fn cfg_predict(eps_cond: &Mat, eps_uncond: &Mat, s: f64) -> Result<Mat> {
    same_shape(eps_cond, eps_uncond)?;
    if !(s >= 0.0) {
        return Err(Error::invalid(format!(
            "guidance scale must be >= 0, got {s}"
        )));
    }
    Ok(eps_cond * (1.0 + s) - eps_uncond * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::gaussian_mat;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> Mat {
        array![[x]]
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::new(1, 0.1, 0.1, ScheduleKind::Linear).unwrap();
        assert_relative_eq!(s.alphas()[0], 0.9);
        assert_relative_eq!(s.alpha_bars()[0], 0.9);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn two_step_products() {
        let s = NoiseSchedule::new(2, 0.1, 0.2, ScheduleKind::Linear).unwrap();
        assert_relative_eq!(s.betas()[1], 0.2);
        assert_relative_eq!(s.alpha_bars()[0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(s.alpha_bars()[1], 0.72, epsilon = 1e-15);
        // sigma_2^2 = (1 - 0.9) / (1 - 0.72) * 0.2
        assert_relative_eq!(s.sigma(2).powi(2), 0.1 / 0.28 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_bounds() {
        assert!(NoiseSchedule::new(0, 0.1, 0.2, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::new(5, 0.0, 0.2, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::new(5, 0.1, 1.0, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::new(5, 0.3, 0.2, ScheduleKind::Linear).is_err());
    }

    #[test]
    fn default_schedule_is_monotone_and_finite() {
        let s = NoiseSchedule::new(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|a| *a > 0.0 && *a < 1.0));
        assert!(s.sigmas().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn forward_noise_examples() {
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
        let out = forward_noise(&scalar(1.0), 1, &scalar(1.0), &s).unwrap();
        assert_relative_eq!(out.x_t[[0, 0]], 0.5 + 0.75f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(out.x_t[[0, 0]], 1.36603, epsilon = 1e-5);

        let zero = forward_noise(&scalar(2.0), 1, &scalar(0.0), &s).unwrap();
        assert_relative_eq!(zero.x_t[[0, 0]], 2.0 * 0.25f64.sqrt());

        let tiny = NoiseSchedule::from_betas(vec![1e-12]).unwrap();
        let near = forward_noise(&scalar(0.7), 1, &scalar(3.0), &tiny).unwrap();
        assert_relative_eq!(near.x_t[[0, 0]], 0.7, epsilon = 1e-5);

        assert!(forward_noise(&scalar(1.0), 1, &array![[1.0, 2.0]], &s).is_err());
        assert!(forward_noise(&scalar(1.0), 2, &scalar(1.0), &s).is_err());
    }

    #[test]
    fn ddpm_step_examples() {
        // beta = 0.1 at t = 1 so alpha_bar = 0.9 (the t = 1 sigma is zero).
        let s = NoiseSchedule::from_betas(vec![0.1]).unwrap();
        let out = ddpm_step(&scalar(1.0), 1, &scalar(1.0), &s, &scalar(0.0)).unwrap();
        let expected = (1.0 / 0.9f64.sqrt()) * (1.0 - 0.1 / 0.1f64.sqrt());
        assert_relative_eq!(out[[0, 0]], expected, epsilon = 1e-15);
        assert_relative_eq!(out[[0, 0]], 0.72076, epsilon = 1e-5);

        let tiny = NoiseSchedule::from_betas(vec![1e-12]).unwrap();
        let id = ddpm_step(&scalar(0.4), 1, &scalar(0.0), &tiny, &scalar(0.0)).unwrap();
        assert_relative_eq!(id[[0, 0]], 0.4, epsilon = 1e-9);

        // sigma_t z is linear in z
        let s2 = NoiseSchedule::new(3, 0.1, 0.3, ScheduleKind::Linear).unwrap();
        let base = ddpm_step(&scalar(0.5), 3, &scalar(0.2), &s2, &scalar(0.0)).unwrap();
        let one = ddpm_step(&scalar(0.5), 3, &scalar(0.2), &s2, &scalar(1.0)).unwrap();
        let two = ddpm_step(&scalar(0.5), 3, &scalar(0.2), &s2, &scalar(2.0)).unwrap();
        assert_relative_eq!(
            two[[0, 0]] - base[[0, 0]],
            2.0 * (one[[0, 0]] - base[[0, 0]]),
            epsilon = 1e-14
        );
        assert!(ddpm_step(&scalar(0.5), 4, &scalar(0.2), &s2, &scalar(0.0)).is_err());
    }

    #[test]
    fn ddim_inverts_forward_noise() {
        let s = NoiseSchedule::new(50, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let x0 = array![[0.3, -1.2, 0.8]];
        let eps = array![[1.0, 0.5, -0.25]];
        let noised = forward_noise(&x0, 37, &eps, &s).unwrap();
        let (x_prev, x0_hat) = ddim_step(&noised.x_t, 37, 0, &eps, &s).unwrap();
        for (a, b) in x0_hat.iter().zip(x0.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(x_prev, x0_hat);
        assert!(ddim_step(&noised.x_t, 5, 5, &eps, &s).is_err());
        assert!(ddim_step(&noised.x_t, 51, 3, &eps, &s).is_err());
    }

    #[test]
    fn ddim_skip_chain_with_perfect_predictor() {
        let s = NoiseSchedule::new(100, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let x0 = array![[0.3, -1.2, 0.8, 0.05]];
        let eps = array![[1.0, 0.5, -0.25, -1.5]];
        for chain in [vec![100, 63, 40, 7, 0], vec![90, 89, 50, 1, 0], vec![55, 0]] {
            let mut x = forward_noise(&x0, chain[0], &eps, &s).unwrap().x_t;
            for w in chain.windows(2) {
                x = ddim_step(&x, w[0], w[1], &eps, &s).unwrap().0;
            }
            for (a, b) in x.iter().zip(x0.iter()) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cfg_examples() {
        let c = array![[1.0, -2.0]];
        let u = array![[0.5, 0.25]];
        assert_eq!(cfg_predict(&c, &u, 0.0).unwrap(), c);
        assert_relative_eq!(
            cfg_predict(&scalar(1.0), &scalar(0.0), 0.5).unwrap()[[0, 0]],
            1.5
        );
        let same = cfg_predict(&c, &c, 3.7).unwrap();
        for (a, b) in same.iter().zip(c.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        assert!(cfg_predict(&c, &u, -0.1).is_err());
        assert!(cfg_predict(&c, &scalar(1.0), 1.0).is_err());
    }

    #[test]
    fn cfg_is_affine_in_scale() {
        let c = array![[0.7, -0.1, 2.0]];
        let u = array![[-0.3, 0.4, 1.0]];
        let f0 = cfg_predict(&c, &u, 0.0).unwrap();
        let f1 = cfg_predict(&c, &u, 1.0).unwrap();
        let f25 = cfg_predict(&c, &u, 2.5).unwrap();
        let lin = &f0 + &((&f1 - &f0) * 2.5);
        for (a, b) in f25.iter().zip(lin.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn sampling_timesteps_are_descending_and_strided() {
        let s = NoiseSchedule::new(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let ts = s.sampling_timesteps(25, 1000).unwrap();
        assert_eq!(ts.len(), 25);
        assert_eq!(ts[0], 1000);
        assert_eq!(*ts.last().unwrap(), 1);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(s.sampling_timesteps(1, 400).unwrap(), vec![400]);
        // more steps than timesteps collapses duplicates
        let small = NoiseSchedule::new(3, 0.1, 0.2, ScheduleKind::Linear).unwrap();
        assert_eq!(small.sampling_timesteps(10, 3).unwrap(), vec![3, 2, 1]);
    }

    #[test]
    fn forward_noise_statistics() {
        let s = NoiseSchedule::new(100, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let t = 60;
        let x0 = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = gaussian_mat(&mut rng, 1, 20_000);
        let x0m = Mat::from_elem((1, 20_000), x0);
        let xt = forward_noise(&x0m, t, &eps, &s).unwrap().x_t;
        let n = xt.len() as f64;
        let mean = xt.sum() / n;
        let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ab = s.alpha_bar(t);
        assert!((mean - ab.sqrt() * x0).abs() <= 0.05 * ab.sqrt() * x0);
        assert!((var - (1.0 - ab)).abs() <= 0.05 * (1.0 - ab));
    }

    proptest! {
        #[test]
        fn inversion_holds_for_random_probes(
            x0 in proptest::collection::vec(-3.0f64..3.0, 6),
            eps in proptest::collection::vec(-3.0f64..3.0, 6),
            t in 1usize..=200,
        ) {
            let s = NoiseSchedule::new(200, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
            let x0 = Mat::from_shape_vec((1, 6), x0).unwrap();
            let eps = Mat::from_shape_vec((1, 6), eps).unwrap();
            let noised = forward_noise(&x0, t, &eps, &s).unwrap();
            let (_, x0_hat) = ddim_step(&noised.x_t, t, 0, &eps, &s).unwrap();
            for (a, b) in x0_hat.iter().zip(x0.iter()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }
}
