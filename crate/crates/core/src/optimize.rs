//! The two-phase alternating defense: style-space editing to restore the image,
//! then sign-gradient ascent on the latent inside an infinity-norm ball around
//! the clean latent. A joint baseline that interleaves both updates is included
//! for comparison.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::editor::{
    fuse, map_perturbation, update_edit_mask, AttributeSpec, EditLossWeights, EditObjective,
    DEFAULT_SIGMA_B,
};
use crate::error::{Error, Result};
use crate::graph::Mat;
use crate::image::{ImageTensor, Mask};
use crate::losses::{AdvLossWeights, AdvObjective};
use crate::models::stack::{ModelStack, ScheduleConfig};
use crate::models::traits::{check_image, NoiseMapSet, StyleVector};
use crate::util::{linf, rng_for, Adam};

/// Budget slack tolerated by the invariant checks.
pub const BUDGET_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationMode {
    Alternating,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Infinity-norm budget on the latent.
    pub epsilon: f64,
    pub outer_iterations: usize,
    pub edit_steps: usize,
    pub pgd_steps: usize,
    /// Timesteps sampled per stochastic loss term.
    pub timestep_samples: usize,
    pub eta_z: f64,
    pub eta_w: f64,
    pub adv_weights: AdvLossWeights,
    pub edit_weights: EditLossWeights,
    pub spec: AttributeSpec,
    pub schedule: ScheduleConfig,
    pub guidance_scale: f64,
    pub seed: u64,
    pub mode: OptimizationMode,
    pub sigma_b: f64,
    /// Snapshot every this many records; phase ends are always captured. 0 disables strided snapshots.
    pub snapshot_stride: usize,
    /// Bypass the editing phase and fusion entirely.
    pub skip_edit: bool,
    /// Joint mode only: composite steps between representation syncs.
    pub sync_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epsilon: 75.0 / 255.0,
            outer_iterations: 2,
            edit_steps: 1000,
            pgd_steps: 100,
            timestep_samples: 20,
            eta_z: 1.0 / 255.0,
            eta_w: 0.001,
            adv_weights: AdvLossWeights::default(),
            edit_weights: EditLossWeights::default(),
            spec: AttributeSpec::default(),
            schedule: ScheduleConfig::default(),
            guidance_scale: 1.0,
            seed: 0,
            mode: OptimizationMode::Alternating,
            sigma_b: DEFAULT_SIGMA_B,
            snapshot_stride: 0,
            skip_edit: false,
            sync_every: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be finite and >= 0"));
        }
        if self.outer_iterations == 0 || self.timestep_samples == 0 {
            return Err(Error::invalid(
                "outer_iterations and timestep_samples must be >= 1",
            ));
        }
        if self.timestep_samples > self.schedule.steps {
            return Err(Error::invalid(
                "timestep_samples exceeds the schedule length",
            ));
        }
        if !(self.eta_z >= 0.0
            && self.eta_z.is_finite()
            && self.eta_w >= 0.0
            && self.eta_w.is_finite())
        {
            return Err(Error::invalid("step sizes must be finite and >= 0"));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::invalid("guidance scale must be finite and >= 0"));
        }
        if !(self.sigma_b >= 0.0 && self.sigma_b.is_finite()) {
            return Err(Error::invalid("sigma_b must be finite and >= 0"));
        }
        if self.sync_every == 0 {
            return Err(Error::invalid("sync_every must be >= 1"));
        }
        self.adv_weights.validate()?;
        self.edit_weights.validate()?;
        self.schedule.build()?;
        Ok(())
    }

    fn check_models(&self, models: &ModelStack) -> Result<()> {
        if self.schedule.build()?.betas() != models.schedule.betas() {
            return Err(Error::invalid(
                "run schedule does not match the model stack",
            ));
        }
        Ok(())
    }

    fn editing(&self) -> bool {
        !self.skip_edit && !self.spec.is_empty()
    }

    /// Composite steps of one run: `N * (Q + P)`.
    pub fn step_budget(&self) -> usize {
        self.outer_iterations * (self.edit_steps + self.pgd_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Edit,
    Attack,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub phase: Phase,
    pub outer: usize,
    pub step: usize,
    pub l_adv: f64,
    pub l_edit: f64,
    pub l_attack: f64,
    /// `|delta|_inf` of the running phase perturbation.
    pub delta_linf: f64,
    /// `|z_hat - E(I_src)|_inf`.
    pub budget_linf: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub label: String,
    pub image: ImageTensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl OptimizationTrace {
    pub fn attack_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.l_attack).collect()
    }

    /// One row per record; wall time is left out so traces compare byte-for-byte.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| Ok(row?)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseResult {
    pub protected_image: ImageTensor,
    pub z_hat: Mat,
    pub z_ref: Mat,
    pub delta: Mat,
    pub w: StyleVector,
    pub trace: OptimizationTrace,
}

impl DefenseResult {
    pub fn budget_linf(&self) -> f64 {
        linf(&self.z_hat, &self.z_ref)
    }
}

/// Result of one ascent phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    pub z: Mat,
    pub delta: Mat,
    /// Objective value at each visited iterate before its step.
    pub values: Vec<f64>,
}

fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `z` onto the infinity-norm ball of radius `epsilon` around `z_ref`.
pub fn project_to_ball(z: &Mat, z_ref: &Mat, epsilon: f64) -> Mat {
    let mut out = z.clone();
    out.zip_mut_with(z_ref, |v, &r| *v = v.clamp(r - epsilon, r + epsilon));
    out
}

/// Sign-gradient ascent from `z0` with a running perturbation that starts at
/// zero. The perturbation is clipped so every iterate `z0 + delta` stays within
/// `epsilon` of `z_ref` in the infinity norm. `objective` returns the value and
/// gradient at the current iterate; `on_step` sees `(p, value, z, delta)` after
/// each update.
pub fn pgd_ascend<F, G>(
    z0: &Mat,
    z_ref: &Mat,
    epsilon: f64,
    eta: f64,
    steps: usize,
    mut objective: F,
    mut on_step: G,
) -> Result<PgdOutcome>
where
    F: FnMut(&Mat) -> Result<(f64, Mat)>,
    G: FnMut(usize, f64, &Mat, &Mat) -> Result<()>,
{
    if z0.dim() != z_ref.dim() {
        return Err(Error::shape(z_ref.dim(), z0.dim()));
    }
    let entry = linf(z0, z_ref);
    if entry > epsilon + BUDGET_TOL {
        return Err(Error::BudgetViolated {
            norm: entry,
            budget: epsilon,
        });
    }
    let mut delta = Mat::zeros(z0.dim());
    let mut z = z0.clone();
    let mut values = Vec::with_capacity(steps);
    for p in 0..steps {
        let (value, grad) = objective(&z)?;
        if grad.dim() != z.dim() {
            return Err(Error::shape(z.dim(), grad.dim()));
        }
        ndarray::Zip::from(&mut delta)
            .and(&grad)
            .and(z0)
            .and(z_ref)
            .for_each(|d, &g, &b, &r| {
                let stepped = *d + eta * sign(g);
                // Keep b + d inside [r - eps, r + eps].
                *d = stepped.clamp(r - epsilon - b, r + epsilon - b);
            });
        z = z0 + &delta;
        values.push(value);
        on_step(p, value, &z, &delta)?;
    }
    Ok(PgdOutcome { z, delta, values })
}

/// `steps` Adam updates on `x0`; `objective` returns value and gradient and
/// `on_step` sees `(q, value)` for each value before its update.
pub fn adam_descend<F, G>(
    x0: &Mat,
    lr: f64,
    steps: usize,
    mut objective: F,
    mut on_step: G,
) -> Result<Mat>
where
    F: FnMut(&Mat) -> Result<(f64, Mat)>,
    G: FnMut(usize, f64) -> Result<()>,
{
    let mut x = x0.clone();
    let mut adam = Adam::new(lr, &[x.dim()]);
    for q in 0..steps {
        let (value, grad) = objective(&x)?;
        if !value.is_finite() || !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("descent objective at step {q}")));
        }
        on_step(q, value)?;
        adam.step(&mut [&mut x], &[grad]);
    }
    Ok(x)
}

/// Adam descent of the editing objective in style space.
pub fn descend_w<G>(
    w0: &StyleVector,
    noise: &NoiseMapSet,
    objective: &EditObjective<'_>,
    lr: f64,
    steps: usize,
    on_step: G,
) -> Result<StyleVector>
where
    G: FnMut(usize, f64) -> Result<()>,
{
    let row = adam_descend(
        &w0.to_row(),
        lr,
        steps,
        |x| {
            let w = StyleVector::from_row(x, w0.layers, w0.dim)?;
            let b = objective.evaluate(&w, noise)?;
            Ok((b.l_edit, b.grad_edit))
        },
        on_step,
    )?;
    StyleVector::from_row(&row, w0.layers, w0.dim)
}

struct Recorder {
    start: Instant,
    stride: usize,
    trace: OptimizationTrace,
}

impl Recorder {
    fn new(stride: usize) -> Self {
        Self {
            start: Instant::now(),
            stride,
            trace: OptimizationTrace::default(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        phase: Phase,
        outer: usize,
        step: usize,
        l_adv: f64,
        l_edit: f64,
        delta_linf: f64,
        budget_linf: f64,
    ) -> bool {
        self.trace.records.push(TraceRecord {
            phase,
            outer,
            step,
            l_adv,
            l_edit,
            l_attack: l_adv - l_edit,
            delta_linf,
            budget_linf,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
        self.stride > 0 && self.trace.records.len().is_multiple_of(self.stride)
    }

    fn snapshot(&mut self, label: String, image: ImageTensor) {
        self.trace.snapshots.push(Snapshot { label, image });
    }
}

fn decode_image(models: &ModelStack, z: &Mat) -> Result<ImageTensor> {
    Ok(models.codec.decode(z)?.clamped())
}

fn check_budget(z: &Mat, z_ref: &Mat, epsilon: f64) -> Result<f64> {
    let norm = linf(z, z_ref);
    if norm > epsilon + BUDGET_TOL {
        return Err(Error::BudgetViolated {
            norm,
            budget: epsilon,
        });
    }
    Ok(norm)
}

/// Shared per-run setup.
struct RunState<'a> {
    models: &'a ModelStack,
    cfg: &'a RunConfig,
    adv: AdvObjective<'a>,
    z_ref: Mat,
}

impl<'a> RunState<'a> {
    fn new(i_src: &ImageTensor, models: &'a ModelStack, cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_models(models)?;
        check_image(i_src, models.codec.image_shape())?;
        cfg.spec.ensure_known(models.classifier.as_ref())?;
        let z_ref = models.codec.encode(i_src)?;
        let adv = AdvObjective::new(
            models,
            i_src,
            &z_ref,
            cfg.adv_weights,
            cfg.timestep_samples,
            cfg.guidance_scale,
        )?;
        Ok(Self {
            models,
            cfg,
            adv,
            z_ref,
        })
    }

    fn adv_value<R: Rng>(&self, z: &Mat, rng: &mut R) -> Result<(f64, Mat)> {
        let b = self.adv.evaluate(z, rng)?;
        Ok((b.l_adv, b.grad_adv))
    }

    fn edit_mask(&self, image: &ImageTensor) -> Result<Mask> {
        update_edit_mask(
            image,
            &self.cfg.spec,
            self.models.parser.as_ref(),
            self.cfg.sigma_b,
        )
    }

    fn edit_objective(&self, image: &ImageTensor) -> Result<EditObjective<'a>> {
        EditObjective::new(
            self.models,
            image,
            &self.cfg.spec,
            self.cfg.edit_weights,
            self.cfg.sigma_b,
        )
    }

    /// Re-encodes `image` and projects it back onto the budget ball.
    fn encode_projected(&self, image: &ImageTensor) -> Result<Mat> {
        let z = self.models.codec.encode(image)?;
        Ok(project_to_ball(&z, &self.z_ref, self.cfg.epsilon))
    }
}

/// Runs the alternating defense on `i_src`.
pub fn run_defense(
    i_src: &ImageTensor,
    models: &ModelStack,
    cfg: &RunConfig,
) -> Result<DefenseResult> {
    if cfg.mode == OptimizationMode::Joint {
        return run_joint_baseline(i_src, models, cfg);
    }
    let st = RunState::new(i_src, models, cfg)?;
    let mut rng = rng_for(cfg.seed, "defense");
    let mut rec = Recorder::new(cfg.snapshot_stride);
    let editing = cfg.editing();

    // Algorithm state; `image` is the current working image.
    let mut image = i_src.clone();
    let mut z_hat = st.z_ref.clone();
    let mut delta = Mat::zeros(z_hat.dim());
    let mut w = models.inverter.invert(&image)?;
    let mut noise = NoiseMapSet::zeros(&models.generator.noise_shapes());
    let mut mask = st.edit_mask(&image)?;
    let mut l_adv = st.adv.evaluate(&z_hat, &mut rng)?.l_adv;
    let mut l_edit = 0.0;

    for n in 0..cfg.outer_iterations {
        if editing {
            let objective = st.edit_objective(&image)?;
            let budget = linf(&z_hat, &st.z_ref);
            let mut strided = Vec::new();
            w = descend_w(&w, &noise, &objective, cfg.eta_w, cfg.edit_steps, |q, v| {
                l_edit = v;
                if rec.push(Phase::Edit, n, q, l_adv, v, 0.0, budget) {
                    strided.push(q);
                }
                Ok(())
            })?;
            if cfg.edit_steps > 0 {
                l_edit = objective.evaluate(&w, &noise)?.l_edit;
            }
            let edited = models.generator.generate(&w, &noise)?;
            image = fuse(&image, &edited, &mask)?;
            z_hat = st.encode_projected(&image)?;
            for q in strided {
                rec.snapshot(format!("edit_n{n}_q{q}"), edited.clone());
            }
            rec.snapshot(format!("edit_n{n}"), image.clone());
        }

        let mut strided = Vec::new();
        let out = pgd_ascend(
            &z_hat,
            &st.z_ref,
            cfg.epsilon,
            cfg.eta_z,
            cfg.pgd_steps,
            |z| st.adv_value(z, &mut rng),
            |p, v, z, d| {
                l_adv = v;
                let budget = check_budget(z, &st.z_ref, cfg.epsilon)?;
                if rec.push(Phase::Attack, n, p, v, l_edit, max_abs(d), budget) {
                    strided.push((p, z.clone()));
                }
                Ok(())
            },
        )?;
        for (p, z) in strided {
            rec.snapshot(format!("attack_n{n}_p{p}"), decode_image(models, &z)?);
        }
        z_hat = out.z;
        delta = out.delta;
        check_budget(&z_hat, &st.z_ref, cfg.epsilon)?;

        image = decode_image(models, &z_hat)?;
        rec.snapshot(format!("attack_n{n}"), image.clone());
        if editing {
            w = models.inverter.invert(&image)?;
            noise = map_perturbation(
                &delta,
                models.codec.latent_shape(),
                &models.generator.noise_shapes(),
            )?;
            mask = st.edit_mask(&image)?;
        }
    }

    Ok(DefenseResult {
        protected_image: image,
        z_hat,
        z_ref: st.z_ref,
        delta,
        w,
        trace: rec.trace,
    })
}

/// Baseline that applies one ascent step on the latent and one descent step on
/// the style code per composite step, reconciling both through the fused image
/// every `sync_every` steps. Uses the same `N * (Q + P)` step budget.
pub fn run_joint_baseline(
    i_src: &ImageTensor,
    models: &ModelStack,
    cfg: &RunConfig,
) -> Result<DefenseResult> {
    let st = RunState::new(i_src, models, cfg)?;
    let mut rng = rng_for(cfg.seed, "defense");
    let mut rec = Recorder::new(cfg.snapshot_stride);
    let editing = cfg.editing();
    let shapes = models.generator.noise_shapes();

    let mut image = i_src.clone();
    let mut base = st.z_ref.clone();
    let mut delta = Mat::zeros(base.dim());
    let mut z_hat = base.clone();
    let mut w = models.inverter.invert(&image)?;
    let mut noise = NoiseMapSet::zeros(&shapes);
    let mut mask = st.edit_mask(&image)?;
    let mut objective = if editing {
        Some(st.edit_objective(&image)?)
    } else {
        None
    };
    let mut adam = Adam::new(cfg.eta_w, &[(1, w.data.len())]);
    let mut w_row = w.to_row();

    let total = cfg.step_budget();
    for k in 0..total {
        let (l_adv, grad) = st.adv_value(&z_hat, &mut rng)?;
        delta.zip_mut_with(&grad, |d, &g| *d += cfg.eta_z * sign(g));
        let allowed = project_to_ball(&(&base + &delta), &st.z_ref, cfg.epsilon);
        delta = &allowed - &base;
        z_hat = allowed;

        let mut l_edit = 0.0;
        if let Some(obj) = &objective {
            let b = obj.evaluate(&StyleVector::from_row(&w_row, w.layers, w.dim)?, &noise)?;
            l_edit = b.l_edit;
            adam.step(&mut [&mut w_row], &[b.grad_edit]);
        }
        let budget = check_budget(&z_hat, &st.z_ref, cfg.epsilon)?;
        let outer = k / (cfg.edit_steps + cfg.pgd_steps).max(1);
        if rec.push(
            Phase::Joint,
            outer,
            k,
            l_adv,
            l_edit,
            max_abs(&delta),
            budget,
        ) {
            rec.snapshot(format!("joint_k{k}"), decode_image(models, &z_hat)?);
        }

        if (k + 1) % cfg.sync_every == 0 || k + 1 == total {
            let decoded = decode_image(models, &z_hat)?;
            w = StyleVector::from_row(&w_row, w.layers, w.dim)?;
            image = if editing {
                let edited = models.generator.generate(&w, &noise)?;
                fuse(&decoded, &edited, &mask)?
            } else {
                decoded
            };
            if k + 1 == total {
                break;
            }
            z_hat = st.encode_projected(&image)?;
            base = z_hat.clone();
            if editing {
                noise = map_perturbation(&delta, models.codec.latent_shape(), &shapes)?;
                w = models.inverter.invert(&image)?;
                w_row = w.to_row();
                mask = st.edit_mask(&image)?;
                objective = Some(st.edit_objective(&image)?);
                adam = Adam::new(cfg.eta_w, &[(1, w_row.len())]);
            }
            delta = Mat::zeros(base.dim());
        }
    }

    // The final fused image is re-encoded so the returned latent matches the image.
    if total > 0 && editing {
        z_hat = st.encode_projected(&image)?;
        image = decode_image(models, &z_hat)?;
    } else {
        image = decode_image(models, &z_hat)?;
    }
    check_budget(&z_hat, &st.z_ref, cfg.epsilon)?;
    rec.snapshot("joint_final".into(), image.clone());
    Ok(DefenseResult {
        protected_image: image,
        delta: &z_hat - &base,
        z_hat,
        z_ref: st.z_ref,
        w,
        trace: rec.trace,
    })
}

/// Window statistics of an `l_attack` series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub len: usize,
    /// Mean of the first 10% of records.
    pub head_mean: f64,
    /// Mean of the final 10% of records.
    pub tail_mean: f64,
    /// Sample variance of the final 20% of records.
    pub tail_variance: f64,
}

fn window(len: usize, frac: f64) -> usize {
    ((len as f64 * frac).ceil() as usize).clamp(1, len)
}

pub fn curve_stats(series: &[f64]) -> Result<CurveStats> {
    if series.is_empty() {
        return Err(Error::invalid("empty series"));
    }
    let n = series.len();
    let w10 = window(n, 0.1);
    let w20 = window(n, 0.2);
    Ok(CurveStats {
        len: n,
        head_mean: crate::util::mean(&series[..w10]),
        tail_mean: crate::util::mean(&series[n - w10..]),
        tail_variance: crate::util::variance(&series[n - w20..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(z: &Mat) -> Result<(f64, Mat)> {
        Ok((z.iter().map(|v| v * v).sum(), z * 2.0))
    }

    #[test]
    fn pgd_matches_hand_stepped_oracle() {
        let eta = 0.01;
        let eps = 3.0 * eta;
        let z0 = Mat::from_shape_vec((1, 4), vec![0.004, -0.002, 0.0005, -0.009]).unwrap();
        let z_ref = Mat::zeros((1, 4));
        let out = pgd_ascend(&z0, &z_ref, eps, eta, 10, quadratic, |_, _, _, _| Ok(())).unwrap();
        // Hand stepping: sign(grad) = sign(z) never flips, so each coordinate
        // walks outward by eta until z0 + delta hits +-eps.
        for j in 0..4 {
            let s = z0[[0, j]].signum();
            let mut d: f64 = 0.0;
            for _ in 0..10 {
                d = (d + eta * s).clamp(-eps - z0[[0, j]], eps - z0[[0, j]]);
            }
            assert_eq!(out.delta[[0, j]], d);
            assert_eq!(out.z[[0, j]], z0[[0, j]] + d);
            assert!((out.z[[0, j]].abs() - eps).abs() < 1e-15);
        }
    }

    #[test]
    fn unclipped_steps_move_by_eta() {
        let eta = 0.01;
        let z0 = Mat::from_shape_vec((1, 3), vec![0.5, -0.25, 0.125]).unwrap();
        let mut prev = z0.clone();
        pgd_ascend(&z0, &z0, 1.0, eta, 5, quadratic, |_, _, z, _| {
            for (a, b) in z.iter().zip(prev.iter()) {
                assert!(((a - b).abs() - eta).abs() < 1e-15);
            }
            prev = z.clone();
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn pgd_degenerate_cases() {
        let z0 = Mat::from_elem((1, 3), 0.2);
        let out = pgd_ascend(&z0, &z0, 0.1, 0.0, 4, quadratic, |_, _, _, _| Ok(())).unwrap();
        assert_eq!(out.z, z0);
        let z_ref = Mat::from_elem((1, 3), 0.2);
        let out = pgd_ascend(&z_ref, &z_ref, 0.0, 0.05, 4, quadratic, |_, _, _, _| Ok(())).unwrap();
        assert_eq!(out.z, z_ref);
        let far = Mat::from_elem((1, 3), 1.0);
        assert!(matches!(
            pgd_ascend(&far, &z_ref, 0.1, 0.01, 1, quadratic, |_, _, _, _| Ok(())),
            Err(Error::BudgetViolated { .. })
        ));
    }

    #[test]
    fn adam_descends_a_convex_quadratic() {
        let target = Mat::from_shape_vec((1, 3), vec![0.3, -0.2, 0.1]).unwrap();
        let f = |x: &Mat| {
            let d = x - &target;
            Ok((d.iter().map(|v| v * v).sum::<f64>(), &d * 2.0))
        };
        let mut values = Vec::new();
        let x = adam_descend(&Mat::zeros((1, 3)), 0.001, 200, f, |_, v| {
            values.push(v);
            Ok(())
        })
        .unwrap();
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
        assert!(f(&x).unwrap().0 < values[0]);
        let same = adam_descend(&target, 0.001, 0, f, |_, _| Ok(())).unwrap();
        assert_eq!(same, target);
    }

    #[test]
    fn projection_clamps() {
        let z = Mat::from_shape_vec((1, 3), vec![1.0, -1.0, 0.05]).unwrap();
        let p = project_to_ball(&z, &Mat::zeros((1, 3)), 0.1);
        assert_eq!(p.row(0).to_vec(), vec![0.1, -0.1, 0.05]);
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert_eq!(cfg.step_budget(), 2 * 1100);
    }
}
