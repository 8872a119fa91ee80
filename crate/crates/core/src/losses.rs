//! Defense objectives on the adversarial latent: identity loss, guided-noise
//! deviation, true-noise diffusion loss and their weighted sum.
//!
//! Random draws for one [`AdvObjective::evaluate`] call come from the supplied
//! generator in this order: deviation timesteps, deviation noise, diffusion
//! timesteps, diffusion noise. Each term averages over its `m` draws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, Var};
use crate::image::ImageTensor;
use crate::models::stack::ModelStack;
use crate::models::traits::check_image;
use crate::swap::guided_eps_var;
use crate::util::{gaussian_mat, sample_timesteps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvLossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for AdvLossWeights {
    fn default() -> Self {
        Self {
            lambda1: 19.0,
            lambda2: 2.6,
            lambda3: 0.13,
        }
    }
}

impl AdvLossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda1, self.lambda2, self.lambda3];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid(
                "adversarial weights must be >= 0 with one positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_id: f64,
    pub l_dev: f64,
    pub l_diff: f64,
    pub l_adv: f64,
    pub grad_id: Mat,
    pub grad_dev: Mat,
    pub grad_diff: Mat,
    pub grad_adv: Mat,
}

/// Timesteps and noise for one stochastic term: `m` distinct timesteps, then
/// an `m x d` Gaussian draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub timesteps: Vec<usize>,
    pub eps: Mat,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        schedule: &NoiseSchedule,
        m: usize,
        dim: usize,
    ) -> Self {
        let timesteps = sample_timesteps(rng, schedule.steps(), m);
        let eps = gaussian_mat(rng, m, dim);
        Self { timesteps, eps }
    }

    /// Row `r` is `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps_r` for `t = timesteps[r]`.
    pub fn noised(&self, z0: &Mat, schedule: &NoiseSchedule) -> Mat {
        Mat::from_shape_fn(self.eps.dim(), |(r, j)| {
            let ab = schedule.alpha_bar(self.timesteps[r]);
            ab.sqrt() * z0[[0, j]] + (1.0 - ab).sqrt() * self.eps[[r, j]]
        })
    }
}

fn check_m(m: usize, schedule: &NoiseSchedule) -> Result<()> {
    if m == 0 || m > schedule.steps() {
        return Err(Error::invalid(format!(
            "M = {m} must lie in 1..={}",
            schedule.steps()
        )));
    }
    Ok(())
}

fn check_latent(models: &ModelStack, z: &Mat) -> Result<()> {
    let d = models.codec.latent_dim();
    if z.dim() != (1, d) {
        return Err(Error::shape((1, d), z.dim()));
    }
    Ok(())
}

/// Graph pieces shared by the three terms: the differentiable adversarial latent
/// and its identity embedding.
struct AdvGraph {
    g: Graph,
    z: Var,
    e_adv: Var,
}

impl AdvGraph {
    fn new(models: &ModelStack, z_hat: &Mat) -> Self {
        let g = Graph::new();
        let z = g.input(z_hat.clone());
        let e_adv = models
            .embedder
            .embed_var(&g, models.codec.decode_var(&g, z));
        Self { g, z, e_adv }
    }

    fn grad(&self, out: Var) -> Mat {
        let dim = self.g.shape(self.z);
        self.g.backward(out).get_or_zeros(self.z, dim)
    }

    fn id_term(&self, e_src: &Mat) -> Var {
        let g = &self.g;
        g.affine(g.row_dot(self.e_adv, g.constant(e_src.clone())), -1.0, 1.0)
    }

    /// Guided prediction on `z_t` rows under the adversarial identity.
    fn adv_prediction(&self, models: &ModelStack, ts: &[usize], z_t: &Mat, s: f64) -> Var {
        let g = &self.g;
        let c = models.denoiser.condition_var(g, self.e_adv);
        let c = g.broadcast_rows(c, ts.len());
        guided_eps_var(g, models, g.constant(z_t.clone()), ts, c, s)
    }

    fn dev_term(
        &self,
        models: &ModelStack,
        c_src: &Mat,
        draw: &NoiseDraw,
        z_src: &Mat,
        s: f64,
    ) -> Var {
        let g = &self.g;
        let m = draw.timesteps.len();
        let z_t = draw.noised(z_src, &models.schedule);
        let reference = {
            let rg = Graph::new();
            let c = rg.constant(
                c_src
                    .broadcast((m, c_src.ncols()))
                    .expect("broadcast")
                    .to_owned(),
            );
            let pred = guided_eps_var(&rg, models, rg.constant(z_t.clone()), &draw.timesteps, c, s);
            (*rg.value(pred)).clone()
        };
        let pred = self.adv_prediction(models, &draw.timesteps, &z_t, s);
        g.scale(g.sum_sq(g.sub(g.constant(reference), pred)), 1.0 / m as f64)
    }

    fn diff_term(&self, models: &ModelStack, draw: &NoiseDraw, z_src: &Mat, s: f64) -> Var {
        let g = &self.g;
        let m = draw.timesteps.len();
        let z_t = draw.noised(z_src, &models.schedule);
        let pred = self.adv_prediction(models, &draw.timesteps, &z_t, s);
        g.scale(
            g.sum_sq(g.sub(g.constant(draw.eps.clone()), pred)),
            1.0 / m as f64,
        )
    }
}

fn condition_of(models: &ModelStack, e: &Mat) -> Mat {
    let g = Graph::new();
    let c = models.denoiser.condition_var(&g, g.constant(e.clone()));
    (*g.value(c)).clone()
}

/// Source-side quantities precomputed once per defense run.
pub struct AdvObjective<'a> {
    models: &'a ModelStack,
    z_src: Mat,
    e_src: Mat,
    c_src: Mat,
    weights: AdvLossWeights,
    m: usize,
    s: f64,
}

impl<'a> AdvObjective<'a> {
    pub fn new(
        models: &'a ModelStack,
        i_src: &ImageTensor,
        z_src: &Mat,
        weights: AdvLossWeights,
        m: usize,
        s: f64,
    ) -> Result<Self> {
        weights.validate()?;
        check_m(m, &models.schedule)?;
        check_image(i_src, models.codec.image_shape())?;
        check_latent(models, z_src)?;
        let e_src = models.embedder.embed(i_src)?.to_row();
        Ok(Self {
            models,
            z_src: z_src.clone(),
            c_src: condition_of(models, &e_src),
            e_src,
            weights,
            m,
            s,
        })
    }

    pub fn weights(&self) -> AdvLossWeights {
        self.weights
    }

    /// Evaluates the three terms at `z_hat`, with fresh draws from `rng`.
    pub fn evaluate<R: Rng + ?Sized>(&self, z_hat: &Mat, rng: &mut R) -> Result<LossBreakdown> {
        check_latent(self.models, z_hat)?;
        let dim = z_hat.ncols();
        let schedule = &self.models.schedule;
        let dev_draw = NoiseDraw::sample(rng, schedule, self.m, dim);
        let diff_draw = NoiseDraw::sample(rng, schedule, self.m, dim);

        let ag = AdvGraph::new(self.models, z_hat);
        let l_id = ag.id_term(&self.e_src);
        let l_dev = ag.dev_term(self.models, &self.c_src, &dev_draw, &self.z_src, self.s);
        let l_diff = ag.diff_term(self.models, &diff_draw, &self.z_src, self.s);
        let (grad_id, grad_dev, grad_diff) = (ag.grad(l_id), ag.grad(l_dev), ag.grad(l_diff));
        let (vi, vd, vf) = (ag.g.scalar(l_id), ag.g.scalar(l_dev), ag.g.scalar(l_diff));
        let w = self.weights;
        let l_adv = w.lambda1 * vi + w.lambda2 * vd + w.lambda3 * vf;
        let grad_adv = &grad_id * w.lambda1 + &grad_dev * w.lambda2 + &grad_diff * w.lambda3;
        if !l_adv.is_finite() || !grad_adv.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("adversarial loss".into()));
        }
        Ok(LossBreakdown {
            l_id: vi,
            l_dev: vd,
            l_diff: vf,
            l_adv,
            grad_id,
            grad_dev,
            grad_diff,
            grad_adv,
        })
    }
}

/// `1 - cos(Phi(I_src), Phi(D(z_hat)))` and its gradient in `z_hat`.
pub fn loss_id(z_hat: &Mat, i_src: &ImageTensor, models: &ModelStack) -> Result<(f64, Mat)> {
    check_latent(models, z_hat)?;
    let e_src = models.embedder.embed(i_src)?.to_row();
    let ag = AdvGraph::new(models, z_hat);
    let l = ag.id_term(&e_src);
    Ok((ag.g.scalar(l), ag.grad(l)))
}

/// Mean guided-noise deviation between source and adversarial conditioning,
/// over `m` distinct timesteps; the states are noised copies of `E(I_src)`.
pub fn loss_dev<R: Rng + ?Sized>(
    z_hat: &Mat,
    i_src: &ImageTensor,
    models: &ModelStack,
    m: usize,
    s: f64,
    rng: &mut R,
) -> Result<(f64, Mat)> {
    check_m(m, &models.schedule)?;
    check_latent(models, z_hat)?;
    let z_src = models.codec.encode(i_src)?;
    let e_src = models.embedder.embed(i_src)?.to_row();
    let draw = NoiseDraw::sample(rng, &models.schedule, m, z_hat.ncols());
    let ag = AdvGraph::new(models, z_hat);
    let l = ag.dev_term(models, &condition_of(models, &e_src), &draw, &z_src, s);
    Ok((ag.g.scalar(l), ag.grad(l)))
}

/// Mean squared error between the true noise and the adversarially conditioned
/// guided prediction, on noised copies of `z_src`.
pub fn loss_diff<R: Rng + ?Sized>(
    z_hat: &Mat,
    z_src: &Mat,
    models: &ModelStack,
    m: usize,
    s: f64,
    rng: &mut R,
) -> Result<(f64, Mat)> {
    check_m(m, &models.schedule)?;
    check_latent(models, z_hat)?;
    check_latent(models, z_src)?;
    let draw = NoiseDraw::sample(rng, &models.schedule, m, z_hat.ncols());
    let ag = AdvGraph::new(models, z_hat);
    let l = ag.diff_term(models, &draw, z_src, s);
    Ok((ag.g.scalar(l), ag.grad(l)))
}

/// Full weighted objective; see [`AdvObjective`].
#[allow(clippy::too_many_arguments)]
pub fn loss_adv<R: Rng + ?Sized>(
    z_hat: &Mat,
    i_src: &ImageTensor,
    z_src: &Mat,
    models: &ModelStack,
    weights: AdvLossWeights,
    m: usize,
    s: f64,
    rng: &mut R,
) -> Result<LossBreakdown> {
    AdvObjective::new(models, i_src, z_src, weights, m, s)?.evaluate(z_hat, rng)
}
