//! The threat model: identity-conditioned latent diffusion face swapping with
//! DDIM sampling and classifier-free guidance.

use serde::{Deserialize, Serialize};

use crate::diffusion::{cfg_predict, ddim_step, forward_noise};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::models::stack::ModelStack;
use crate::models::traits::{check_image, IdentityEmbedding};
use crate::util::{gaussian_mat, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseMode {
    /// Noise the target latent to `t_start`.
    ForwardNoise { t_start: usize },
    /// Start from a standard Gaussian latent.
    PureGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapConfig {
    pub num_steps: usize,
    pub guidance_scale: f64,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            num_steps: 25,
            guidance_scale: 1.0,
            noise_mode: NoiseMode::ForwardNoise { t_start: 1000 },
            seed: 0,
        }
    }
}

impl SwapConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::invalid("num_steps must be at least 1"));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::invalid("guidance scale must be finite and >= 0"));
        }
        if let NoiseMode::ForwardNoise { t_start } = self.noise_mode {
            if t_start == 0 || t_start > timesteps {
                return Err(Error::TimestepOutOfRange {
                    t: t_start,
                    max: timesteps,
                });
            }
        }
        Ok(())
    }
}

/// Guided noise prediction `(1 + s) eps(z, c) - s eps(z, null)` as a graph node.
/// `condition` holds one row per latent row.
pub fn guided_eps_var(
    g: &Graph,
    models: &ModelStack,
    z_t: Var,
    timesteps: &[usize],
    condition: Var,
    s: f64,
) -> Var {
    let rows = timesteps.len();
    let den = &models.denoiser;
    let cond = den.predict_var(g, z_t, timesteps, condition);
    if s == 0.0 {
        return cond;
    }
    let uncond = den.predict_var(g, z_t, timesteps, den.null_condition_var(g, rows));
    g.sub(g.scale(cond, 1.0 + s), g.scale(uncond, s))
}

/// Swaps the identity of `source` onto `target`.
pub fn swap(
    source: &ImageTensor,
    target: &ImageTensor,
    models: &ModelStack,
    cfg: &SwapConfig,
) -> Result<ImageTensor> {
    check_image(source, models.embedder.image_shape())?;
    let identity = models.embedder.embed(source)?;
    swap_with_identity(&identity, target, models, cfg)
}

/// Same as [`swap`]; named for the protected-source side of a seed-paired comparison.
pub fn swap_with_adversarial(
    protected_source: &ImageTensor,
    target: &ImageTensor,
    models: &ModelStack,
    cfg: &SwapConfig,
) -> Result<ImageTensor> {
    swap(protected_source, target, models, cfg)
}

/// The sampler behind [`swap`], conditioned on an explicit identity embedding.
pub fn swap_with_identity(
    identity: &IdentityEmbedding,
    target: &ImageTensor,
    models: &ModelStack,
    cfg: &SwapConfig,
) -> Result<ImageTensor> {
    let schedule = &models.schedule;
    cfg.validate(schedule.steps())?;
    check_image(target, models.codec.image_shape())?;
    if identity.0.len() != models.denoiser.identity_dim() {
        return Err(Error::shape(
            models.denoiser.identity_dim(),
            identity.0.len(),
        ));
    }
    let mut rng = rng_for(cfg.seed, "swap");
    let dim = models.codec.latent_dim();
    let eps = gaussian_mat(&mut rng, 1, dim);
    let (mut z, t_max) = match cfg.noise_mode {
        NoiseMode::ForwardNoise { t_start } => {
            let z0 = models.codec.encode(target)?;
            (forward_noise(&z0, t_start, &eps, schedule)?.x_t, t_start)
        }
        NoiseMode::PureGaussian => (eps, schedule.steps()),
    };
    let steps = schedule.sampling_timesteps(cfg.num_steps, t_max)?;
    let cond = {
        let g = Graph::new();
        let c = models
            .denoiser
            .condition_var(&g, g.constant(identity.to_row()));
        (*g.value(c)).clone()
    };
    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        let g = Graph::new();
        let zv = g.constant(z.clone());
        let e_c = g.value(
            models
                .denoiser
                .predict_var(&g, zv, &[t], g.constant(cond.clone())),
        );
        let e_u = g.value(models.denoiser.predict_var(
            &g,
            zv,
            &[t],
            models.denoiser.null_condition_var(&g, 1),
        ));
        let eps_hat = cfg_predict(&e_c, &e_u, cfg.guidance_scale)?;
        z = ddim_step(&z, t, t_prev, &eps_hat, schedule)?.0;
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("swap latent".into()));
    }
    Ok(models.codec.decode(&z)?.clamped())
}
