//! Identity-conditioned noise predictor: a residual MLP over
//! `[z_t, time embedding, tau(identity)]`, plus a learned null condition.
//!
//! The network regresses `v = sqrt(abar) eps - sqrt(1 - abar) z0` and reports
//! `eps = sqrt(abar) v + sqrt(1 - abar) z_t`, which keeps the implied clean
//! estimate bounded at high noise levels.

use rand::Rng;

use crate::diffusion::{forward_noise, NoiseSchedule};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, Var};
use crate::models::checkpoint::Checkpoint;
use crate::models::codec::merge;
use crate::models::params::{minibatches, select_rows, BoundParams, ParamSet};
use crate::models::traits::NoisePredictor;
use crate::util::{gaussian_mat, init_weight, rng_for, Adam};

const NAMES: [&str; 9] = ["tau_w", "tau_b", "null", "w1", "b1", "w2", "b2", "w3", "b3"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing the condition by the null input during training.
    pub cond_dropout: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            cond_dim: 64,
            time_dim: 32,
            batch: 128,
            lr: 1e-3,
            cond_dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    latent_dim: usize,
    identity_dim: usize,
    time_dim: usize,
    timesteps: usize,
    /// `1 x T` cumulative products of the training schedule.
    alpha_bars: Mat,
    params: ParamSet,
}

/// Sinusoidal embedding of integer timesteps, one row per timestep.
pub fn time_embedding(timesteps: &[usize], dim: usize, max_t: usize) -> Mat {
    let half = dim / 2;
    Mat::from_shape_fn((timesteps.len(), dim), |(r, j)| {
        let t = timesteps[r] as f64 / max_t.max(1) as f64 * 1000.0;
        let k = j % half.max(1);
        let freq = (-(k as f64) * (10000f64).ln() / half.max(1) as f64).exp();
        if j < half {
            (t * freq).sin()
        } else {
            (t * freq).cos()
        }
    })
}

impl ToyDenoiser {
    /// Per-row `(sqrt(abar_t), sqrt(1 - abar_t))` broadcast to latent width.
    fn mixing(&self, timesteps: &[usize]) -> (Mat, Mat) {
        let ab = |r: usize| self.alpha_bars[[0, timesteps[r].clamp(1, self.timesteps) - 1]];
        let shape = (timesteps.len(), self.latent_dim);
        (
            Mat::from_shape_fn(shape, |(r, _)| ab(r).sqrt()),
            Mat::from_shape_fn(shape, |(r, _)| (1.0 - ab(r)).sqrt()),
        )
    }

    fn velocity(
        &self,
        g: &Graph,
        p: &BoundParams,
        z_t: Var,
        timesteps: &[usize],
        cond: Var,
    ) -> Var {
        let temb = g.constant(time_embedding(timesteps, self.time_dim, self.timesteps));
        let x = g.concat_cols(&[z_t, temb, cond]);
        let h1 = g.silu(g.linear(x, p.var("w1"), p.var("b1")));
        let x2 = g.concat_cols(&[h1, temb, cond]);
        let h2 = g.add(h1, g.silu(g.linear(x2, p.var("w2"), p.var("b2"))));
        g.linear(h2, p.var("w3"), p.var("b3"))
    }

    fn forward(&self, g: &Graph, p: &BoundParams, z_t: Var, timesteps: &[usize], cond: Var) -> Var {
        let v = self.velocity(g, p, z_t, timesteps, cond);
        let (a, b) = self.mixing(timesteps);
        g.add(g.mul(v, g.constant(a)), g.mul(z_t, g.constant(b)))
    }

    fn tau(&self, g: &Graph, p: &BoundParams, identity: Var) -> Var {
        g.linear(identity, p.var("tau_w"), p.var("tau_b"))
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut metadata = serde_json::json!({
            "latent_dim": self.latent_dim,
            "identity_dim": self.identity_dim,
            "time_dim": self.time_dim,
            "timesteps": self.timesteps,
        });
        merge(&mut metadata, meta);
        self.params
            .add_to(Checkpoint::new("denoiser", metadata))
            .with("alpha_bars", &self.alpha_bars)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("denoiser")?;
        Ok(Self {
            latent_dim: ck.meta_usize("latent_dim")?,
            identity_dim: ck.meta_usize("identity_dim")?,
            time_dim: ck.meta_usize("time_dim")?,
            timesteps: ck.meta_usize("timesteps")?,
            alpha_bars: ck.tensor("alpha_bars")?.clone(),
            params: ParamSet::from_checkpoint(ck, &NAMES)?,
        })
    }
}

impl NoisePredictor for ToyDenoiser {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn identity_dim(&self) -> usize {
        self.identity_dim
    }

    fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn condition_var(&self, g: &Graph, identity: Var) -> Var {
        let p = self.params.bind(g, false);
        self.tau(g, &p, identity)
    }

    fn null_condition_var(&self, g: &Graph, rows: usize) -> Var {
        let null = g.constant_arc(self.params.get("null").clone());
        g.broadcast_rows(null, rows)
    }

    fn predict_var(&self, g: &Graph, z_t: Var, timesteps: &[usize], condition: Var) -> Var {
        let p = self.params.bind(g, false);
        self.forward(g, &p, z_t, timesteps, condition)
    }
}

/// Per-epoch mean training losses.
pub type LossCurve = Vec<f64>;

/// Trains the noise predictor on `(latent, identity)` pairs with the standard
/// noise-regression objective and random condition dropout.
pub fn train_toy_denoiser(
    latents: &Mat,
    identities: &Mat,
    schedule: &NoiseSchedule,
    config: &DenoiserConfig,
    epochs: usize,
    seed: u64,
) -> Result<(ToyDenoiser, LossCurve)> {
    let n = latents.nrows();
    if n == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    if identities.nrows() != n {
        return Err(Error::shape(n, identities.nrows()));
    }
    let (ld, id) = (latents.ncols(), identities.ncols());
    let (hd, cd, td) = (config.hidden, config.cond_dim, config.time_dim);
    let mut rng = rng_for(seed, "denoiser");
    let mut w3 = init_weight(&mut rng, hd, ld);
    w3.mapv_inplace(|v| v * 0.1);
    let params = ParamSet::new(vec![
        ("tau_w", init_weight(&mut rng, id, cd)),
        ("tau_b", Mat::zeros((1, cd))),
        ("null", gaussian_mat(&mut rng, 1, cd) * 0.1),
        ("w1", init_weight(&mut rng, ld + td + cd, hd)),
        ("b1", Mat::zeros((1, hd))),
        ("w2", init_weight(&mut rng, hd + td + cd, hd)),
        ("b2", Mat::zeros((1, hd))),
        ("w3", w3),
        ("b3", Mat::zeros((1, ld))),
    ]);
    let mut model = ToyDenoiser {
        latent_dim: ld,
        identity_dim: id,
        time_dim: td,
        timesteps: schedule.steps(),
        alpha_bars: Mat::from_shape_vec((1, schedule.steps()), schedule.alpha_bars().to_vec())
            .expect("sized"),
        params,
    };
    let mut adam = Adam::new(config.lr, &model.params.shapes());
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in minibatches(&mut rng, n, config.batch) {
            let b = batch.len();
            let ts: Vec<usize> = (0..b)
                .map(|_| rng.gen_range(1..=schedule.steps()))
                .collect();
            let eps = gaussian_mat(&mut rng, b, ld);
            let z0 = select_rows(latents, &batch);
            let mut z_t = Mat::zeros((b, ld));
            for r in 0..b {
                let row = z0.row(r).insert_axis(ndarray::Axis(0)).to_owned();
                let e = eps.row(r).insert_axis(ndarray::Axis(0)).to_owned();
                let s = forward_noise(&row, ts[r], &e, schedule)?;
                z_t.row_mut(r).assign(&s.x_t.row(0));
            }
            let keep = Mat::from_shape_fn((b, 1), |_| {
                if rng.gen::<f64>() < config.cond_dropout {
                    0.0
                } else {
                    1.0
                }
            });
            let g = Graph::new();
            let p = model.params.bind(&g, true);
            let idv = g.constant(select_rows(identities, &batch));
            let cond = model.tau(&g, &p, idv);
            let null = g.broadcast_rows(p.var("null"), b);
            let keep_m = keep.broadcast((b, cd)).expect("broadcast").to_owned();
            let drop_m = keep_m.mapv(|k| 1.0 - k);
            let c = g.add(
                g.mul(cond, g.constant(keep_m)),
                g.mul(null, g.constant(drop_m)),
            );
            let (a, sb) = model.mixing(&ts);
            let target = &a * &eps - &sb * &z0;
            let pred = model.velocity(&g, &p, g.constant(z_t), &ts, c);
            let loss = g.mean(g.square(g.sub(pred, g.constant(target))));
            total += g.scalar(loss) * b as f64;
            count += b;
            let grads = g.backward(loss);
            model.params.adam_step(&mut adam, &p, &grads);
        }
        curve.push(total / count as f64);
    }
    Ok((model, curve))
}
