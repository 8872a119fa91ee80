//! Style generator / inversion encoder pair.
//!
//! Images live in logit space `y = logit(0.005 + 0.99 x)`. The generator maps a
//! layered style code through a linear-plus-tanh head onto the leading principal
//! components of training logits, adds per-scale noise maps (nearest-upsampled,
//! fixed strengths) and maps back through the sigmoid. The small component
//! count makes the generator a face prior: it reproduces faces well and
//! unstructured perturbations poorly.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, SparseMap, Var};
use crate::models::checkpoint::Checkpoint;
use crate::models::codec::{merge, principal_subspace, triple};
use crate::models::dataset::Dataset;
use crate::models::params::{minibatches, select_rows, BoundParams, ParamSet};
use crate::models::traits::{InversionEncoder, StyleGenerator};
use crate::resample::nearest_broadcast;
use crate::util::{gaussian_mat, init_weight, orthonormalize_rows, rng_for, Adam};

const LOGIT_LO: f64 = 0.005;
const LOGIT_SPAN: f64 = 0.99;

const GEN_NAMES: [&str; 6] = ["mean", "basis", "wg", "bg", "wh", "wo"];
const INV_NAMES: [&str; 6] = ["mean_t", "basis_t", "we", "be", "vh", "vo"];

pub const DEFAULT_NOISE_SCALES: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_NOISE_STRENGTHS: [f64; 4] = [0.25, 0.2, 0.15, 0.1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleConfig {
    pub layers: usize,
    pub dim: usize,
    pub components: usize,
    pub hidden: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            dim: 64,
            components: 48,
            hidden: 64,
            batch: 64,
            lr: 5e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyStyleGenerator {
    image_shape: (usize, usize, usize),
    layers: usize,
    dim: usize,
    noise_shapes: Vec<(usize, usize)>,
    strengths: Vec<f64>,
    upsample: Vec<Arc<SparseMap>>,
    params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct ToyInversionEncoder {
    layers: usize,
    dim: usize,
    params: ParamSet,
}

fn logit_var(g: &Graph, x: Var) -> Var {
    let p = g.affine(x, LOGIT_SPAN, LOGIT_LO);
    let q = g.affine(p, -1.0, 1.0);
    g.sub(g.ln(p), g.ln(q))
}

fn logit(x: f64) -> f64 {
    let p = LOGIT_SPAN * x + LOGIT_LO;
    (p / (1.0 - p)).ln()
}

impl ToyStyleGenerator {
    fn build(
        image_shape: (usize, usize, usize),
        layers: usize,
        dim: usize,
        noise_shapes: Vec<(usize, usize)>,
        strengths: Vec<f64>,
        params: ParamSet,
    ) -> Self {
        let (h, w, c) = image_shape;
        let upsample = noise_shapes
            .iter()
            .map(|&s| Arc::new(nearest_broadcast(s, (h, w), c)))
            .collect();
        Self {
            image_shape,
            layers,
            dim,
            noise_shapes,
            strengths,
            upsample,
            params,
        }
    }

    /// Component coefficients for style rows.
    fn coefficients(&self, g: &Graph, p: &BoundParams, w: Var) -> Var {
        let lin = g.linear(w, p.var("wg"), p.var("bg"));
        let hidden = g.tanh(g.matmul(w, p.var("wh")));
        g.add(lin, g.matmul(hidden, p.var("wo")))
    }

    fn render(&self, g: &Graph, p: &BoundParams, coeff: Var, noise: &[Var]) -> Var {
        let mut y = g.add_row(g.matmul(coeff, p.var("basis")), p.var("mean"));
        let rows = g.shape(coeff).0;
        for ((n, map), s) in noise.iter().zip(&self.upsample).zip(&self.strengths) {
            let up = g.scale(g.sparse(*n, map), *s);
            let up = if g.shape(up).0 == rows {
                up
            } else {
                g.broadcast_rows(up, rows)
            };
            y = g.add(y, up);
        }
        let sig = g.sigmoid(y);
        g.clamp(
            g.affine(sig, 1.0 / LOGIT_SPAN, -LOGIT_LO / LOGIT_SPAN),
            0.0,
            1.0,
        )
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let (h, w, c) = self.image_shape;
        let mut metadata = serde_json::json!({
            "image_shape": [h, w, c],
            "layers": self.layers,
            "dim": self.dim,
            "noise_shapes": self.noise_shapes.iter().map(|s| [s.0, s.1]).collect::<Vec<_>>(),
            "noise_strengths": self.strengths,
        });
        merge(&mut metadata, meta);
        self.params
            .add_to(Checkpoint::new("style_generator", metadata))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("style_generator")?;
        let shapes: Vec<(usize, usize)> = ck
            .metadata
            .get("noise_shapes")
            .and_then(|v| serde_json::from_value::<Vec<[usize; 2]>>(v.clone()).ok())
            .ok_or_else(|| Error::Checkpoint("missing noise_shapes".into()))?
            .into_iter()
            .map(|[a, b]| (a, b))
            .collect();
        let strengths: Vec<f64> = ck
            .metadata
            .get("noise_strengths")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| Error::Checkpoint("missing noise_strengths".into()))?;
        Ok(Self::build(
            triple(&ck.meta_usizes("image_shape")?)?,
            ck.meta_usize("layers")?,
            ck.meta_usize("dim")?,
            shapes,
            strengths,
            ParamSet::from_checkpoint(ck, &GEN_NAMES)?,
        ))
    }
}

impl StyleGenerator for ToyStyleGenerator {
    fn image_shape(&self) -> (usize, usize, usize) {
        self.image_shape
    }

    fn style_shape(&self) -> (usize, usize) {
        (self.layers, self.dim)
    }

    fn noise_shapes(&self) -> Vec<(usize, usize)> {
        self.noise_shapes.clone()
    }

    fn generate_var(&self, g: &Graph, w: Var, noise: &[Var]) -> Var {
        let p = self.params.bind(g, false);
        let coeff = self.coefficients(g, &p, w);
        self.render(g, &p, coeff, noise)
    }
}

impl ToyInversionEncoder {
    fn forward(&self, g: &Graph, p: &BoundParams, images: Var) -> Var {
        let y = logit_var(g, images);
        let centered = g.add_row(y, p.var("mean_t"));
        let u = g.matmul(centered, p.var("basis_t"));
        let lin = g.linear(u, p.var("we"), p.var("be"));
        let hidden = g.tanh(g.matmul(u, p.var("vh")));
        g.add(lin, g.matmul(hidden, p.var("vo")))
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut metadata = serde_json::json!({ "layers": self.layers, "dim": self.dim });
        merge(&mut metadata, meta);
        self.params
            .add_to(Checkpoint::new("inversion_encoder", metadata))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("inversion_encoder")?;
        Ok(Self {
            layers: ck.meta_usize("layers")?,
            dim: ck.meta_usize("dim")?,
            params: ParamSet::from_checkpoint(ck, &INV_NAMES)?,
        })
    }
}

impl InversionEncoder for ToyInversionEncoder {
    fn style_shape(&self) -> (usize, usize) {
        (self.layers, self.dim)
    }

    fn invert_var(&self, g: &Graph, images: Var) -> Var {
        let p = self.params.bind(g, false);
        self.forward(g, &p, images)
    }
}

/// Fits the logit-space subspace, initialises the pair at the linear
/// projection optimum, then refines both jointly on pixel reconstruction with
/// zero noise maps.
pub fn train_toy_generator_and_inverter(
    dataset: &Dataset,
    config: &StyleConfig,
    epochs: usize,
    seed: u64,
) -> Result<(ToyStyleGenerator, ToyInversionEncoder)> {
    dataset.ensure_nonempty()?;
    let shape = dataset.faces[0].image.shape();
    if DEFAULT_NOISE_SCALES
        .iter()
        .any(|&s| s > shape.0 || s > shape.1)
    {
        return Err(Error::invalid("noise scales exceed the image size"));
    }
    let x = dataset.image_matrix()?;
    let y = x.mapv(logit);
    let (mean, basis, _) = principal_subspace(&y, config.components, 30, seed)?;
    let wdim = config.layers * config.dim;
    let mut rng = rng_for(seed, "style");
    // Orthonormal rows: `we` embeds coefficients in W+, `wg = we^T` reads them back.
    let mut embed = gaussian_mat(&mut rng, config.components, wdim);
    orthonormalize_rows(&mut embed);
    let generator_params = ParamSet::new(vec![
        ("mean", mean.clone()),
        ("basis", basis.clone()),
        ("wg", embed.t().to_owned()),
        ("bg", Mat::zeros((1, config.components))),
        ("wh", init_weight(&mut rng, wdim, config.hidden)),
        ("wo", Mat::zeros((config.hidden, config.components))),
    ]);
    let inverter_params = ParamSet::new(vec![
        ("mean_t", -&mean),
        ("basis_t", basis.t().to_owned()),
        ("we", embed),
        ("be", Mat::zeros((1, wdim))),
        (
            "vh",
            init_weight(&mut rng, config.components, config.hidden),
        ),
        ("vo", Mat::zeros((config.hidden, wdim))),
    ]);
    let noise_shapes: Vec<(usize, usize)> = DEFAULT_NOISE_SCALES.iter().map(|&s| (s, s)).collect();
    let mut generator = ToyStyleGenerator::build(
        shape,
        config.layers,
        config.dim,
        noise_shapes,
        DEFAULT_NOISE_STRENGTHS.to_vec(),
        generator_params,
    );
    let mut inverter = ToyInversionEncoder {
        layers: config.layers,
        dim: config.dim,
        params: inverter_params,
    };
    // The subspace itself stays fixed; only the heads train.
    let frozen = ["mean", "basis", "mean_t", "basis_t"];
    let mut gen_adam = Adam::new(config.lr, &generator.params.shapes());
    let mut inv_adam = Adam::new(config.lr, &inverter.params.shapes());
    for _ in 0..epochs {
        for batch in minibatches(&mut rng, x.nrows(), config.batch) {
            let g = Graph::new();
            let pg = generator.params.bind(&g, true);
            let pi = inverter.params.bind(&g, true);
            let xb = g.constant(select_rows(&x, &batch));
            let w = inverter.forward(&g, &pi, xb);
            let coeff = generator.coefficients(&g, &pg, w);
            let out = generator.render(&g, &pg, coeff, &[]);
            let loss = g.mean(g.square(g.sub(out, xb)));
            let mut grads = g.backward(loss);
            for name in frozen {
                for bound in [&pg, &pi] {
                    if let Some(v) = bound.try_var(name) {
                        grads.take(v);
                    }
                }
            }
            generator.params.adam_step(&mut gen_adam, &pg, &grads);
            inverter.params.adam_step(&mut inv_adam, &pi, &grads);
        }
    }
    Ok((generator, inverter))
}
