//! Model interfaces consumed by the swap pipeline, the losses and the editor.
//!
//! Every interface exposes a graph-building entry point (`*_var`) so gradients
//! flow through it, plus convenience methods for plain inference. The toy
//! models in this crate implement them; adapters around pretrained networks can
//! implement the same traits, using [`crate::graph::CustomOp`] for the backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, Var};
use crate::image::{ImageTensor, Mask};
use crate::models::synth::{Attribute, Region};

/// Unit-norm identity feature produced by a [`FaceEmbedder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEmbedding(pub Vec<f64>);

impl IdentityEmbedding {
    pub fn cosine(&self, other: &IdentityEmbedding) -> f64 {
        crate::util::cosine(&self.0, &other.0)
    }

    pub fn to_row(&self) -> Mat {
        Mat::from_shape_vec((1, self.0.len()), self.0.clone()).expect("row")
    }
}

/// Conditioning input of a [`NoisePredictor`]: an identity vector or the null input.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionEmbedding {
    Identity(IdentityEmbedding),
    Null,
}

/// Layered style code (`layers x dim`) driving a [`StyleGenerator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    pub layers: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl StyleVector {
    pub fn from_row(row: &Mat, layers: usize, dim: usize) -> Result<Self> {
        if row.len() != layers * dim {
            return Err(Error::shape(layers * dim, row.len()));
        }
        Ok(Self {
            layers,
            dim,
            data: row.iter().copied().collect(),
        })
    }

    pub fn to_row(&self) -> Mat {
        Mat::from_shape_vec((1, self.data.len()), self.data.clone()).expect("row")
    }
}

/// Per-scale single-channel noise inputs of a [`StyleGenerator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMapSet {
    pub maps: Vec<NoiseMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl NoiseMapSet {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Self {
            maps: shapes
                .iter()
                .map(|&(h, w)| NoiseMap {
                    height: h,
                    width: w,
                    values: vec![0.0; h * w],
                })
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.maps.iter().map(|m| (m.height, m.width)).collect()
    }

    pub fn ensure_shapes(&self, shapes: &[(usize, usize)]) -> Result<()> {
        if self.shapes() != shapes {
            return Err(Error::shape(shapes, self.shapes()));
        }
        Ok(())
    }

    /// Adds every map to the graph as a constant row.
    pub fn constants(&self, g: &Graph) -> Vec<Var> {
        self.maps
            .iter()
            .map(|m| {
                g.constant(Mat::from_shape_vec((1, m.values.len()), m.values.clone()).expect("row"))
            })
            .collect()
    }
}

pub trait LatentCodec: Send + Sync {
    fn image_shape(&self) -> (usize, usize, usize);
    /// `(channels, height, width)` of the latent code.
    fn latent_shape(&self) -> (usize, usize, usize);

    fn latent_dim(&self) -> usize {
        let (c, h, w) = self.latent_shape();
        c * h * w
    }

    /// Encodes image rows `n x (H*W*C)` into latent rows `n x latent_dim`.
    fn encode_var(&self, g: &Graph, images: Var) -> Var;
    /// Decodes latent rows into unclamped image rows.
    fn decode_var(&self, g: &Graph, latents: Var) -> Var;

    fn encode(&self, image: &ImageTensor) -> Result<Mat> {
        check_image(image, self.image_shape())?;
        let g = Graph::new();
        let x = g.constant(image.to_row());
        let z = self.encode_var(&g, x);
        Ok((*g.value(z)).clone())
    }

    fn decode(&self, latent: &Mat) -> Result<ImageTensor> {
        if latent.dim() != (1, self.latent_dim()) {
            return Err(Error::shape((1, self.latent_dim()), latent.dim()));
        }
        let g = Graph::new();
        let z = g.constant(latent.clone());
        let x = self.decode_var(&g, z);
        let (h, w, c) = self.image_shape();
        ImageTensor::from_row(&g.value(x), h, w, c)
    }
}

pub trait FaceEmbedder: Send + Sync {
    fn image_shape(&self) -> (usize, usize, usize);
    fn embedding_dim(&self) -> usize;
    /// Unit-norm identity rows for image rows.
    fn embed_var(&self, g: &Graph, images: Var) -> Var;
    /// Intermediate activations used by the perceptual distance, first layer first.
    fn feature_layers(&self, image: &ImageTensor) -> Result<Vec<Vec<f64>>>;

    fn embed(&self, image: &ImageTensor) -> Result<IdentityEmbedding> {
        check_image(image, self.image_shape())?;
        let g = Graph::new();
        let x = g.constant(image.to_row());
        let e = self.embed_var(&g, x);
        Ok(IdentityEmbedding(g.value(e).iter().copied().collect()))
    }
}

pub trait NoisePredictor: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn identity_dim(&self) -> usize;
    /// Number of diffusion timesteps the predictor was trained for.
    fn timesteps(&self) -> usize;
    /// The condition encoder applied to identity rows.
    fn condition_var(&self, g: &Graph, identity: Var) -> Var;
    /// `rows` copies of the null condition.
    fn null_condition_var(&self, g: &Graph, rows: usize) -> Var;
    /// Noise prediction for latent rows `z_t`, one timestep per row, one condition row per row.
    fn predict_var(&self, g: &Graph, z_t: Var, timesteps: &[usize], condition: Var) -> Var;

    fn predict(&self, z_t: &Mat, t: usize, condition: &ConditionEmbedding) -> Result<Mat> {
        if z_t.ncols() != self.latent_dim() {
            return Err(Error::shape(self.latent_dim(), z_t.ncols()));
        }
        let g = Graph::new();
        let rows = z_t.nrows();
        let z = g.constant(z_t.clone());
        let c = match condition {
            ConditionEmbedding::Null => self.null_condition_var(&g, rows),
            ConditionEmbedding::Identity(e) => {
                if e.0.len() != self.identity_dim() {
                    return Err(Error::shape(self.identity_dim(), e.0.len()));
                }
                let id = g.constant(e.to_row());
                let c = self.condition_var(&g, id);
                g.broadcast_rows(c, rows)
            }
        };
        let out = self.predict_var(&g, z, &vec![t; rows], c);
        Ok((*g.value(out)).clone())
    }
}

pub trait StyleGenerator: Send + Sync {
    fn image_shape(&self) -> (usize, usize, usize);
    /// `(layers, dim)` of the style code.
    fn style_shape(&self) -> (usize, usize);
    fn noise_shapes(&self) -> Vec<(usize, usize)>;
    /// Image row in `[0, 1]` for a style row and one row per noise map.
    fn generate_var(&self, g: &Graph, w: Var, noise: &[Var]) -> Var;

    fn generate(&self, w: &StyleVector, noise: &NoiseMapSet) -> Result<ImageTensor> {
        let (layers, dim) = self.style_shape();
        if (w.layers, w.dim) != (layers, dim) {
            return Err(Error::shape((layers, dim), (w.layers, w.dim)));
        }
        noise.ensure_shapes(&self.noise_shapes())?;
        let g = Graph::new();
        let wv = g.constant(w.to_row());
        let nv = noise.constants(&g);
        let out = self.generate_var(&g, wv, &nv);
        let (h, wd, c) = self.image_shape();
        ImageTensor::from_row(&g.value(out), h, wd, c)
    }
}

pub trait InversionEncoder: Send + Sync {
    fn style_shape(&self) -> (usize, usize);
    fn invert_var(&self, g: &Graph, images: Var) -> Var;

    fn invert(&self, image: &ImageTensor) -> Result<StyleVector> {
        let g = Graph::new();
        let x = g.constant(image.to_row());
        let w = self.invert_var(&g, x);
        let (layers, dim) = self.style_shape();
        StyleVector::from_row(&g.value(w), layers, dim)
    }
}

pub trait FaceParser: Send + Sync {
    /// Mask of the union of `regions` used for blending and reporting.
    fn parse(&self, image: &ImageTensor, regions: &[Region]) -> Result<Mask>;
    /// Differentiable soft mask row `1 x (H*W)` for the union of `regions`.
    fn parse_var(&self, g: &Graph, image: Var, regions: &[Region]) -> Result<Var>;
}

pub trait AttributeClassifier: Send + Sync {
    fn attributes(&self) -> &[Attribute];
    /// Probability rows `n x attributes().len()`, each strictly inside `(0, 1)`.
    fn classify_var(&self, g: &Graph, images: Var) -> Var;

    fn attribute_column(&self, attribute: Attribute) -> Result<usize> {
        self.attributes()
            .iter()
            .position(|a| *a == attribute)
            .ok_or_else(|| Error::UnknownAttribute(attribute.name().to_string()))
    }

    /// `(p, 1 - p)` for one attribute.
    fn classify(&self, image: &ImageTensor, attribute: Attribute) -> Result<(f64, f64)> {
        let col = self.attribute_column(attribute)?;
        let g = Graph::new();
        let x = g.constant(image.to_row());
        let p = g.value(self.classify_var(&g, x))[[0, col]];
        Ok((p, 1.0 - p))
    }
}

pub(crate) fn check_image(image: &ImageTensor, shape: (usize, usize, usize)) -> Result<()> {
    if image.shape() != shape {
        return Err(Error::shape(shape, image.shape()));
    }
    Ok(())
}
