//! Linear latent codec: principal components of the training faces, with the
//! coefficient vector laid out as a `4 x 8 x 8` latent.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Axis};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, Var};
use crate::models::checkpoint::Checkpoint;
use crate::models::dataset::Dataset;
use crate::models::traits::LatentCodec;
use crate::util::{gaussian_mat, orthonormalize_columns, orthonormalize_rows, rng_for};

pub const DEFAULT_LATENT_SHAPE: (usize, usize, usize) = (4, 8, 8);

#[derive(Debug, Clone)]
pub struct PcaCodec {
    image_shape: (usize, usize, usize),
    latent_shape: (usize, usize, usize),
    mean: Arc<Mat>,
    neg_mean: Arc<Mat>,
    /// `D x K`, orthonormal columns.
    basis_t: Arc<Mat>,
    /// `K x D`.
    basis: Arc<Mat>,
    /// Latent units per coefficient unit; makes training latents unit-RMS.
    scale: f64,
}

impl PcaCodec {
    pub fn new(
        image_shape: (usize, usize, usize),
        latent_shape: (usize, usize, usize),
        mean: Mat,
        basis: Mat,
        scale: f64,
    ) -> Result<Self> {
        let d = image_shape.0 * image_shape.1 * image_shape.2;
        let k = latent_shape.0 * latent_shape.1 * latent_shape.2;
        if mean.dim() != (1, d) {
            return Err(Error::shape((1, d), mean.dim()));
        }
        if basis.dim() != (k, d) {
            return Err(Error::shape((k, d), basis.dim()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid("codec scale must be positive"));
        }
        Ok(Self {
            image_shape,
            latent_shape,
            neg_mean: Arc::new(-&mean),
            mean: Arc::new(mean),
            basis_t: Arc::new(basis.t().as_standard_layout().into_owned()),
            basis: Arc::new(basis),
            scale,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let (c, h, w) = self.latent_shape;
        let (ih, iw, ic) = self.image_shape;
        let mut metadata = serde_json::json!({
            "latent_shape": [c, h, w],
            "image_shape": [ih, iw, ic],
            "scale": self.scale,
        });
        merge(&mut metadata, meta);
        Checkpoint::new("codec", metadata)
            .with("mean", &self.mean)
            .with("basis", &self.basis)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("codec")?;
        let l = triple(&ck.meta_usizes("latent_shape")?)?;
        let i = triple(&ck.meta_usizes("image_shape")?)?;
        Self::new(
            i,
            l,
            ck.tensor("mean")?.clone(),
            ck.tensor("basis")?.clone(),
            ck.meta_f64("scale")?,
        )
    }
}

impl LatentCodec for PcaCodec {
    fn image_shape(&self) -> (usize, usize, usize) {
        self.image_shape
    }

    fn latent_shape(&self) -> (usize, usize, usize) {
        self.latent_shape
    }

    fn encode_var(&self, g: &Graph, images: Var) -> Var {
        let nm = g.constant_arc(self.neg_mean.clone());
        let centered = g.add_row(images, nm);
        let bt = g.constant_arc(self.basis_t.clone());
        let coeff = g.matmul(centered, bt);
        g.scale(coeff, 1.0 / self.scale)
    }

    fn decode_var(&self, g: &Graph, latents: Var) -> Var {
        let b = g.constant_arc(self.basis.clone());
        let coeff = g.scale(latents, self.scale);
        let x = g.matmul(coeff, b);
        let m = g.constant_arc(self.mean.clone());
        g.add_row(x, m)
    }
}

/// Principal subspace of the centred rows of `x`, found by `iterations` rounds of
/// orthogonal iteration in the `n x n` Gram space followed by a Rayleigh-Ritz
/// rotation. Returns the mean row, `k x D` orthonormal basis rows sorted by
/// decreasing variance, and the per-component variances.
pub fn principal_subspace(
    x: &Mat,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<(Mat, Mat, Vec<f64>)> {
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    if k > d {
        return Err(Error::invalid(format!(
            "{k} components exceed dimension {d}"
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
    let xc = x - &mean;
    let gram = xc.dot(&xc.t());
    let mut rng = rng_for(seed, "pca");
    let r = k.min(n);
    let mut v = gaussian_mat(&mut rng, n, r);
    orthonormalize_columns(&mut v);
    for _ in 0..iterations {
        v = gram.dot(&v);
        orthonormalize_columns(&mut v);
    }
    let h = v.t().dot(&gram).dot(&v);
    let hm = DMatrix::from_row_slice(r, r, h.as_standard_layout().as_slice().expect("contiguous"));
    let eig = SymmetricEigen::new(hm);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut basis = Mat::zeros((k, d));
    let mut variances = vec![0.0; k];
    let mut filled = 0;
    for &j in &order {
        let lambda = eig.eigenvalues[j];
        if lambda <= top * 1e-12 || lambda <= 0.0 {
            break;
        }
        let q = Mat::from_shape_fn((r, 1), |(i, _)| eig.eigenvectors[(i, j)]);
        let coeffs = v.dot(&q);
        let row = coeffs.t().dot(&xc) / lambda.sqrt();
        basis.row_mut(filled).assign(&row.row(0));
        variances[filled] = lambda / n as f64;
        filled += 1;
    }
    // Directions beyond the data rank: random, orthogonal to the rest.
    if filled < k {
        let extra = gaussian_mat(&mut rng, k - filled, d);
        basis.slice_mut(s![filled.., ..]).assign(&extra);
    }
    orthonormalize_rows(&mut basis);
    Ok((mean, basis, variances))
}

/// Fits a [`PcaCodec`]. `epochs` counts orthogonal-iteration rounds; at zero
/// the subspace is a random slice of the data span.
pub fn train_toy_codec(
    dataset: &Dataset,
    latent_shape: (usize, usize, usize),
    epochs: usize,
    seed: u64,
) -> Result<PcaCodec> {
    dataset.ensure_nonempty()?;
    let x = dataset.image_matrix()?;
    let k = latent_shape.0 * latent_shape.1 * latent_shape.2;
    let (mean, basis, _) = principal_subspace(&x, k, epochs, seed)?;
    let coeff = (&x - &mean).dot(&basis.t());
    let rms = (coeff.mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt();
    let scale = if rms > 1e-12 { rms } else { 1.0 };
    PcaCodec::new(
        dataset.faces[0].image.shape(),
        latent_shape,
        mean,
        basis,
        scale,
    )
}

pub(crate) fn triple(v: &[usize]) -> Result<(usize, usize, usize)> {
    match v {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::Checkpoint(format!("expected 3 dims, found {v:?}"))),
    }
}

pub(crate) fn merge(base: &mut serde_json::Value, extra: serde_json::Value) {
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
}
