//! Face parsers: the exact construction-mask parser for synthetic faces and a
//! small differentiable segmenter (per-pixel prior + 3x3 colour filter) that
//! supplies gradients and serves arbitrary images.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, SparseMap, Var};
use crate::image::{ImageTensor, Mask};
use crate::models::checkpoint::Checkpoint;
use crate::models::codec::{merge, triple};
use crate::models::dataset::Dataset;
use crate::models::params::{minibatches, BoundParams, ParamSet};
use crate::models::synth::{Region, SyntheticFace};
use crate::models::traits::{check_image, FaceParser};
use crate::resample::reflect;
use crate::util::{gaussian_mat, rng_for, Adam};

const NAMES: [&str; 3] = ["prior", "kernel", "bias"];
const PATCH: usize = 3;

#[derive(Debug, Clone)]
pub struct SoftSegmenter {
    image_shape: (usize, usize, usize),
    im2col: Arc<SparseMap>,
    params: ParamSet,
}

/// Gathers each pixel's reflect-padded `3 x 3 x C` neighbourhood into a row.
fn im2col(shape: (usize, usize, usize)) -> SparseMap {
    let (h, w, c) = shape;
    let k = PATCH * PATCH * c;
    let r = (PATCH / 2) as i64;
    let mut entries = Vec::with_capacity(h * w * k);
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * k;
            let mut j = 0;
            for dy in 0..PATCH as i64 {
                let sy = reflect(y as i64 + dy - r, h);
                for dx in 0..PATCH as i64 {
                    let sx = reflect(x as i64 + dx - r, w);
                    for ch in 0..c {
                        entries.push(((base + j) as u32, ((sy * w + sx) * c + ch) as u32, 1.0));
                        j += 1;
                    }
                }
            }
        }
    }
    SparseMap::new(h * w * c, h * w * k, entries)
}

impl SoftSegmenter {
    fn build(image_shape: (usize, usize, usize), params: ParamSet) -> Self {
        Self {
            image_shape,
            im2col: Arc::new(im2col(image_shape)),
            params,
        }
    }

    /// Per-region probabilities, `(n * H * W) x regions`.
    fn probabilities(&self, g: &Graph, p: &BoundParams, images: Var) -> Var {
        let (h, w, c) = self.image_shape;
        let n = g.shape(images).0;
        let patches = g.sparse(g.affine(images, 1.0, -0.5), &self.im2col);
        let patches = g.reshape(patches, n * h * w, PATCH * PATCH * c);
        let filtered = g.add_row(g.matmul(patches, p.var("kernel")), p.var("bias"));
        let regions = Region::ALL.len();
        let flat = g.reshape(filtered, n, h * w * regions);
        let logits = g.add_row(flat, p.var("prior"));
        g.reshape(g.sigmoid(logits), n * h * w, regions)
    }

    /// Probabilistic union `1 - prod(1 - m_r)` as `n x (H*W)` rows.
    fn union_var(&self, g: &Graph, probs: Var, rows: usize, regions: &[Region]) -> Var {
        let (h, w, _) = self.image_shape;
        let mut keep: Option<Var> = None;
        for r in regions {
            let i = r.index();
            let miss = g.affine(g.slice_cols(probs, i, i + 1), -1.0, 1.0);
            keep = Some(match keep {
                None => miss,
                Some(k) => g.mul(k, miss),
            });
        }
        let union = g.affine(keep.expect("nonempty regions"), -1.0, 1.0);
        g.reshape(union, rows, h * w)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let (h, w, c) = self.image_shape;
        let mut metadata = serde_json::json!({ "image_shape": [h, w, c] });
        merge(&mut metadata, meta);
        self.params
            .add_to(Checkpoint::new("soft_segmenter", metadata))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("soft_segmenter")?;
        Ok(Self::build(
            triple(&ck.meta_usizes("image_shape")?)?,
            ParamSet::from_checkpoint(ck, &NAMES)?,
        ))
    }
}

fn check_regions(regions: &[Region]) -> Result<()> {
    if regions.is_empty() {
        return Err(Error::invalid("empty region set"));
    }
    Ok(())
}

impl FaceParser for SoftSegmenter {
    fn parse(&self, image: &ImageTensor, regions: &[Region]) -> Result<Mask> {
        check_image(image, self.image_shape)?;
        let g = Graph::new();
        let x = g.constant(image.to_row());
        let m = self.parse_var(&g, x, regions)?;
        let (h, w, _) = self.image_shape;
        Ok(Mask::from_clamped(
            h,
            w,
            g.value(m).iter().copied().collect(),
        ))
    }

    fn parse_var(&self, g: &Graph, image: Var, regions: &[Region]) -> Result<Var> {
        check_regions(regions)?;
        let p = self.params.bind(g, false);
        let n = g.shape(image).0;
        let probs = self.probabilities(g, &p, image);
        Ok(self.union_var(g, probs, n, regions))
    }
}

/// Parser bound to one synthetic face: reports its construction masks (the
/// perturbation never moves the geometry) and defers gradients to the soft head.
#[derive(Debug, Clone)]
pub struct ExactParser {
    masks: BTreeMap<Region, Mask>,
    soft: Arc<SoftSegmenter>,
}

impl ExactParser {
    pub fn new(face: &SyntheticFace, soft: Arc<SoftSegmenter>) -> Self {
        Self {
            masks: face.region_masks.clone(),
            soft,
        }
    }
}

impl FaceParser for ExactParser {
    fn parse(&self, image: &ImageTensor, regions: &[Region]) -> Result<Mask> {
        check_regions(regions)?;
        let first = &self.masks[&regions[0]];
        first.ensure_matches(image)?;
        regions[1..]
            .iter()
            .try_fold(first.clone(), |acc, r| acc.union(&self.masks[r]))
    }

    fn parse_var(&self, g: &Graph, image: Var, regions: &[Region]) -> Result<Var> {
        self.soft.parse_var(g, image, regions)
    }
}

/// Trains the soft segmenter with per-pixel binary cross-entropy against the
/// construction masks.
pub fn train_soft_segmenter(dataset: &Dataset, epochs: usize, seed: u64) -> Result<SoftSegmenter> {
    dataset.ensure_nonempty()?;
    let shape = dataset.faces[0].image.shape();
    let (h, w, c) = shape;
    let regions = Region::ALL.len();
    let x = dataset.image_matrix()?;
    // Targets laid out as `(n * H * W) x regions`.
    let targets: Vec<Mat> = dataset
        .faces
        .iter()
        .map(|f| {
            Mat::from_shape_fn((h * w, regions), |(p, r)| {
                f.mask(Region::ALL[r]).values()[p]
            })
        })
        .collect();
    let mean_mask = targets
        .iter()
        .fold(Mat::zeros((h * w, regions)), |a, t| a + t)
        / targets.len() as f64;
    let prior = mean_mask
        .mapv(|m| {
            let m = m.clamp(0.02, 0.98);
            (m / (1.0 - m)).ln()
        })
        .into_shape_with_order((1, h * w * regions))
        .expect("sized");
    let mut rng = rng_for(seed, "segmenter");
    let params = ParamSet::new(vec![
        ("prior", prior),
        (
            "kernel",
            gaussian_mat(&mut rng, PATCH * PATCH * c, regions) * 0.1,
        ),
        ("bias", Mat::zeros((1, regions))),
    ]);
    let mut model = SoftSegmenter::build(shape, params);
    let mut adam = Adam::new(0.02, &model.params.shapes());
    for _ in 0..epochs {
        for batch in minibatches(&mut rng, x.nrows(), 32) {
            let g = Graph::new();
            let p = model.params.bind(&g, true);
            let xb = g.constant(x.select(ndarray::Axis(0), &batch));
            let probs = g.clamp(model.probabilities(&g, &p, xb), 1e-6, 1.0 - 1e-6);
            let views: Vec<_> = batch.iter().map(|&i| targets[i].view()).collect();
            let t = ndarray::concatenate(ndarray::Axis(0), &views).expect("stack");
            let one_minus_t = t.mapv(|v| 1.0 - v);
            let pos = g.mul(g.ln(probs), g.constant(t));
            let neg = g.mul(g.ln(g.affine(probs, -1.0, 1.0)), g.constant(one_minus_t));
            let loss = g.scale(g.mean(g.add(pos, neg)), -1.0);
            let grads = g.backward(loss);
            model.params.adam_step(&mut adam, &p, &grads);
        }
    }
    Ok(model)
}
