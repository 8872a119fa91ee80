//! Identity embedder: pooled pixels -> tanh layer -> unit-norm embedding.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, SparseMap, Var};
use crate::image::ImageTensor;
use crate::models::checkpoint::Checkpoint;
use crate::models::codec::{merge, triple};
use crate::models::dataset::Dataset;
use crate::models::params::{minibatches, select_rows, BoundParams, ParamSet};
use crate::models::traits::{check_image, FaceEmbedder};
use crate::resample::adaptive_avg_pool;
use crate::util::{init_weight, rng_for, Adam};

const NAMES: [&str; 5] = ["center", "w1", "b1", "w2", "b2"];

#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    image_shape: (usize, usize, usize),
    pool_factor: usize,
    pool: Arc<SparseMap>,
    params: ParamSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedderConfig {
    pub pool_factor: usize,
    pub hidden: usize,
    pub dim: usize,
    pub batch: usize,
    pub lr: f64,
    /// Logit scale of the cosine-softmax identity objective.
    pub logit_scale: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            pool_factor: 4,
            hidden: 128,
            dim: 32,
            batch: 64,
            lr: 2e-3,
            logit_scale: 10.0,
        }
    }
}

impl ToyEmbedder {
    fn build(image_shape: (usize, usize, usize), pool_factor: usize, params: ParamSet) -> Self {
        let (h, w, c) = image_shape;
        let pool = adaptive_avg_pool((h, w), (h / pool_factor, w / pool_factor), c);
        Self {
            image_shape,
            pool_factor,
            pool: Arc::new(pool),
            params,
        }
    }

    fn forward(&self, g: &Graph, images: Var, trainable: bool) -> (Var, Var, Var, BoundParams) {
        let p = self.params.bind(g, trainable);
        let pooled = g.sparse(images, &self.pool);
        let x = g.add_row(pooled, p.var("center"));
        let h = g.tanh(g.linear(x, p.var("w1"), p.var("b1")));
        let e = g.linear(h, p.var("w2"), p.var("b2"));
        (pooled, h, g.row_normalize(e), p)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let (h, w, c) = self.image_shape;
        let mut metadata = serde_json::json!({
            "image_shape": [h, w, c],
            "pool_factor": self.pool_factor,
        });
        merge(&mut metadata, meta);
        self.params.add_to(Checkpoint::new("embedder", metadata))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("embedder")?;
        let shape = triple(&ck.meta_usizes("image_shape")?)?;
        let params = ParamSet::from_checkpoint(ck, &NAMES)?;
        Ok(Self::build(shape, ck.meta_usize("pool_factor")?, params))
    }
}

impl FaceEmbedder for ToyEmbedder {
    fn image_shape(&self) -> (usize, usize, usize) {
        self.image_shape
    }

    fn embedding_dim(&self) -> usize {
        self.params.get("w2").ncols()
    }

    fn embed_var(&self, g: &Graph, images: Var) -> Var {
        self.forward(g, images, false).2
    }

    fn feature_layers(&self, image: &ImageTensor) -> Result<Vec<Vec<f64>>> {
        check_image(image, self.image_shape)?;
        let g = Graph::new();
        let x = g.constant(image.to_row());
        let (pooled, h, e, _) = self.forward(&g, x, false);
        Ok([pooled, h, e]
            .iter()
            .map(|v| g.value(*v).iter().copied().collect())
            .collect())
    }
}

/// Trains the embedder with a cosine-softmax objective over the dataset's identities.
pub fn train_toy_embedder(
    dataset: &Dataset,
    config: &EmbedderConfig,
    epochs: usize,
    seed: u64,
) -> Result<ToyEmbedder> {
    dataset.ensure_nonempty()?;
    let ids = dataset.identities();
    if ids.len() < 2 {
        return Err(Error::invalid(
            "embedder training needs at least two identities",
        ));
    }
    let shape = dataset.faces[0].image.shape();
    let (h, w, c) = shape;
    if h % config.pool_factor != 0 || w % config.pool_factor != 0 {
        return Err(Error::invalid("pool factor must divide the image size"));
    }
    let pooled_dim = (h / config.pool_factor) * (w / config.pool_factor) * c;
    let mut rng = rng_for(seed, "embedder");
    let x = dataset.image_matrix()?;
    let labels: Vec<usize> = dataset
        .faces
        .iter()
        .map(|f| {
            ids.iter()
                .position(|i| *i == f.identity_id)
                .expect("known id")
        })
        .collect();

    let params = ParamSet::new(vec![
        ("center", Mat::from_elem((1, pooled_dim), -0.5)),
        ("w1", init_weight(&mut rng, pooled_dim, config.hidden)),
        ("b1", Mat::zeros((1, config.hidden))),
        ("w2", init_weight(&mut rng, config.hidden, config.dim)),
        ("b2", Mat::zeros((1, config.dim))),
    ]);
    let mut model = ToyEmbedder::build(shape, config.pool_factor, params);
    let mut classes = init_weight(&mut rng, config.dim, ids.len());
    let mut adam = Adam::new(config.lr, &model.params.shapes());
    let mut cls_adam = Adam::new(config.lr, &[classes.dim()]);

    for _ in 0..epochs {
        for batch in minibatches(&mut rng, x.nrows(), config.batch) {
            let g = Graph::new();
            let xb = g.constant(select_rows(&x, &batch));
            let (_, _, e, bound) = model.forward(&g, xb, true);
            let cv = g.input(classes.clone());
            let logits = g.scale(g.matmul(e, cv), config.logit_scale);
            let onehot = Mat::from_shape_fn((batch.len(), ids.len()), |(r, k)| {
                if labels[batch[r]] == k {
                    1.0
                } else {
                    0.0
                }
            });
            // Softmax cross-entropy; logits are bounded by the scale, so no shift is needed.
            let lse = g.ln(g.row_sum(g.exp(logits)));
            let picked = g.row_dot(logits, g.constant(onehot));
            let loss = g.mean(g.sub(lse, picked));
            let mut grads = g.backward(loss);
            model.params.adam_step(&mut adam, &bound, &grads);
            let gc = grads.take(cv).expect("class gradient");
            cls_adam.step(&mut [&mut classes], &[gc]);
        }
    }
    Ok(model)
}
