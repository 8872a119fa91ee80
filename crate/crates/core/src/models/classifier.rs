//! Multi-attribute classifier with probabilities held inside `[1e-4, 1 - 1e-4]`.

use std::sync::Arc;

use crate::error::Result;
use crate::graph::{Graph, Mat, SparseMap, Var};
use crate::models::checkpoint::Checkpoint;
use crate::models::codec::{merge, triple};
use crate::models::dataset::Dataset;
use crate::models::params::{minibatches, select_rows, BoundParams, ParamSet};
use crate::models::synth::Attribute;
use crate::models::traits::AttributeClassifier;
use crate::resample::adaptive_avg_pool;
use crate::util::{init_weight, rng_for, Adam};

/// Lower probability bound; the upper bound is `1 - PROB_FLOOR`.
pub const PROB_FLOOR: f64 = 1e-4;

const NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

#[derive(Debug, Clone)]
pub struct ToyClassifier {
    image_shape: (usize, usize, usize),
    pool: Arc<SparseMap>,
    attributes: Vec<Attribute>,
    params: ParamSet,
}

impl ToyClassifier {
    fn build(image_shape: (usize, usize, usize), params: ParamSet) -> Self {
        let (h, w, c) = image_shape;
        Self {
            image_shape,
            pool: Arc::new(adaptive_avg_pool((h, w), (h / 2, w / 2), c)),
            attributes: Attribute::ALL.to_vec(),
            params,
        }
    }

    fn logits(&self, g: &Graph, p: &BoundParams, images: Var) -> Var {
        let pooled = g.affine(g.sparse(images, &self.pool), 1.0, -0.5);
        let h = g.tanh(g.linear(pooled, p.var("w1"), p.var("b1")));
        g.linear(h, p.var("w2"), p.var("b2"))
    }

    fn squash(g: &Graph, logits: Var) -> Var {
        g.affine(g.sigmoid(logits), 1.0 - 2.0 * PROB_FLOOR, PROB_FLOOR)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let (h, w, c) = self.image_shape;
        let mut metadata = serde_json::json!({ "image_shape": [h, w, c] });
        merge(&mut metadata, meta);
        self.params.add_to(Checkpoint::new("classifier", metadata))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("classifier")?;
        Ok(Self::build(
            triple(&ck.meta_usizes("image_shape")?)?,
            ParamSet::from_checkpoint(ck, &NAMES)?,
        ))
    }
}

impl AttributeClassifier for ToyClassifier {
    fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    fn classify_var(&self, g: &Graph, images: Var) -> Var {
        let p = self.params.bind(g, false);
        Self::squash(g, self.logits(g, &p, images))
    }
}

/// Trains on rendered faces with their continuous attribute parameters as soft labels.
pub fn train_toy_classifier(dataset: &Dataset, epochs: usize, seed: u64) -> Result<ToyClassifier> {
    dataset.ensure_nonempty()?;
    let shape = dataset.faces[0].image.shape();
    let (h, w, c) = shape;
    let x = dataset.image_matrix()?;
    let labels = Mat::from_shape_fn((dataset.len(), Attribute::ALL.len()), |(i, a)| {
        dataset.faces[i].params.get(Attribute::ALL[a])
    });
    let pooled = (h / 2) * (w / 2) * c;
    let hidden = 64;
    let mut rng = rng_for(seed, "classifier");
    let params = ParamSet::new(vec![
        ("w1", init_weight(&mut rng, pooled, hidden)),
        ("b1", Mat::zeros((1, hidden))),
        ("w2", init_weight(&mut rng, hidden, Attribute::ALL.len())),
        ("b2", Mat::zeros((1, Attribute::ALL.len()))),
    ]);
    let mut model = ToyClassifier::build(shape, params);
    let mut adam = Adam::new(2e-3, &model.params.shapes());
    for _ in 0..epochs {
        for batch in minibatches(&mut rng, x.nrows(), 64) {
            let g = Graph::new();
            let p = model.params.bind(&g, true);
            let probs = ToyClassifier::squash(
                &g,
                model.logits(&g, &p, g.constant(select_rows(&x, &batch))),
            );
            let y = select_rows(&labels, &batch);
            let pos = g.mul(g.ln(probs), g.constant(y.clone()));
            let neg = g.mul(
                g.ln(g.affine(probs, -1.0, 1.0)),
                g.constant(y.mapv(|v| 1.0 - v)),
            );
            let loss = g.scale(g.mean(g.add(pos, neg)), -1.0);
            let grads = g.backward(loss);
            model.params.adam_step(&mut adam, &p, &grads);
        }
    }
    Ok(model)
}
