//! Named parameter sets shared by the trainable toy models.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::graph::{Grads, Graph, Mat, Var};
use crate::models::checkpoint::Checkpoint;
use crate::util::Adam;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    mats: Vec<Arc<Mat>>,
}

impl ParamSet {
    pub fn new(entries: Vec<(&str, Mat)>) -> Self {
        let (names, mats) = entries
            .into_iter()
            .map(|(n, m)| (n.to_string(), Arc::new(m)))
            .unzip();
        Self { names, mats }
    }

    pub fn get(&self, name: &str) -> &Arc<Mat> {
        let i = self.position(name);
        &self.mats[i]
    }

    fn position(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.mats.iter().map(|m| m.dim()).collect()
    }

    /// Adds every parameter to `g` as a constant (inference) or input (training).
    pub fn bind(&self, g: &Graph, trainable: bool) -> BoundParams {
        let vars = self
            .mats
            .iter()
            .map(|m| {
                if trainable {
                    g.input_arc(m.clone())
                } else {
                    g.constant_arc(m.clone())
                }
            })
            .collect();
        BoundParams {
            names: self.names.clone(),
            vars,
        }
    }

    /// Applies one Adam step using the gradients collected for `bound`.
    pub fn adam_step(&mut self, adam: &mut Adam, bound: &BoundParams, grads: &Grads) {
        let g: Vec<Mat> = bound
            .vars
            .iter()
            .zip(&self.mats)
            .map(|(v, m)| grads.get_or_zeros(*v, m.dim()))
            .collect();
        let mut owned: Vec<Mat> = self.mats.iter().map(|m| (**m).clone()).collect();
        {
            let mut refs: Vec<&mut Mat> = owned.iter_mut().collect();
            adam.step(&mut refs, &g);
        }
        self.mats = owned.into_iter().map(Arc::new).collect();
    }

    pub fn add_to(&self, mut ck: Checkpoint) -> Checkpoint {
        for (n, m) in self.names.iter().zip(&self.mats) {
            ck = ck.with(n, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, names: &[&str]) -> Result<Self> {
        let entries = names
            .iter()
            .map(|n| Ok((*n, ck.tensor(n)?.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(entries))
    }
}

pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        self.try_var(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
    }
}

/// Shuffled minibatch index lists covering `0..n` once.
pub fn minibatches<R: Rng + ?Sized>(rng: &mut R, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

pub fn select_rows(m: &Mat, rows: &[usize]) -> Mat {
    m.select(ndarray::Axis(0), rows)
}
