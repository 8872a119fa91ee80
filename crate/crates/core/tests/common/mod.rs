#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use faceshield::image::ImageTensor;
use faceshield::metrics::DiffusionSwap;
use faceshield::models::dataset::{heldout_identities, training_identities, Dataset};
use faceshield::models::stack::{ModelStack, ToyStack, ToyTrainConfig};
use faceshield::models::synth::SyntheticFace;
use faceshield::optimize::RunConfig;
use faceshield::swap::SwapConfig;

/// Cache shared by every test binary of the workspace.
pub fn stack_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("toy-stack-default")
}

/// The default toy stack, trained once and cached on disk.
pub fn stack() -> &'static ToyStack {
    static STACK: OnceLock<ToyStack> = OnceLock::new();
    STACK.get_or_init(|| {
        ToyStack::load_or_train(stack_dir(), &ToyTrainConfig::default()).expect("toy stack")
    })
}

/// Held-out samples (index 16) of training identities `0..n`.
pub fn sources(n: u32) -> Vec<SyntheticFace> {
    Dataset::generate(&training_identities(n), 16..17, 0)
        .expect("sources")
        .faces
}

/// One image each of the 7 unseen target identities.
pub fn targets() -> Vec<ImageTensor> {
    Dataset::generate(&heldout_identities(7), 0..1, 0)
        .expect("targets")
        .faces
        .into_iter()
        .map(|f| f.image)
        .collect()
}

/// Reference settings scaled down for CI: Q = 50, P = 20, N = 2, M = 5.
pub fn ci_config() -> RunConfig {
    RunConfig {
        edit_steps: 50,
        pgd_steps: 20,
        outer_iterations: 2,
        timestep_samples: 5,
        ..RunConfig::default()
    }
}

/// A much smaller run for tests that only need the plumbing.
pub fn tiny_config() -> RunConfig {
    RunConfig {
        edit_steps: 3,
        pgd_steps: 4,
        outer_iterations: 2,
        timestep_samples: 2,
        ..RunConfig::default()
    }
}

pub fn pipeline(models: &ModelStack) -> DiffusionSwap {
    DiffusionSwap {
        name: "primary".into(),
        models: models.clone(),
        config: SwapConfig::default(),
    }
}
