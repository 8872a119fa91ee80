mod common;

use faceshield::metrics::SwapPipeline;
use faceshield::optimize::{run_defense, RunConfig};
use faceshield::util::linf;

#[test]
fn defense_is_deterministic_per_seed() {
    let stack = common::stack();
    let face = &common::sources(1)[0];
    let models = stack.models_for(face).unwrap();
    let cfg = common::tiny_config();
    let a = run_defense(&face.image, &models, &cfg).unwrap();
    let b = run_defense(&face.image, &models, &cfg).unwrap();
    assert_eq!(a.protected_image, b.protected_image);
    assert_eq!(a.trace.attack_series(), b.trace.attack_series());

    let c = run_defense(&face.image, &models, &RunConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.trace.attack_series(), c.trace.attack_series());
}

#[test]
fn zero_budget_keeps_the_source_latent() {
    let stack = common::stack();
    let face = &common::sources(1)[0];
    let models = stack.models_for(face).unwrap();
    let cfg = RunConfig {
        epsilon: 0.0,
        ..common::tiny_config()
    };
    let r = run_defense(&face.image, &models, &cfg).unwrap();
    let z_src = models.codec.encode(&face.image).unwrap();
    let z = models.codec.encode(&r.protected_image).unwrap();
    assert!(r.budget_linf() <= 1e-6);
    // Only the clamp in decoding moves the latent.
    assert!(linf(&z, &z_src) < 0.05);
}

#[test]
fn swaps_are_seed_paired() {
    let stack = common::stack();
    let models = stack.models().unwrap();
    let pipeline = common::pipeline(&models);
    let src = &common::sources(1)[0].image;
    let tar = &common::targets()[0];
    let a = pipeline.swap(src, tar, 2).unwrap();
    assert_eq!(a, pipeline.swap(src, tar, 2).unwrap());
    assert_ne!(a, pipeline.swap(src, tar, 3).unwrap());
}
