pub mod checkpoint;
pub mod classifier;
pub mod codec;
pub mod dataset;
pub mod denoiser;
pub mod embedder;
pub mod params;
pub mod parser;
pub mod stack;
pub mod stylegen;
pub mod synth;
pub mod traits;
