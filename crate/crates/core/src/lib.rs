pub mod cli;
pub mod diffusion;
pub mod editor;
pub mod error;
pub mod graph;
pub mod harness;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optimize;
pub mod resample;
pub mod swap;
pub mod util;

pub use error::{Error, Result};
