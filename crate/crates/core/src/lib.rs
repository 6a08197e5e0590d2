//! Shared-parameter dual-stream diffusion for reference-guided image composition.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod conlab;
pub mod curation;
pub mod diffusion;
pub mod dit;
pub mod error;
pub mod imageio;
pub mod numerics;
pub mod synthbench;
pub mod unet;

pub use error::{Error, Result};
