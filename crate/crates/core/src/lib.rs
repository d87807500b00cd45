//! Saab (subspace approximation with adjusted bias) and DCT block transforms
//! for intra-prediction residuals, with energy-compaction analysis.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod residuals;
pub mod training;
pub mod transforms;
pub mod viz;

pub use error::{Error, Result};
