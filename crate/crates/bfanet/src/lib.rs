//! File formats, the training and evaluation pipeline, and the command line
//! around `bfanet-core`.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod pnm;
pub mod runconfig;

pub use bfanet_core as core;
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use manifest::{Manifest, Split};
pub use runconfig::RunConfig;
