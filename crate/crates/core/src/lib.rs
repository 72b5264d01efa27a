//! Core of the boundary-guided feature aggregation network for salient
//! object detection.
//!
//! The crate is `no_std` and only needs `alloc`. It holds the tensor type and
//! its reverse-mode autodiff graph, the network itself, Canny edge labels,
//! synthetic data, and the evaluation metrics. File formats, training loops
//! and the command line live in the `bfanet` crate.
#![no_std]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_at, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::{lr_schedule, sgd_step, OptimState};
pub use tensor::Tensor;

pub mod config;
pub mod model;
pub mod params;

pub use config::{Ablation, FpmSubset, ModelConfig};
pub use model::Bfanet;
pub use params::{Bound, ParamId, ParamStore};

pub mod boundary;
pub mod data;
pub mod loss;
pub mod mask;
pub mod metrics;

pub use boundary::{canny_boundary, morph_boundary_oracle, CannyParams};
pub use data::{gen_synthetic, Preprocess, SaliencySample};
pub use loss::{compute_loss, LossBreakdown, LossWeights, Targets};
pub use mask::{BinaryMask, BoundaryMask};
pub use metrics::{adaptive_f, f_measure, mae, pr_curve, EvalReport, Evaluator, PrCurve, SaliencyMap};
pub mod training;

pub use training::{EpochLog, Example, TrainConfig, Trainer};
pub mod gradsuite;
pub mod merge_fit;
