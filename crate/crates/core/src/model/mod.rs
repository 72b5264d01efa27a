//! The full network: saliency encoder and aggregation, boundary branch, and
//! the fusion head.

pub mod affm;
pub mod backbone;
pub mod bpn;
pub mod rfc;

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

pub use affm::{affm_fuse, affm_weights, final_merge, FusionHead, PredictionSet};
pub use backbone::{BoundaryEncoder, FeaturePyramid, SaliencyEncoder};
pub use bpn::{BoundaryOutputs, Bpn, Rcu};
pub use rfc::{reshape_to_scale, Rfc};

#[derive(Debug, Clone)]
pub struct BoundaryStream {
    pub encoder: BoundaryEncoder,
    pub bpn: Bpn,
}

/// Boundary branch outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct BoundaryBranch {
    pub side_outputs: FeaturePyramid,
    pub outputs: BoundaryOutputs,
    /// Boundary features at input resolution.
    pub full_res: Var,
    /// `full_res` averaged down to each scale, fed to the fusion.
    pub per_scale: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub saliency_levels: FeaturePyramid,
    /// Refined aggregated features `F^1..F^5`.
    pub aggregated: Vec<Var>,
    pub boundary: Option<BoundaryBranch>,
    pub predictions: PredictionSet,
}

#[derive(Debug, Clone)]
pub struct Bfanet {
    cfg: ModelConfig,
    params: ParamStore,
    pub saliency: SaliencyEncoder,
    pub rfc: Rfc,
    pub boundary: Option<BoundaryStream>,
    pub head: FusionHead,
}

impl Bfanet {
    /// Builds the network with msra-initialized weights drawn from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let saliency = SaliencyEncoder::new(&mut params, &mut rng, &cfg);
        let rfc = Rfc::new(&mut params, &mut rng, &cfg);
        let boundary = cfg.ablation.has_boundary().then(|| BoundaryStream {
            encoder: BoundaryEncoder::new(&mut params, &mut rng, &cfg),
            bpn: Bpn::new(&mut params, &mut rng, &cfg),
        });
        let head = FusionHead::new(&mut params, &mut rng, &cfg);
        Ok(Bfanet {
            cfg,
            params,
            saliency,
            rfc,
            boundary,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Runs the network on a preprocessed `[N, 3, H, W]` batch.
    pub fn forward(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<ForwardOutput> {
        let saliency_levels = self.saliency.forward(g, p, input, &self.cfg)?;
        let aggregated = self.rfc.forward(g, p, &saliency_levels)?;
        let boundary = match &self.boundary {
            Some(stream) => {
                let side_outputs = stream.encoder.forward(g, p, input, &self.cfg)?;
                let outputs = stream.bpn.forward(g, p, &side_outputs)?;
                let full_res = stream.bpn.boundary_full_res(g, p, outputs.features[0])?;
                let per_scale = affm::boundary_pyramid(g, full_res)?;
                Some(BoundaryBranch {
                    side_outputs,
                    outputs,
                    full_res,
                    per_scale,
                })
            }
            None => None,
        };
        let predictions = self
            .head
            .forward(g, p, &aggregated, boundary.as_ref().map(|b| b.per_scale.as_slice()))?;
        Ok(ForwardOutput {
            saliency_levels,
            aggregated,
            boundary,
            predictions,
        })
    }

    /// Saliency probabilities `sigmoid(final logits)` as `[N, 1, H, W]`.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g)?;
        let x = g.input(images.clone())?;
        let out = self.forward(&mut g, &p, x)?;
        let s = g.sigmoid(out.predictions.final_map)?;
        Ok(g.value(s).clone())
    }
}
