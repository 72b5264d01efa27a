//! Attention-based feature fusion and the fused prediction modules.
//!
//! Pooled saliency and boundary activations are concatenated into one
//! `2n`-vector and passed through a single softmax; the first `n` weights
//! scale the saliency channels and the last `n` the boundary channels.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::{Ablation, FpmSubset, ModelConfig, SCALES};
use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Conv, ParamStore};

/// Fusion weights `(w_F, w_B)`, each `[N, n]`, summing jointly to one per sample.
pub fn affm_weights(g: &mut Graph, saliency: Var, boundary: Var) -> Result<(Var, Var)> {
    check_pair(g, saliency, boundary)?;
    let n = g.shape(saliency)[1];
    let vs = g.global_avg_pool(saliency)?;
    let vb = g.global_avg_pool(boundary)?;
    let v = g.concat(&[vs, vb])?;
    let w = g.softmax(v)?;
    Ok((g.slice(w, 0, n)?, g.slice(w, n, n)?))
}

/// `(w_F * F) + (w_B * B)` with channel-wise products.
pub fn affm_fuse(g: &mut Graph, saliency: Var, boundary: Var) -> Result<Var> {
    let (wf, wb) = affm_weights(g, saliency, boundary)?;
    let a = g.channel_mul(saliency, wf)?;
    let b = g.channel_mul(boundary, wb)?;
    g.add(a, b)
}

fn check_pair(g: &Graph, a: Var, b: Var) -> Result<()> {
    ensure!(
        g.shape(a) == g.shape(b) && g.shape(a).len() == 4,
        "affm",
        "fusion inputs must share an NCHW shape, got {:?} and {:?}",
        g.shape(a),
        g.shape(b)
    );
    Ok(())
}

/// Full-resolution boundary features averaged down to every scale `1..=5`.
pub fn boundary_pyramid(g: &mut Graph, full: Var) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(SCALES);
    let mut x = full;
    for _ in 0..SCALES {
        x = g.avg_pool2(x)?;
        out.push(x);
    }
    Ok(out)
}

/// 3x3 conv to one channel, then nearest upsampling back to input size.
#[derive(Debug, Clone)]
pub struct Fpm {
    pub scale: usize,
    conv: Conv,
}

impl Fpm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, scale: usize, in_c: usize) -> Self {
        Fpm {
            scale,
            conv: Conv::same3(store, rng, &alloc::format!("fpm{scale}"), in_c, 1),
        }
    }

    pub fn predict(&self, g: &mut Graph, p: &Bound, fused: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, fused)?;
        g.upsample_nearest(y, 1 << self.scale)
    }
}

/// Channel-concatenates the stage maps and merges them with a 1x1 conv.
pub fn final_merge(g: &mut Graph, p: &Bound, merge: &Conv, stages: &[Var]) -> Result<Var> {
    ensure!(!stages.is_empty(), "affm", "final_merge needs at least one stage map");
    let first = g.shape(stages[0]).to_vec();
    ensure!(
        stages.iter().all(|&s| g.shape(s) == first.as_slice()),
        "affm",
        "stage maps must share one shape"
    );
    let cat = g.concat(stages)?;
    merge.forward(g, p, cat)
}

#[derive(Debug, Clone)]
enum Fusion {
    /// Baseline: saliency features only.
    None,
    /// Concatenate with boundary features and project back to `n` channels.
    Concat(Vec<Conv>),
    Attention,
}

/// Stage-wise logit maps and the merged final logit map, all at input size.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub stages: Vec<(usize, Var)>,
    pub final_map: Var,
}

/// Everything after the aggregated features: channel reduction, fusion,
/// FPMs and the final merge, instantiated for the scales of `fpm_subset`.
/// The baseline feeds `F^tau` straight into its FPMs.
#[derive(Debug, Clone)]
pub struct FusionHead {
    subset: FpmSubset,
    reduce: Vec<Conv>,
    fusion: Fusion,
    fpms: Vec<Fpm>,
    pub merge: Conv,
}

impl FusionHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let n = cfg.boundary_channels;
        let subset = cfg.fpm_subset;
        let baseline = cfg.ablation == Ablation::Baseline;
        let reduce = if baseline {
            Vec::new()
        } else {
            subset
                .scales()
                .map(|t| Conv::pointwise(store, rng, &alloc::format!("affm.reduce{t}"), cfg.agg_channels, n))
                .collect()
        };
        let fusion = match cfg.ablation {
            Ablation::Baseline => Fusion::None,
            Ablation::BoundaryMinus | Ablation::BoundaryPlus => Fusion::Concat(
                subset
                    .scales()
                    .map(|t| Conv::pointwise(store, rng, &alloc::format!("affm.concat{t}"), 2 * n, n))
                    .collect(),
            ),
            Ablation::AffmPlus => Fusion::Attention,
        };
        let fpm_in = if baseline { cfg.agg_channels } else { n };
        let fpms = subset.scales().map(|t| Fpm::new(store, rng, t, fpm_in)).collect();
        let merge = Conv::pointwise(store, rng, "merge", subset.len(), 1);
        FusionHead {
            subset,
            reduce,
            fusion,
            fpms,
            merge,
        }
    }

    /// `features` are `F^1..F^5`; `boundary` the per-scale boundary features
    /// (absent for the baseline).
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        features: &[Var],
        boundary: Option<&[Var]>,
    ) -> Result<PredictionSet> {
        let mut stages = Vec::with_capacity(self.subset.len());
        for (k, t) in self.subset.scales().enumerate() {
            let fused = match (&self.fusion, boundary) {
                (Fusion::None, _) => features[t - 1],
                (Fusion::Concat(convs), Some(b)) => {
                    let reduced = self.reduce[k].forward(g, p, features[t - 1])?;
                    check_pair(g, reduced, b[t - 1])?;
                    let cat = g.concat(&[reduced, b[t - 1]])?;
                    convs[k].forward(g, p, cat)?
                }
                (Fusion::Attention, Some(b)) => {
                    let reduced = self.reduce[k].forward(g, p, features[t - 1])?;
                    affm_fuse(g, reduced, b[t - 1])?
                }
                (_, None) => {
                    return Err(crate::Error::contract(
                        "affm",
                        "boundary features required for this variant",
                    ))
                }
            };
            stages.push((t, self.fpms[k].predict(g, p, fused)?));
        }
        let maps: Vec<Var> = stages.iter().map(|s| s.1).collect();
        let final_map = final_merge(g, p, &self.merge, &maps)?;
        Ok(PredictionSet { stages, final_map })
    }

    /// Channel reduction of `F^tau` to the boundary channel count.
    pub fn reduce_channels(&self, g: &mut Graph, p: &Bound, f: Var, tau: usize) -> Result<Var> {
        ensure!(
            !self.reduce.is_empty(),
            "affm",
            "the baseline head has no channel reduction"
        );
        let k = self
            .subset
            .scales()
            .position(|t| t == tau)
            .ok_or_else(|| crate::Error::contract("affm", alloc::format!("scale {tau} not in fpm subset")))?;
        self.reduce[k].forward(g, p, f)
    }

    pub fn fpm(&self, tau: usize) -> Option<&Fpm> {
        self.fpms.iter().find(|f| f.scale == tau)
    }

    pub fn subset(&self) -> FpmSubset {
        self.subset
    }
}
