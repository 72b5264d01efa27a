//! Resolution-based feature combination: every saliency level is brought to
//! each scale, concatenated and projected, then refined by top-down and
//! bottom-up passes between neighbouring scales.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::{ModelConfig, SALIENCY_LEVELS, SCALES};
use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::model::backbone::FeaturePyramid;
use crate::params::{Bound, Conv, ParamStore};

/// Moves a level-`m` map (stride `2^m`) to scale `tau` (stride `2^tau`):
/// repeated 2x average-pooling to shrink, nearest upsampling to expand.
pub fn reshape_to_scale(g: &mut Graph, x: Var, m: usize, tau: usize) -> Result<Var> {
    ensure!(
        (1..=SALIENCY_LEVELS).contains(&m) && (1..=SCALES).contains(&tau),
        "rfc",
        "reshape_to_scale: level {m} / scale {tau} out of range"
    );
    if m < tau {
        let mut y = x;
        for _ in m..tau {
            y = g.avg_pool2(y)?;
        }
        Ok(y)
    } else if m > tau {
        g.upsample_nearest(x, 1 << (m - tau))
    } else {
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct Rfc {
    projections: Vec<Conv>,
    /// `top_down[t - 1]` carries scale `t + 1` into scale `t`.
    top_down: Vec<Conv>,
    /// `bottom_up[t - 2]` carries scale `t - 1` into scale `t`.
    bottom_up: Vec<Conv>,
}

impl Rfc {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let concat_c: usize = (1..=SALIENCY_LEVELS).map(|m| cfg.base_channels * m).sum();
        let a = cfg.agg_channels;
        let projections = (1..=SCALES)
            .map(|t| Conv::pointwise(store, rng, &alloc::format!("rfc.project{t}"), concat_c, a))
            .collect();
        let top_down = (1..SCALES)
            .map(|t| Conv::pointwise(store, rng, &alloc::format!("rfc.top_down{t}"), a, a))
            .collect();
        let bottom_up = (2..=SCALES)
            .map(|t| Conv::pointwise(store, rng, &alloc::format!("rfc.bottom_up{t}"), a, a))
            .collect();
        Rfc {
            projections,
            top_down,
            bottom_up,
        }
    }

    /// Feature map `F^tau` before refinement.
    pub fn aggregate(&self, g: &mut Graph, p: &Bound, pyramid: &FeaturePyramid, tau: usize) -> Result<Var> {
        ensure!(
            pyramid.len() == SALIENCY_LEVELS,
            "rfc",
            "expected {SALIENCY_LEVELS} saliency levels, got {}",
            pyramid.len()
        );
        ensure!((1..=SCALES).contains(&tau), "rfc", "scale {tau} out of range");
        let reshaped = (1..=SALIENCY_LEVELS)
            .map(|m| reshape_to_scale(g, pyramid.level(m), m, tau))
            .collect::<Result<Vec<_>>>()?;
        let cat = g.concat(&reshaped)?;
        let y = self.projections[tau - 1].forward(g, p, cat)?;
        g.relu(y)
    }

    /// Top-down then bottom-up additive fusion between neighbouring scales.
    pub fn refine(&self, g: &mut Graph, p: &Bound, mut f: Vec<Var>) -> Result<Vec<Var>> {
        ensure!(
            f.len() == SCALES,
            "rfc",
            "refine needs {SCALES} scales, got {}",
            f.len()
        );
        for t in (1..SCALES).rev() {
            let up = g.upsample_nearest(f[t], 2)?;
            let msg = self.top_down[t - 1].forward(g, p, up)?;
            let sum = g.add(f[t - 1], msg)?;
            f[t - 1] = g.relu(sum)?;
        }
        for t in 2..=SCALES {
            let down = g.avg_pool2(f[t - 2])?;
            let msg = self.bottom_up[t - 2].forward(g, p, down)?;
            let sum = g.add(f[t - 1], msg)?;
            f[t - 1] = g.relu(sum)?;
        }
        Ok(f)
    }

    /// Aggregated and refined features `F^1..F^5`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, pyramid: &FeaturePyramid) -> Result<Vec<Var>> {
        let f = (1..=SCALES)
            .map(|t| self.aggregate(g, p, pyramid, t))
            .collect::<Result<Vec<_>>>()?;
        self.refine(g, p, f)
    }

    /// Parameters of the neighbour-fusion convolutions.
    pub fn fusion_convs(&self) -> impl Iterator<Item = &Conv> {
        self.top_down.iter().chain(&self.bottom_up)
    }
}
