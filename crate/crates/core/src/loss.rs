//! Loss assembly over the final map, the stage maps and the boundary heads.

use alloc::vec::Vec;

use crate::config::SCALES;
use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::model::ForwardOutput;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the mean boundary term.
    pub lambda_boundary: f64,
    /// Supervise each stage map in addition to the merged map.
    pub supervise_stages: bool,
    /// Positive-class weight for the boundary cross-entropy.
    pub boundary_pos_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_boundary: 1.0,
            supervise_stages: true,
            boundary_pos_weight: 1.0,
        }
    }
}

/// Supervision for one batch.
#[derive(Debug, Clone)]
pub struct Targets {
    /// Saliency masks, `[N, 1, H, W]` of 0/1.
    pub mask: Tensor,
    /// Boundary masks at scales `1..=5`, `[N, 1, H / 2^t, W / 2^t]`.
    pub boundary: Vec<Tensor>,
}

impl Targets {
    /// Builds per-scale boundary targets by repeated 2x max-pooling of the
    /// full-resolution boundary mask.
    pub fn new(mask: Tensor, boundary_full: &Tensor) -> Result<Self> {
        ensure!(
            mask.shape() == boundary_full.shape() && mask.shape().len() == 4 && mask.shape()[1] == 1,
            "trainer",
            "mask {:?} and boundary {:?} must both be [N, 1, H, W]",
            mask.shape(),
            boundary_full.shape()
        );
        let mut boundary = Vec::with_capacity(SCALES);
        let mut cur = boundary_full.clone();
        for _ in 0..SCALES {
            cur = max_pool2_plain(&cur)?;
            boundary.push(cur.clone());
        }
        Ok(Targets { mask, boundary })
    }
}

fn max_pool2_plain(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    ensure!(h % 2 == 0 && w % 2 == 0, "trainer", "cannot halve {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let d = t.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                let j = plane * h * w + 2 * y * w + 2 * x;
                out.push(d[j].max(d[j + 1]).max(d[j + w]).max(d[j + w + 1]));
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Component values of one loss evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub final_saliency: f64,
    /// `(scale, loss)` per supervised stage map.
    pub stage_saliency: Vec<(usize, f64)>,
    /// Per-scale boundary losses, empty without a boundary branch.
    pub boundary: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn stage_mean(&self) -> f64 {
        mean(self.stage_saliency.iter().map(|s| s.1))
    }

    pub fn boundary_mean(&self) -> f64 {
        mean(self.boundary.iter().copied())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// `total = final + mean(stages) + lambda_b * mean(boundary)`, each term a
/// mean sigmoid cross-entropy. Returns the graph node of `total`.
pub fn compute_loss(
    g: &mut Graph,
    out: &ForwardOutput,
    targets: &Targets,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let preds = &out.predictions;
    let final_loss = g.sigmoid_ce(preds.final_map, &targets.mask, 1.0)?;
    let mut breakdown = LossBreakdown {
        final_saliency: g.value(final_loss).item(),
        ..Default::default()
    };
    let mut total = final_loss;

    if w.supervise_stages && !preds.stages.is_empty() {
        let mut terms = Vec::with_capacity(preds.stages.len());
        for &(t, map) in &preds.stages {
            let l = g.sigmoid_ce(map, &targets.mask, 1.0)?;
            breakdown.stage_saliency.push((t, g.value(l).item()));
            terms.push(l);
        }
        let s = sum_vars(g, &terms)?;
        let s = g.scale(s, 1.0 / terms.len() as f64)?;
        total = g.add(total, s)?;
    }

    if let Some(branch) = &out.boundary {
        ensure!(
            targets.boundary.len() == SCALES,
            "trainer",
            "expected {SCALES} boundary targets, got {}",
            targets.boundary.len()
        );
        let mut terms = Vec::with_capacity(SCALES);
        for (&logits, target) in branch.outputs.predictions.iter().zip(&targets.boundary) {
            let l = g.sigmoid_ce(logits, target, w.boundary_pos_weight)?;
            breakdown.boundary.push(g.value(l).item());
            terms.push(l);
        }
        if w.lambda_boundary != 0.0 {
            let s = sum_vars(g, &terms)?;
            let s = g.scale(s, w.lambda_boundary / terms.len() as f64)?;
            total = g.add(total, s)?;
        }
    }
    breakdown.total = g.value(total).item();
    Ok((total, breakdown))
}

fn sum_vars(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}
