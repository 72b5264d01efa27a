//! Refitting the final 1x1 merge on a subset of cached stage maps.
//!
//! With the stage maps fixed, the merge is a logistic regression from the
//! selected stage logits to the mask, solved here by damped Newton steps.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::FpmSubset;
use crate::error::{ensure, Result};
use crate::graph::Graph;
use crate::model::Bfanet;
use crate::tensor::Tensor;

/// Stage logit maps of one image, `(scale, [H * W] values)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMaps {
    pub stages: Vec<(usize, Vec<f64>)>,
}

impl StageMaps {
    fn get(&self, scale: usize) -> Result<&[f64]> {
        self.stages
            .iter()
            .find(|s| s.0 == scale)
            .map(|s| s.1.as_slice())
            .ok_or_else(|| crate::Error::contract("affm", alloc::format!("no stage map for scale {scale}")))
    }
}

/// Runs the network and keeps each image's stage logits.
pub fn stage_maps(model: &Bfanet, images: &Tensor) -> Result<Vec<StageMaps>> {
    let mut g = Graph::new();
    let p = model.params().bind_frozen(&mut g)?;
    let x = g.input(images.clone())?;
    let out = model.forward(&mut g, &p, x)?;
    let n = images.shape()[0];
    let mut result = vec![StageMaps { stages: Vec::new() }; n];
    for &(t, v) in &out.predictions.stages {
        let maps = g.value(v);
        let plane = maps.len() / n;
        for (i, r) in result.iter_mut().enumerate() {
            r.stages.push((t, maps.data()[i * plane..(i + 1) * plane].to_vec()));
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeFit {
    pub subset: FpmSubset,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl MergeFit {
    /// Final logits `sum_k w_k s_k + b` for one image.
    pub fn apply(&self, maps: &StageMaps) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = Vec::new();
        for (k, t) in self.subset.scales().enumerate() {
            let s = maps.get(t)?;
            if out.is_empty() {
                out = vec![self.bias; s.len()];
            }
            for (o, v) in out.iter_mut().zip(s) {
                *o += self.weights[k] * v;
            }
        }
        Ok(out)
    }
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| libm::fabs(a[i][col]).total_cmp(&libm::fabs(a[j][col])))
            .expect("non-empty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Fits merge weights for `subset` by minimizing the mean sigmoid
/// cross-entropy against `masks` (one 0/1 vector per image).
pub fn fit_merge(subset: FpmSubset, maps: &[StageMaps], masks: &[Vec<f64>]) -> Result<MergeFit> {
    ensure!(!subset.is_empty(), "affm", "empty fpm subset");
    ensure!(
        !maps.is_empty() && maps.len() == masks.len(),
        "affm",
        "need one mask per image, got {} maps and {} masks",
        maps.len(),
        masks.len()
    );
    let k = subset.len();
    let dim = k + 1;
    let mut theta = vec![0.0; dim];
    theta[..k].fill(1.0 / k as f64);
    let total: usize = masks.iter().map(|m| m.len()).sum();
    let ridge = 1e-6;
    for _ in 0..50 {
        let mut grad = vec![0.0; dim];
        let mut hess = vec![vec![0.0; dim]; dim];
        let mut feat = vec![0.0; dim];
        for (m, y) in maps.iter().zip(masks) {
            let cols: Vec<&[f64]> = subset.scales().map(|t| m.get(t)).collect::<Result<_>>()?;
            ensure!(
                cols.iter().all(|c| c.len() == y.len()),
                "affm",
                "stage map and mask sizes differ"
            );
            for (i, &yi) in y.iter().enumerate() {
                for (j, c) in cols.iter().enumerate() {
                    feat[j] = c[i];
                }
                feat[k] = 1.0;
                let z: f64 = feat.iter().zip(&theta).map(|(a, b)| a * b).sum();
                let p = crate::kernels::sigmoid(z);
                let w = p * (1.0 - p);
                for a in 0..dim {
                    grad[a] += (p - yi) * feat[a];
                    for b in a..dim {
                        hess[a][b] += w * feat[a] * feat[b];
                    }
                }
            }
        }
        for a in 0..dim {
            grad[a] = grad[a] / total as f64 + ridge * theta[a];
            for b in a..dim {
                hess[a][b] = hess[a][b] / total as f64 + if a == b { ridge } else { 0.0 };
                hess[b][a] = hess[a][b];
            }
        }
        let step = solve(hess, grad);
        let norm = libm::sqrt(step.iter().map(|v| v * v).sum::<f64>());
        let damp = if norm > 10.0 { 10.0 / norm } else { 1.0 };
        for (t, s) in theta.iter_mut().zip(&step) {
            *t -= damp * s;
        }
        if norm < 1e-10 {
            break;
        }
    }
    ensure!(theta.iter().all(|v| v.is_finite()), "affm", "merge refit diverged");
    Ok(MergeFit {
        subset,
        bias: theta[k],
        weights: theta[..k].to_vec(),
    })
}
