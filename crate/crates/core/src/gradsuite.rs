//! Named finite-difference checks covering every differentiable op and the
//! full attention-fusion network.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, grad_check_at, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::loss::{compute_loss, LossWeights, Targets};
use crate::model::affm_fuse;
use crate::model::Bfanet;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

pub const CASES: &[&str] = &[
    "add",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "conv2d",
    "conv2d_weight",
    "conv2d_bias",
    "deconv2d",
    "deconv2d_weight",
    "max_pool2",
    "avg_pool2",
    "upsample_nearest",
    "global_avg_pool",
    "softmax",
    "channel_mul",
    "concat_slice",
    "sum",
    "sigmoid_ce",
    "affm_fuse",
    "model_input",
    "model_params",
];

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let r = g.input(random(g.shape(y), seed ^ 0x9e37))?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn check(x: Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var>) -> Result<GradCheckReport> {
    grad_check(f, &x, STEP, TOLERANCE)
}

/// Tiny attention-fusion network used by the model cases.
pub fn tiny_model() -> Result<Bfanet> {
    Bfanet::new(ModelConfig {
        input_h: 32,
        input_w: 32,
        base_channels: 4,
        boundary_channels: 4,
        agg_channels: 8,
        ablation: Ablation::AffmPlus,
        seed: 7,
        ..ModelConfig::default()
    })
}

fn tiny_targets() -> Result<Targets> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mask = Tensor::from_fn([1, 1, 32, 32], |_| rng.random_bool(0.4) as u8 as f64);
    let edge = Tensor::from_fn([1, 1, 32, 32], |_| rng.random_bool(0.1) as u8 as f64);
    Targets::new(mask, &edge)
}

fn model_loss(g: &mut Graph, model: &Bfanet, bound: &crate::params::Bound, x: Var, t: &Targets) -> Result<Var> {
    let out = model.forward(g, bound, x)?;
    Ok(compute_loss(g, &out, t, &LossWeights::default())?.0)
}

/// Evenly spaced coordinates, at most `k` of `n`.
fn spread(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

/// Merges per-tensor reports into one.
fn merge(reports: &[GradCheckReport]) -> GradCheckReport {
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one report");
    GradCheckReport {
        max_rel_error: worst.max_rel_error,
        worst_index: worst.worst_index,
        checked: reports.iter().map(|r| r.checked).sum(),
        excluded: reports.iter().map(|r| r.excluded).sum(),
        passed: reports.iter().all(|r| r.passed),
    }
}

pub fn run_case(name: &str) -> Result<GradCheckReport> {
    match name {
        "add" => {
            let other = random(&[2, 3, 4, 4], 2);
            check(random(&[2, 3, 4, 4], 1), |g, x| {
                let o = g.input(other.clone())?;
                let y = g.add(x, o)?;
                let y = g.add(y, x)?;
                project(g, y, 1)
            })
        }
        "mul" => {
            let other = random(&[2, 3, 4, 4], 4);
            check(random(&[2, 3, 4, 4], 3), |g, x| {
                let o = g.input(other.clone())?;
                let y = g.mul(x, o)?;
                let y = g.mul(y, x)?;
                project(g, y, 3)
            })
        }
        "scale" => check(random(&[1, 2, 3, 3], 5), |g, x| {
            let y = g.scale(x, -2.5)?;
            project(g, y, 5)
        }),
        "relu" => check(random(&[2, 3, 5, 5], 6), |g, x| {
            let y = g.relu(x)?;
            project(g, y, 6)
        }),
        "sigmoid" => check(random(&[2, 3, 5, 5], 7).map(|v| 4.0 * v), |g, x| {
            let y = g.sigmoid(x)?;
            project(g, y, 7)
        }),
        "conv2d" => {
            let w = random(&[4, 3, 3, 3], 9);
            let b = random(&[4], 10);
            check(random(&[2, 3, 6, 6], 8), |g, x| {
                let (w, b) = (g.input(w.clone())?, g.input(b.clone())?);
                let y = g.conv2d(x, w, Some(b), 2, 1)?;
                project(g, y, 8)
            })
        }
        "conv2d_weight" => {
            let xin = random(&[2, 3, 6, 6], 11);
            check(random(&[4, 3, 3, 3], 12), |g, w| {
                let x = g.input(xin.clone())?;
                let y = g.conv2d(x, w, None, 1, 1)?;
                project(g, y, 11)
            })
        }
        "conv2d_bias" => {
            let xin = random(&[2, 3, 5, 5], 13);
            let w = random(&[2, 3, 1, 1], 14);
            check(random(&[2], 15), |g, b| {
                let (x, w) = (g.input(xin.clone())?, g.input(w.clone())?);
                let y = g.conv2d(x, w, Some(b), 1, 0)?;
                project(g, y, 13)
            })
        }
        "deconv2d" => {
            let w = random(&[3, 2, 4, 4], 17);
            let b = random(&[2], 18);
            check(random(&[2, 3, 4, 4], 16), |g, x| {
                let (w, b) = (g.input(w.clone())?, g.input(b.clone())?);
                let y = g.deconv2d(x, w, Some(b), 2, 1)?;
                project(g, y, 16)
            })
        }
        "deconv2d_weight" => {
            let xin = random(&[2, 3, 4, 4], 19);
            check(random(&[3, 2, 4, 4], 20), |g, w| {
                let x = g.input(xin.clone())?;
                let y = g.deconv2d(x, w, None, 2, 1)?;
                project(g, y, 19)
            })
        }
        "max_pool2" => check(random(&[2, 3, 6, 6], 21), |g, x| {
            let y = g.max_pool2(x)?;
            project(g, y, 21)
        }),
        "avg_pool2" => check(random(&[2, 3, 6, 6], 22), |g, x| {
            let y = g.avg_pool2(x)?;
            project(g, y, 22)
        }),
        "upsample_nearest" => check(random(&[2, 3, 3, 3], 23), |g, x| {
            let y = g.upsample_nearest(x, 4)?;
            project(g, y, 23)
        }),
        "global_avg_pool" => check(random(&[2, 3, 4, 5], 24), |g, x| {
            let y = g.global_avg_pool(x)?;
            project(g, y, 24)
        }),
        "softmax" => check(random(&[3, 6], 25).map(|v| 3.0 * v), |g, x| {
            let y = g.softmax(x)?;
            project(g, y, 25)
        }),
        "channel_mul" => {
            let w = random(&[2, 3], 27);
            check(random(&[2, 3, 4, 4], 26), |g, x| {
                let w = g.input(w.clone())?;
                let y = g.channel_mul(x, w)?;
                let pooled = g.global_avg_pool(x)?;
                let z = g.channel_mul(y, pooled)?;
                project(g, z, 26)
            })
        }
        "concat_slice" => {
            let other = random(&[2, 2, 3, 3], 29);
            check(random(&[2, 3, 3, 3], 28), |g, x| {
                let o = g.input(other.clone())?;
                let c = g.concat(&[o, x, o])?;
                let y = g.slice(c, 1, 4)?;
                project(g, y, 28)
            })
        }
        "sum" => check(random(&[2, 3, 4, 4], 30), |g, x| {
            let y = g.mul(x, x)?;
            g.sum(y)
        }),
        "sigmoid_ce" => {
            let mut rng = ChaCha8Rng::seed_from_u64(32);
            let labels = Tensor::from_fn([2, 1, 5, 5], |_| rng.random_bool(0.3) as u8 as f64);
            let a = check(random(&[2, 1, 5, 5], 31).map(|v| 5.0 * v), |g, x| {
                g.sigmoid_ce(x, &labels, 1.0)
            })?;
            let b = check(random(&[2, 1, 5, 5], 33).map(|v| 5.0 * v), |g, x| {
                g.sigmoid_ce(x, &labels, 3.0)
            })?;
            Ok(merge(&[a, b]))
        }
        "affm_fuse" => {
            let bnd = random(&[2, 4, 4, 4], 35);
            let sal = random(&[2, 4, 4, 4], 34);
            let a = check(sal.clone(), |g, x| {
                let b = g.input(bnd.clone())?;
                let y = affm_fuse(g, x, b)?;
                project(g, y, 34)
            })?;
            let b = check(bnd.clone(), |g, b| {
                let s = g.input(sal.clone())?;
                let y = affm_fuse(g, s, b)?;
                project(g, y, 35)
            })?;
            Ok(merge(&[a, b]))
        }
        "model_input" => {
            let model = tiny_model()?;
            let targets = tiny_targets()?;
            let x = random(&[1, 3, 32, 32], 36);
            let coords = spread(x.len(), 192);
            grad_check_at(
                |g, x| {
                    let p = model.params().bind_frozen(g)?;
                    model_loss(g, &model, &p, x, &targets)
                },
                &x,
                STEP,
                TOLERANCE,
                &coords,
            )
        }
        "model_params" => {
            let model = tiny_model()?;
            let targets = tiny_targets()?;
            let input = random(&[1, 3, 32, 32], 37);
            let mut reports = Vec::with_capacity(model.params().len());
            for (id, t) in model.params().ids().zip(model.params().tensors()) {
                let coords = spread(t.len(), 4);
                reports.push(grad_check_at(
                    |g, w| {
                        let p = model.params().bind_with(g, id, w)?;
                        let x = g.input(input.clone())?;
                        model_loss(g, &model, &p, x, &targets)
                    },
                    t,
                    STEP,
                    TOLERANCE,
                    &coords,
                )?);
            }
            Ok(merge(&reports))
        }
        _ => Err(Error::contract(
            "tensor-core",
            alloc::format!("unknown gradcheck case {name:?}"),
        )),
    }
}
