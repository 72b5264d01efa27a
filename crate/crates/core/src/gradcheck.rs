//! Finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(max |a|, max |n|, 1e-8)` over compared coordinates.
    pub max_rel_error: f64,
    /// Coordinate with the largest absolute discrepancy.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree, i.e. that sit on a kink.
    pub excluded: usize,
    pub passed: bool,
}

/// Checks the gradient of scalar-valued `f` at `x` on every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, step, tol, &coords)
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.input(x.clone())?;
    let out = f(&mut g, v)?;
    ensure!(
        g.value(out).is_scalar(),
        "tensor-core",
        "grad_check: function must be scalar-valued"
    );
    Ok(g.value(out).item())
}

/// Like [`grad_check`] but only compares the listed coordinates.
pub fn grad_check_at<F>(f: F, x: &Tensor, step: f64, tol: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    ensure!(step > 0.0, "tensor-core", "grad_check: step must be positive");
    ensure!(
        coords.iter().all(|&c| c < x.len()),
        "tensor-core",
        "grad_check: coordinate out of range"
    );
    let mut g = Graph::new();
    let v = g.param(x.clone())?;
    let out = f(&mut g, v)?;
    ensure!(
        g.value(out).is_scalar(),
        "tensor-core",
        "grad_check: function must be scalar-valued"
    );
    let f0 = g.value(out).item();
    g.backward(out)?;
    let analytic = g.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut numeric = Vec::with_capacity(coords.len());
    let mut probe = x.clone();
    for &c in coords {
        let orig = probe.data()[c];
        probe.data_mut()[c] = orig + step;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[c] = orig - step;
        let fm = eval(&f, &probe)?;
        probe.data_mut()[c] = orig;
        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        numeric.push((c, (fp - fm) / (2.0 * step), forward, backward));
    }

    let scale = coords
        .iter()
        .map(|&c| libm::fabs(analytic.data()[c]))
        .chain(numeric.iter().map(|n| libm::fabs(n.1)))
        .fold(1e-8, f64::max);

    let mut worst = 0.0;
    let mut worst_index = None;
    let mut excluded = 0;
    for &(c, n, fwd, bwd) in &numeric {
        if libm::fabs(fwd - bwd) > tol * scale {
            excluded += 1;
            continue;
        }
        let d = libm::fabs(analytic.data()[c] - n);
        if worst_index.is_none() || d > worst {
            worst = d;
            worst_index = Some(c);
        }
    }
    let checked = numeric.len() - excluded;
    let max_rel_error = worst / scale;
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        checked,
        excluded,
        passed: checked > 0 && max_rel_error < tol,
    })
}
