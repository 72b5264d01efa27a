//! SGD with momentum and L2 weight decay, plus the step learning-rate schedule.

use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Velocity buffers and hyperparameters of one SGD optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl OptimState {
    /// Zero velocities shaped like `params`.
    pub fn new(params: &[Tensor], learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Replaces the velocity buffers, e.g. when restoring a checkpoint.
    pub fn set_velocity(&mut self, velocity: Vec<Tensor>) -> Result<()> {
        ensure!(
            velocity.len() == self.velocity.len()
                && velocity.iter().zip(&self.velocity).all(|(a, b)| a.shape() == b.shape()),
            "nn-ops",
            "velocity buffers do not match the parameter set"
        );
        self.velocity = velocity;
        Ok(())
    }
}

/// One update: `g' = g + wd * w; v = momentum * v + g'; w = w - lr * v`.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    ensure!(
        params.len() == grads.len() && params.len() == state.velocity.len(),
        "nn-ops",
        "sgd_step: {} params, {} grads, {} velocity buffers",
        params.len(),
        grads.len(),
        state.velocity.len()
    );
    for ((w, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        ensure!(
            w.shape() == g.shape() && w.shape() == v.shape(),
            "nn-ops",
            "sgd_step: shape mismatch {:?}",
            w.shape()
        );
        for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g = g + state.weight_decay * *w;
            *v = state.momentum * *v + g;
            *w -= state.learning_rate * *v;
        }
    }
    Ok(())
}

/// Learning rate decayed by 10% after every 10 epochs.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    base_lr * libm::pow(0.9, (epoch / 10) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(w: f64, g: f64, lr: f64, momentum: f64, wd: f64) -> f64 {
        let mut p = [Tensor::scalar(w)];
        let mut s = OptimState::new(&p, lr, momentum, wd);
        sgd_step(&mut p, &[Tensor::scalar(g)], &mut s).unwrap();
        p[0].item()
    }

    #[test]
    fn plain_step() {
        assert!((step_once(1.0, 0.5, 0.1, 0.0, 0.0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn decay_only() {
        assert!((step_once(1.0, 0.0, 0.1, 0.0, 0.0005) - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = [Tensor::scalar(0.0)];
        let mut s = OptimState::new(&p, 0.1, 0.9, 0.0);
        let g = [Tensor::scalar(1.0)];
        sgd_step(&mut p, &g, &mut s).unwrap();
        sgd_step(&mut p, &g, &mut s).unwrap();
        assert!((p[0].item() + 0.29).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = [Tensor::from_fn([3], |i| i as f64)];
        let before = p.clone();
        let mut s = OptimState::new(&p, 0.0, 0.9, 0.0005);
        sgd_step(&mut p, &[Tensor::full([3], 7.0)], &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 0.01), 0.01);
        assert_eq!(lr_schedule(9, 0.01), 0.01);
        assert!((lr_schedule(10, 0.01) - 0.009).abs() < 1e-15);
        assert!((lr_schedule(25, 0.01) - 0.0081).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_error() {
        let mut p = [Tensor::scalar(0.0)];
        let mut s = OptimState::new(&p, 0.1, 0.0, 0.0);
        assert!(sgd_step(&mut p, &[], &mut s).is_err());
    }
}
