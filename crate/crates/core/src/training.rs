//! Mini-batch SGD over preprocessed examples.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Preprocess, SaliencySample};
use crate::error::{ensure, Result};
use crate::graph::Graph;
use crate::loss::{compute_loss, LossBreakdown, LossWeights, Targets};
use crate::model::Bfanet;
use crate::optim::{lr_schedule, sgd_step, OptimState};
use crate::tensor::Tensor;

/// One preprocessed training pair.
#[derive(Debug, Clone)]
pub struct Example {
    /// `[3, H, W]`.
    pub input: Tensor,
    /// `[1, H, W]` of 0/1.
    pub mask: Tensor,
    /// `[1, H, W]` of 0/1.
    pub boundary: Tensor,
}

impl Example {
    pub fn from_sample(s: &SaliencySample, pre: &Preprocess) -> Result<Self> {
        Ok(Example {
            input: pre.apply(&s.image)?,
            mask: s.mask.resize_nearest(pre.height, pre.width).to_tensor(),
            boundary: s.boundary.resize_nearest(pre.height, pre.width).to_tensor(),
        })
    }
}

/// Stacks examples into `(inputs, targets)`.
pub fn batch(examples: &[&Example]) -> Result<(Tensor, Targets)> {
    let inputs: Vec<&Tensor> = examples.iter().map(|e| &e.input).collect();
    let masks: Vec<&Tensor> = examples.iter().map(|e| &e.mask).collect();
    let bounds: Vec<&Tensor> = examples.iter().map(|e| &e.boundary).collect();
    Ok((
        Tensor::stack(&inputs)?,
        Targets::new(Tensor::stack(&masks)?, &Tensor::stack(&bounds)?)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            base_lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            loss: LossWeights::default(),
        }
    }
}

/// Epoch means of the loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub final_saliency: f64,
    pub stage_mean: f64,
    pub boundary_mean: f64,
    pub steps: usize,
}

/// Shuffle-RNG position, enough to resume the exact batch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Bfanet,
    pub optim: OptimState,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

const SHUFFLE_STREAM: u64 = 1;

impl Trainer {
    /// The shuffle order is drawn from the model seed on its own stream.
    pub fn new(model: Bfanet, cfg: TrainConfig) -> Result<Self> {
        ensure!(cfg.batch_size >= 1, "trainer", "batch size must be at least 1");
        ensure!(cfg.base_lr >= 0.0, "trainer", "learning rate must be non-negative");
        let mut rng = ChaCha8Rng::seed_from_u64(model.config().seed);
        rng.set_stream(SHUFFLE_STREAM);
        let optim = OptimState::new(model.params().tensors(), cfg.base_lr, cfg.momentum, cfg.weight_decay);
        Ok(Trainer {
            model,
            optim,
            cfg,
            rng,
            epochs_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn rng_state(&self) -> RngState {
        RngState {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    /// Restores progress saved alongside a checkpoint.
    pub fn restore(&mut self, epochs_done: usize, rng: RngState, velocity: Vec<Tensor>) -> Result<()> {
        self.optim.set_velocity(velocity)?;
        let mut r = ChaCha8Rng::from_seed(rng.seed);
        r.set_stream(rng.stream);
        r.set_word_pos(rng.word_pos);
        self.rng = r;
        self.epochs_done = epochs_done;
        Ok(())
    }

    /// Forward, backward and one SGD update at the current learning rate.
    pub fn step(&mut self, examples: &[&Example]) -> Result<LossBreakdown> {
        ensure!(!examples.is_empty(), "trainer", "empty batch");
        let (inputs, targets) = batch(examples)?;
        let mut g = Graph::new();
        let bound = self.model.params().bind(&mut g)?;
        let x = g.input(inputs)?;
        let out = self.model.forward(&mut g, &bound, x)?;
        let (loss, breakdown) = compute_loss(&mut g, &out, &targets, &self.cfg.loss)?;
        g.backward(loss)?;
        let grads = bound.grads(&g, self.model.params());
        sgd_step(self.model.params_mut().tensors_mut(), &grads, &mut self.optim)?;
        Ok(breakdown)
    }

    /// One shuffled pass; the last batch may be short.
    pub fn run_epoch(&mut self, data: &[Example]) -> Result<EpochLog> {
        ensure!(
            data.len() >= self.cfg.batch_size,
            "trainer",
            "{} training samples is fewer than the batch size {}",
            data.len(),
            self.cfg.batch_size
        );
        let lr = lr_schedule(self.epochs_done, self.cfg.base_lr);
        self.optim.learning_rate = lr;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0; 4];
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let b = self.step(&examples)?;
            sums[0] += b.total;
            sums[1] += b.final_saliency;
            sums[2] += b.stage_mean();
            sums[3] += b.boundary_mean();
            steps += 1;
        }
        self.epochs_done += 1;
        let n = steps as f64;
        Ok(EpochLog {
            epoch: self.epochs_done,
            lr,
            total: sums[0] / n,
            final_saliency: sums[1] / n,
            stage_mean: sums[2] / n,
            boundary_mean: sums[3] / n,
            steps,
        })
    }
}

/// Relative improvement of the epoch total below `1e-3` across the last 5 epochs.
pub fn plateaued(totals: &[f64]) -> bool {
    const WINDOW: usize = 5;
    if totals.len() <= WINDOW {
        return false;
    }
    let then = totals[totals.len() - 1 - WINDOW];
    let now = totals[totals.len() - 1];
    (then - now) / libm::fabs(then).max(1e-12) < 1e-3
}
