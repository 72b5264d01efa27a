//! Boundary prediction network: residual convolution units on each encoder
//! side output, merged coarse-to-fine through exact 2x deconvolutions, with a
//! 1x1 edge-logit head per scale.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::{ModelConfig, SCALES};
use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::model::backbone::FeaturePyramid;
use crate::params::{Bound, Conv, Deconv, ParamStore};

/// `x + conv2(relu(conv1(relu(x))))`.
#[derive(Debug, Clone)]
pub struct Rcu {
    conv1: Conv,
    conv2: Conv,
}

impl Rcu {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, c: usize) -> Self {
        Rcu {
            conv1: Conv::same3(store, rng, &alloc::format!("{name}.conv1"), c, c),
            conv2: Conv::same3(store, rng, &alloc::format!("{name}.conv2"), c, c),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.relu(x)?;
        let y = self.conv1.forward(g, p, y)?;
        let y = g.relu(y)?;
        let y = self.conv2.forward(g, p, y)?;
        g.add(x, y)
    }
}

/// Boundary features `B^tau` and edge logits `B_p^tau`, finest first.
#[derive(Debug, Clone)]
pub struct BoundaryOutputs {
    pub features: Vec<Var>,
    pub predictions: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Bpn {
    /// Cascaded RCUs per scale; empty chains act as identity.
    rcus: Vec<Vec<Rcu>>,
    /// `deconvs[t - 1]` lifts `B^{t+1}` to scale `t`.
    deconvs: Vec<Deconv>,
    heads: Vec<Conv>,
    full_res: Deconv,
}

impl Bpn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let c = cfg.boundary_channels;
        let per_scale = if cfg.ablation.uses_rcu() { cfg.rcu_count } else { 0 };
        let rcus = (1..=SCALES)
            .map(|t| {
                (0..per_scale)
                    .map(|k| Rcu::new(store, rng, &alloc::format!("bpn.rcu{t}.{k}"), c))
                    .collect()
            })
            .collect();
        let deconvs = (1..SCALES)
            .map(|t| Deconv::double(store, rng, &alloc::format!("bpn.deconv{t}"), c, c))
            .collect();
        let heads = (1..=SCALES)
            .map(|t| Conv::pointwise(store, rng, &alloc::format!("bpn.head{t}"), c, 1))
            .collect();
        let full_res = Deconv::double(store, rng, "bpn.full_res", c, c);
        Bpn {
            rcus,
            deconvs,
            heads,
            full_res,
        }
    }

    fn rcu_chain(&self, g: &mut Graph, p: &Bound, t: usize, x: Var) -> Result<Var> {
        let mut y = x;
        for rcu in &self.rcus[t - 1] {
            y = rcu.forward(g, p, y)?;
        }
        Ok(y)
    }

    /// `B^5 = RCU(B_f^5)`, `B^t = deconv(B^{t+1}) + RCU(B_f^t)` for `t = 4..1`,
    /// then one 1x1 head per scale.
    pub fn forward(&self, g: &mut Graph, p: &Bound, side: &FeaturePyramid) -> Result<BoundaryOutputs> {
        ensure!(
            side.len() == SCALES,
            "bpn",
            "expected {SCALES} side outputs, got {}",
            side.len()
        );
        let mut features = alloc::vec![side.level(SCALES); SCALES];
        features[SCALES - 1] = self.rcu_chain(g, p, SCALES, side.level(SCALES))?;
        for t in (1..SCALES).rev() {
            let up = self.deconvs[t - 1].forward(g, p, features[t])?;
            let local = self.rcu_chain(g, p, t, side.level(t))?;
            ensure!(
                g.shape(up) == g.shape(local),
                "bpn",
                "scale {t}: upsampled {:?} vs side output {:?}",
                g.shape(up),
                g.shape(local)
            );
            features[t - 1] = g.add(up, local)?;
        }
        let predictions = features
            .iter()
            .zip(&self.heads)
            .map(|(&b, head)| head.forward(g, p, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundaryOutputs { features, predictions })
    }

    /// Lifts `B^1` (stride 2) to the input resolution.
    pub fn boundary_full_res(&self, g: &mut Graph, p: &Bound, b1: Var) -> Result<Var> {
        self.full_res.forward(g, p, b1)
    }

    pub fn deconvs(&self) -> &[Deconv] {
        &self.deconvs
    }

    pub fn heads(&self) -> &[Conv] {
        &self.heads
    }
}
