//! Miniature stand-ins for the two pretrained encoders. Each block is two
//! 3x3 conv + relu layers followed by 2x max-pooling, so block `m` emits
//! features at stride `2^m`.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::{ModelConfig, SALIENCY_LEVELS, SCALES};
use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Conv, ParamStore};

/// Feature maps with strictly halving spatial size, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub maps: Vec<Var>,
}

impl FeaturePyramid {
    /// Map at 1-based level / scale `i`.
    pub fn level(&self, i: usize) -> Var {
        self.maps[i - 1]
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    conv1: Conv,
    conv2: Conv,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_c: usize, out_c: usize) -> Self {
        EncoderBlock {
            conv1: Conv::same3(store, rng, &alloc::format!("{name}.conv1"), in_c, out_c),
            conv2: Conv::same3(store, rng, &alloc::format!("{name}.conv2"), out_c, out_c),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let x = self.conv1.forward(g, p, x)?;
        let x = g.relu(x)?;
        let x = self.conv2.forward(g, p, x)?;
        let x = g.relu(x)?;
        g.max_pool2(x)
    }
}

fn check_input(g: &Graph, img: Var, cfg: &ModelConfig) -> Result<()> {
    let shape = g.shape(img);
    ensure!(
        shape.len() == 4 && shape[1] == 3,
        "backbone",
        "expected a [N, 3, H, W] image batch, got {shape:?}"
    );
    ensure!(
        shape[2] == cfg.input_h && shape[3] == cfg.input_w,
        "backbone",
        "input {}x{} does not match configured {}x{}",
        shape[2],
        shape[3],
        cfg.input_h,
        cfg.input_w
    );
    Ok(())
}

fn run_blocks(blocks: &[EncoderBlock], g: &mut Graph, p: &Bound, img: Var) -> Result<FeaturePyramid> {
    let mut maps = Vec::with_capacity(blocks.len());
    let mut x = img;
    for b in blocks {
        x = b.forward(g, p, x)?;
        maps.push(x);
    }
    Ok(FeaturePyramid { maps })
}

/// Produces the four saliency levels at strides 2, 4, 8, 16; level `m` has
/// `base_channels * m` channels.
#[derive(Debug, Clone)]
pub struct SaliencyEncoder {
    blocks: Vec<EncoderBlock>,
}

impl SaliencyEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let mut in_c = 3;
        let blocks = (1..=SALIENCY_LEVELS)
            .map(|m| {
                let out_c = cfg.base_channels * m;
                let b = EncoderBlock::new(store, rng, &alloc::format!("saliency.block{m}"), in_c, out_c);
                in_c = out_c;
                b
            })
            .collect();
        SaliencyEncoder { blocks }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, img: Var, cfg: &ModelConfig) -> Result<FeaturePyramid> {
        check_input(g, img, cfg)?;
        run_blocks(&self.blocks, g, p, img)
    }
}

/// Produces the five boundary feature stacks at strides 2..32, each with
/// `boundary_channels` channels.
#[derive(Debug, Clone)]
pub struct BoundaryEncoder {
    blocks: Vec<EncoderBlock>,
}

impl BoundaryEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let c = cfg.boundary_channels;
        let blocks = (1..=SCALES)
            .map(|t| {
                EncoderBlock::new(
                    store,
                    rng,
                    &alloc::format!("boundary.block{t}"),
                    if t == 1 { 3 } else { c },
                    c,
                )
            })
            .collect();
        BoundaryEncoder { blocks }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, img: Var, cfg: &ModelConfig) -> Result<FeaturePyramid> {
        check_input(g, img, cfg)?;
        run_blocks(&self.blocks, g, p, img)
    }
}
