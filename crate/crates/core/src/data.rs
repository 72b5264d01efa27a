//! Preprocessing and the synthetic saliency dataset.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::{canny_boundary, CannyParams};
use crate::error::{ensure, Result};
use crate::mask::{BinaryMask, BoundaryMask};
use crate::tensor::Tensor;

/// Per-channel means in RGB order; the usual BGR triple (104.0, 116.7, 122.7) reversed.
pub const DEFAULT_MEANS_RGB: [f64; 3] = [122.7, 116.7, 104.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencySample {
    pub id: String,
    /// `[3, H, W]`, RGB, raw 0..=255.
    pub image: Tensor,
    pub mask: BinaryMask,
    pub boundary: BoundaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub height: usize,
    pub width: usize,
    pub means_rgb: [f64; 3],
    /// Multiplies the mean-subtracted values.
    pub scale: f64,
}

impl Preprocess {
    pub fn new(height: usize, width: usize) -> Self {
        Preprocess {
            height,
            width,
            means_rgb: DEFAULT_MEANS_RGB,
            scale: 1.0,
        }
    }

    /// Nearest resize to `height x width`, then `(x - mean) * scale` per channel.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        ensure!(
            image.shape().len() == 3 && image.shape()[0] == 3,
            "data-io",
            "expected a [3, H, W] image, got {:?}",
            image.shape()
        );
        ensure!(
            self.height > 0 && self.width > 0,
            "data-io",
            "target size must be positive"
        );
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let (th, tw) = (self.height, self.width);
        let src = image.data();
        Ok(Tensor::from_fn([3, th, tw], |i| {
            let c = i / (th * tw);
            let y = (i / tw) % th;
            let x = i % tw;
            let v = src[(c * h + y * h / th) * w + x * w / tw];
            (v - self.means_rgb[c]) * self.scale
        }))
    }
}

fn value_noise(rng: &mut ChaCha8Rng, size: usize, amplitude: f64) -> Vec<f64> {
    const GRID: usize = 5;
    let knots: Vec<f64> = (0..GRID * GRID)
        .map(|_| rng.random_range(-amplitude..=amplitude))
        .collect();
    let span = (size - 1).max(1) as f64 / (GRID - 1) as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 / span, x as f64 / span);
            let (y0, x0) = ((fy as usize).min(GRID - 2), (fx as usize).min(GRID - 2));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let k = |yy: usize, xx: usize| knots[yy * GRID + xx];
            let top = k(y0, x0) * (1.0 - tx) + k(y0, x0 + 1) * tx;
            let bottom = k(y0 + 1, x0) * (1.0 - tx) + k(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: usize) -> Shape {
        let s = size as f64;
        if rng.random_bool(0.5) {
            let h = rng.random_range(s / 8.0..s / 2.0);
            let w = rng.random_range(s / 8.0..s / 2.0);
            let y0 = rng.random_range(0.0..s - h);
            let x0 = rng.random_range(0.0..s - w);
            Shape::Rect {
                y0,
                x0,
                y1: y0 + h,
                x1: x0 + w,
            }
        } else {
            let ry = rng.random_range(s / 16.0..s / 4.0);
            let rx = rng.random_range(s / 16.0..s / 4.0);
            let cy = rng.random_range(ry..s - ry);
            let cx = rng.random_range(rx..s - rx);
            Shape::Ellipse { cy, cx, ry, rx }
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => py >= y0 && py < y1 && px >= x0 && px < x1,
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (dy, dx) = ((py - cy) / ry, (px - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

/// One sample from its own RNG stream; the same `(seed, index)` always gives the same sample.
pub fn synthetic_sample(size: usize, seed: u64, index: u64) -> Result<SaliencySample> {
    ensure!(
        size > 0 && size % 32 == 0,
        "data-io",
        "synthetic size {size} must be a positive multiple of 32"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let (shapes, mask) = loop {
        let count = rng.random_range(1..=3);
        let shapes: Vec<Shape> = (0..count).map(|_| Shape::random(&mut rng, size)).collect();
        let mask = BinaryMask::from_fn(size, size, |y, x| shapes.iter().any(|s| s.contains(y, x)));
        if (0.05..=0.60).contains(&mask.coverage()) {
            break (shapes, mask);
        }
    };

    let background: [f64; 3] = core::array::from_fn(|_| rng.random_range(20.0..110.0));
    let colors: Vec<[f64; 3]> = shapes
        .iter()
        .map(|_| core::array::from_fn(|_| rng.random_range(140.0..245.0)))
        .collect();
    let noise: Vec<Vec<f64>> = (0..3).map(|_| value_noise(&mut rng, size, 15.0)).collect();

    let plane = size * size;
    let mut data = alloc::vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            // Later shapes are painted on top.
            let color = shapes
                .iter()
                .zip(&colors)
                .rev()
                .find(|(s, _)| s.contains(y, x))
                .map(|(_, c)| *c);
            for c in 0..3 {
                let base = color.map_or(background[c] + noise[c][i], |col| col[c]);
                let jitter = rng.random_range(-6.0..=6.0);
                data[c * plane + i] = libm::round(base + jitter).clamp(0.0, 255.0);
            }
        }
    }
    let boundary = canny_boundary(&mask, &CannyParams::default())?;
    Ok(SaliencySample {
        id: format!("synth_{index:05}"),
        image: Tensor::new([3, size, size], data)?,
        mask,
        boundary,
    })
}

/// `n` samples of `size x size`: noisy background plus one to three filled
/// rectangles or ellipses, each in its own bright color.
pub fn gen_synthetic(n: usize, size: usize, seed: u64) -> Result<Vec<SaliencySample>> {
    ensure!(n >= 1, "data-io", "sample count must be at least 1");
    (0..n as u64).map(|i| synthetic_sample(size, seed, i)).collect()
}
