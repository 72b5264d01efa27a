//! Boundary labels from binary saliency masks: Gaussian smoothing, Sobel
//! gradients, non-maximum suppression along the quantized gradient
//! direction, and hysteresis thresholding.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::mask::{BinaryMask, BoundaryMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds on gradient magnitude divided by its image maximum.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            sigma: 1.0,
            low: 0.1,
            high: 0.3,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.sigma > 0.0, "boundary-gt", "sigma must be positive");
        ensure!(
            0.0 < self.low && self.low < self.high && self.high <= 1.0,
            "boundary-gt",
            "thresholds must satisfy 0 < low < high <= 1"
        );
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = libm::ceil(3.0 * sigma) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable blur with replicate padding.
fn blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * img[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Sobel responses `(gx, gy)` with replicate padding; `y` grows downwards.
fn sobel(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| img[clamp(y, h) * w + clamp(x, w)];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// Neighbour offset `(dy, dx)` along the gradient, quantized to 0/45/90/135 degrees.
fn direction(gx: f64, gy: f64) -> (isize, isize) {
    let mut deg = libm::atan2(gy, gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        (0, 1)
    } else if deg < 67.5 {
        (1, 1)
    } else if deg < 112.5 {
        (1, 0)
    } else {
        (1, -1)
    }
}

/// Canny edges of a binary mask.
pub fn canny_boundary(mask: &BinaryMask, params: &CannyParams) -> Result<BoundaryMask> {
    params.validate()?;
    let (h, w) = (mask.height(), mask.width());
    let img: Vec<f64> = mask.data().iter().map(|&v| v as f64).collect();
    let smooth = blur(&img, h, w, params.sigma);
    let (gx, gy) = sobel(&smooth, h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| libm::hypot(*a, *b)).collect();
    let peak = mag.iter().copied().fold(0.0, f64::max);
    if peak <= 1e-12 {
        return Ok(BinaryMask::zeros(h, w));
    }
    let norm: Vec<f64> = mag.iter().map(|m| m / peak).collect();

    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            norm[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = norm[i];
            if m < params.low {
                continue;
            }
            let (dy, dx) = direction(gx[i], gy[i]);
            let (yi, xi) = (y as isize, x as isize);
            let ahead = at(yi + dy, xi + dx);
            let behind = at(yi - dy, xi - dx);
            // Ties on a plateau keep only the pixel on the `behind` side.
            if m >= behind && m > ahead {
                thin[i] = m;
            }
        }
    }

    let mut out = BinaryMask::zeros(h, w);
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= params.high {
            out.set(i / w, i % w, true);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if thin[j] >= params.low && !out.get(ny as usize, nx as usize) {
                    out.set(ny as usize, nx as usize, true);
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}

/// Morphological inner boundary: `mask AND NOT erode3(mask)`.
pub fn morph_boundary_oracle(mask: &BinaryMask) -> BoundaryMask {
    let eroded = mask.erode3();
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| mask.get(y, x) && !eroded.get(y, x))
}

/// Fraction of `a`'s pixels lying within Chebyshev distance `tol` of a pixel
/// of `b`; 1.0 when `a` is empty.
pub fn match_fraction(a: &BinaryMask, b: &BinaryMask, tol: usize) -> f64 {
    let total = a.count();
    if total == 0 {
        return 1.0;
    }
    let near = b.dilate(tol);
    let hit = a
        .data()
        .iter()
        .zip(near.data())
        .filter(|(&p, &n)| p == 1 && n == 1)
        .count();
    hit as f64 / total as f64
}
