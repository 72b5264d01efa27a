use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// `H x W` map of 0/1 values, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

/// Edge pixels of a saliency mask.
pub type BoundaryMask = BinaryMask;

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "boundary-gt", "mask dims must be positive");
        ensure!(
            data.len() == height * width,
            "boundary-gt",
            "mask {height}x{width} needs {} values, got {}",
            height * width,
            data.len()
        );
        ensure!(
            data.iter().all(|&v| v <= 1),
            "boundary-gt",
            "mask values must be 0 or 1"
        );
        Ok(BinaryMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: alloc::vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        BinaryMask { height, width, data }
    }

    /// Maps 8-bit gray levels to bits: 0 stays 0, everything else becomes 1.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        ensure!(
            gray.len() == height * width,
            "data-io",
            "graymap has {} pixels, expected {}",
            gray.len(),
            height * width
        );
        Ok(BinaryMask {
            height,
            width,
            data: gray.iter().map(|&v| (v > 127) as u8).collect(),
        })
    }

    /// 0 -> 0, 1 -> 255.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// `[1, H, W]` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, self.height, self.width],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("dims are positive")
    }

    /// Nearest-neighbour resize; stays binary.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        BinaryMask::from_fn(height, width, |y, x| {
            self.get(y * self.height / height, x * self.width / width)
        })
    }

    /// Pixels within Chebyshev distance `r` of a set pixel.
    pub fn dilate(&self, r: usize) -> Self {
        let (h, w) = (self.height, self.width);
        BinaryMask::from_fn(h, w, |y, x| {
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            (y0..=y1).any(|yy| (x0..=x1).any(|xx| self.get(yy, xx)))
        })
    }

    /// 3x3 erosion; neighbours outside the image are ignored.
    pub fn erode3(&self) -> Self {
        let (h, w) = (self.height, self.width);
        BinaryMask::from_fn(h, w, |y, x| {
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            (y0..=y1).all(|yy| (x0..=x1).all(|xx| self.get(yy, xx)))
        })
    }
}
