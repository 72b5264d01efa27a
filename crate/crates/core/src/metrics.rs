use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::mask::BinaryMask;

pub const BETA2: f64 = 0.3;
pub const PR_THRESHOLDS: usize = 256;

/// Saliency map in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "metrics", "saliency map dims must be positive");
        ensure!(
            data.len() == height * width,
            "metrics",
            "saliency map {height}x{width} needs {} values, got {}",
            height * width,
            data.len()
        );
        ensure!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            "metrics",
            "saliency values must lie in [0, 1]"
        );
        Ok(SaliencyMap { height, width, data })
    }

    /// Gray levels divided by 255.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(height, width, gray.iter().map(|&v| v as f64 / 255.0).collect())
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        SaliencyMap {
            height: mask.height(),
            width: mask.width(),
            data: mask.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn check_shapes(s: &SaliencyMap, g: &BinaryMask) -> Result<()> {
    ensure!(
        s.height == g.height() && s.width == g.width(),
        "metrics",
        "saliency map is {}x{} but mask is {}x{}",
        s.height,
        s.width,
        g.height(),
        g.width()
    );
    Ok(())
}

/// Precision and recall of a binarized prediction.
/// Precision is 1 when nothing is predicted; recall is 1 when `g` is empty.
fn precision_recall(s: &SaliencyMap, g: &BinaryMask, predict: impl Fn(f64) -> bool) -> (f64, f64) {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&v, &t) in s.data.iter().zip(g.data()) {
        match (predict(v), t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let p = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fneg == 0 {
        1.0
    } else {
        tp as f64 / (tp + fneg) as f64
    };
    (p, r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(precision, recall)` for thresholds `0..=255`.
    pub points: Vec<(f64, f64)>,
}

impl PrCurve {
    pub fn max_f(&self) -> f64 {
        self.points
            .iter()
            .map(|&(p, r)| f_measure(p, r, BETA2))
            .fold(0.0, f64::max)
    }
}

/// Sweeps integer thresholds; a pixel is positive at `t` when `S * 255 > t`.
pub fn pr_curve(s: &SaliencyMap, g: &BinaryMask) -> Result<PrCurve> {
    check_shapes(s, g)?;
    let mut positives = [0usize; PR_THRESHOLDS];
    let mut hits = [0usize; PR_THRESHOLDS];
    for (&v, &t) in s.data.iter().zip(g.data()) {
        let scaled = v * 255.0;
        // Number of integer thresholds `t >= 0` with `scaled > t`.
        let last = if scaled > 0.0 {
            (libm::ceil(scaled) as usize).min(PR_THRESHOLDS)
        } else {
            0
        };
        if last > 0 {
            positives[last - 1] += 1;
            if t == 1 {
                hits[last - 1] += 1;
            }
        }
    }
    let total_pos = g.count();
    let mut points = alloc::vec![(0.0, 0.0); PR_THRESHOLDS];
    let (mut pred, mut tp) = (0usize, 0usize);
    for th in (0..PR_THRESHOLDS).rev() {
        pred += positives[th];
        tp += hits[th];
        let p = if pred == 0 { 1.0 } else { tp as f64 / pred as f64 };
        let r = if total_pos == 0 {
            1.0
        } else {
            tp as f64 / total_pos as f64
        };
        points[th] = (p, r);
    }
    Ok(PrCurve { points })
}

/// Weighted harmonic mean `(1 + b2) P R / (b2 P + R)`, 0 when the denominator is 0.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

pub fn mae(s: &SaliencyMap, g: &BinaryMask) -> Result<f64> {
    check_shapes(s, g)?;
    let sum: f64 = s
        .data
        .iter()
        .zip(g.data())
        .map(|(&v, &t)| libm::fabs(v - t as f64))
        .sum();
    Ok(sum / s.data.len() as f64)
}

/// F-measure at threshold `min(2 mean(S), 1)`; pixels at zero saliency are never positive.
pub fn adaptive_f(s: &SaliencyMap, g: &BinaryMask) -> Result<f64> {
    check_shapes(s, g)?;
    let t = (2.0 * s.mean()).min(1.0);
    let (p, r) = precision_recall(s, g, |v| v >= t && v > 0.0);
    Ok(f_measure(p, r, BETA2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    /// Adaptive-threshold F-measure.
    pub f_beta: f64,
    pub mae: f64,
    /// Best F-measure over the image's own PR curve.
    pub max_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub mean_f: f64,
    pub mean_mae: f64,
    /// Best F-measure over the mean PR curve.
    pub max_f: f64,
    pub curve: PrCurve,
}

/// Accumulates per-image scores in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Evaluator {
    images: Vec<ImageScore>,
    curve_sum: Vec<(f64, f64)>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: impl Into<String>, s: &SaliencyMap, g: &BinaryMask) -> Result<&ImageScore> {
        let curve = pr_curve(s, g)?;
        let score = ImageScore {
            id: id.into(),
            f_beta: adaptive_f(s, g)?,
            mae: mae(s, g)?,
            max_f: curve.max_f(),
        };
        if self.curve_sum.is_empty() {
            self.curve_sum = alloc::vec![(0.0, 0.0); PR_THRESHOLDS];
        }
        for (acc, &(p, r)) in self.curve_sum.iter_mut().zip(&curve.points) {
            acc.0 += p;
            acc.1 += r;
        }
        self.images.push(score);
        Ok(self.images.last().expect("just pushed"))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn finish(self) -> Result<EvalReport> {
        ensure!(!self.images.is_empty(), "metrics", "no images to evaluate");
        let n = self.images.len() as f64;
        let curve = PrCurve {
            points: self.curve_sum.iter().map(|&(p, r)| (p / n, r / n)).collect(),
        };
        Ok(EvalReport {
            mean_f: self.images.iter().map(|s| s.f_beta).sum::<f64>() / n,
            mean_mae: self.images.iter().map(|s| s.mae).sum::<f64>() / n,
            max_f: curve.max_f(),
            curve,
            images: self.images,
        })
    }
}
