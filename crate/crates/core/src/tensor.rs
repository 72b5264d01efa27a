//! Dense row-major tensors. Image-like data is laid out NCHW.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        ensure!(
            !shape.is_empty(),
            "tensor-core",
            "shape must have at least one dimension"
        );
        ensure!(
            shape.iter().all(|&d| d > 0),
            "tensor-core",
            "shape {shape:?} has a zero dimension"
        );
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            "tensor-core",
            "shape {shape:?} needs {numel} values, got {}",
            data.len()
        );
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid shape {shape:?}"
        );
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Splits a 4-D shape into `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        ensure!(
            self.shape.len() == 4,
            "tensor-core",
            "expected an NCHW tensor, got shape {:?}",
            self.shape
        );
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let (_, cc, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * h + y) * w + x]
    }

    /// Copies sample `n` of a batched tensor out as a batch of one.
    pub fn sample(&self, n: usize) -> Tensor {
        let per = self.data.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new (or existing batch) leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        ensure!(!items.is_empty(), "tensor-core", "cannot stack zero tensors");
        let inner = items[0].shape();
        ensure!(
            items.iter().all(|t| t.shape() == inner),
            "tensor-core",
            "stack requires equal shapes"
        );
        let mut shape = Vec::with_capacity(inner.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(inner);
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            data.extend_from_slice(t.data());
        }
        Tensor::new(shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new([2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new([2, 0], vec![]).is_err());
        assert!(Tensor::new(Vec::new(), vec![1.0]).is_err());
    }

    #[test]
    fn stack_and_sample_are_inverse() {
        let a = Tensor::from_fn([2, 3], |i| i as f64);
        let b = Tensor::from_fn([2, 3], |i| -(i as f64));
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 3]);
        assert_eq!(s.sample(1).data(), b.data());
    }
}
