//! Named parameter storage and the layer building blocks that index into it.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors. Order is construction order, which is
/// fixed for a given config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces all values; names and shapes must match exactly.
    pub fn load(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        ensure!(
            named.len() == self.tensors.len(),
            "trainer",
            "expected {} parameter tensors, got {}",
            self.tensors.len(),
            named.len()
        );
        for ((name, t), (own_name, own)) in named.iter().zip(self.names.iter().zip(&self.tensors)) {
            ensure!(
                name == own_name && t.shape() == own.shape(),
                "trainer",
                "parameter {name} {:?} does not match {own_name} {:?}",
                t.shape(),
                own.shape()
            );
        }
        for ((_, t), own) in named.iter().zip(self.tensors.iter_mut()) {
            *own = t.clone();
        }
        Ok(())
    }

    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }

    /// Registers every parameter on `g` as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        self.bind_inner(g, true, None)
    }

    /// Registers every parameter as a constant; used for inference.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Bound> {
        self.bind_inner(g, false, None)
    }

    /// Like [`ParamStore::bind`] but parameter `id` is taken from `var`.
    pub fn bind_with(&self, g: &mut Graph, id: ParamId, var: Var) -> Result<Bound> {
        self.bind_inner(g, false, Some((id, var)))
    }

    fn bind_inner(&self, g: &mut Graph, grad: bool, replace: Option<(ParamId, Var)>) -> Result<Bound> {
        let mut vars = Vec::with_capacity(self.tensors.len());
        for (i, t) in self.tensors.iter().enumerate() {
            match replace {
                Some((id, v)) if id.0 == i => vars.push(v),
                _ => vars.push(g.leaf(t.clone(), grad)?),
            }
        }
        Ok(Bound { vars })
    }
}

/// Parameters registered on one graph, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for every parameter after `g.backward`; parameters the loss
    /// does not reach get zeros.
    pub fn grads(&self, g: &Graph, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    }
}

/// Fan-in scaled normal ("msra") initialization.
pub fn msra<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = msra(rng, &[out_c, in_c, kernel, kernel], in_c * kernel * kernel);
        let weight = store.add(alloc::format!("{name}.weight"), w);
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros([out_c]));
        Conv {
            weight,
            bias,
            stride,
            pad,
        }
    }

    /// 3x3 convolution preserving spatial size.
    pub fn same3<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_c: usize, out_c: usize) -> Self {
        Self::new(store, rng, name, in_c, out_c, 3, 1, 1)
    }

    pub fn pointwise<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
    ) -> Self {
        Self::new(store, rng, name, in_c, out_c, 1, 1, 0)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)
    }
}

/// Transposed convolution producing exactly `stride`x the input size.
#[derive(Debug, Clone)]
pub struct Deconv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Deconv {
    /// Output size is `(H - 1) * stride - 2 * pad + kernel`, which equals
    /// `stride * H` iff `kernel - 2 * pad == stride`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        ensure!(
            stride >= 1 && kernel >= 2 * pad && kernel - 2 * pad == stride,
            "nn-ops",
            "deconv kernel {kernel}, stride {stride}, padding {pad} does not give an exact {stride}x upsampling"
        );
        let fan_in = (in_c * kernel * kernel / (stride * stride)).max(1);
        let w = msra(rng, &[in_c, out_c, kernel, kernel], fan_in);
        let weight = store.add(alloc::format!("{name}.weight"), w);
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros([out_c]));
        Ok(Deconv {
            weight,
            bias,
            stride,
            pad,
        })
    }

    /// Kernel 4, stride 2, padding 1.
    pub fn double<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_c: usize, out_c: usize) -> Self {
        Self::new(store, rng, name, in_c, out_c, 4, 2, 1).expect("4/2/1 is an exact doubling")
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.deconv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deconv_rejects_inexact_geometry() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Deconv::new(&mut store, &mut rng, "d", 2, 2, 3, 2, 1).is_err());
        assert!(Deconv::new(&mut store, &mut rng, "d", 2, 2, 4, 2, 1).is_ok());
        assert!(Deconv::new(&mut store, &mut rng, "d", 2, 2, 2, 2, 0).is_ok());
    }

    #[test]
    fn msra_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = msra(&mut rng, &[64, 32, 3, 3], 32 * 9);
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        assert!((var - 2.0 / 288.0).abs() < 0.1 * 2.0 / 288.0);
    }
}
