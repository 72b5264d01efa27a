//! Reverse-mode automatic differentiation over a dynamically recorded graph.
//!
//! Every op appends a node holding its output value, so recording order is a
//! topological order and [`Graph::backward`] only has to walk the node list
//! in reverse once. Gradients fan in additively.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{ensure, Error, Result};
use crate::kernels::{self, Window};
use crate::tensor::Tensor;

static NEXT_GRAPH_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a node of a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    Deconv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    AvgPool2(usize),
    Upsample {
        x: usize,
        factor: usize,
    },
    GlobalAvgPool(usize),
    Softmax(usize),
    ChannelMul {
        x: usize,
        w: usize,
    },
    Concat(Vec<usize>),
    Slice {
        x: usize,
        start: usize,
    },
    Sum(usize),
    SigmoidCe {
        logits: usize,
        labels: Vec<f64>,
        pos_weight: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records a forward computation and replays it backwards.
#[derive(Debug)]
pub struct Graph {
    id: usize,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape into (outer, size of dim 1, inner) for channel-axis ops.
fn split_dim1(shape: &[usize]) -> (usize, usize, usize) {
    let inner: usize = shape[2..].iter().product();
    (shape[0], shape[1], inner)
}

fn out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        ensure!(
            v.graph == self.id && v.index < self.nodes.len(),
            "tensor-core",
            "tensor handle does not belong to this graph"
        );
        Ok(v.index)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Registers a leaf tensor.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(Op::Leaf, t, requires_grad, "leaf")
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    /// Leaf that is treated as a constant.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "tensor handle does not belong to this graph");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last [`Graph::backward`] call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if v.graph != self.id {
            return None;
        }
        let g = self.grads.get(v.index)?.as_ref()?;
        Tensor::new(self.nodes[v.index].value.shape().to_vec(), g.clone()).ok()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        ensure!(
            ta.shape() == tb.shape(),
            "nn-ops",
            "add: shapes {:?} and {:?} differ",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::Add(ia, ib), out, rg, "add")
    }

    /// Element-wise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        ensure!(
            ta.shape() == tb.shape(),
            "nn-ops",
            "mul: shapes {:?} and {:?} differ",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::Mul(ia, ib), out, rg, "mul")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|v| v * k);
        let rg = self.rg(ia);
        self.push(Op::Scale(ia, k), out, rg, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|v| v.max(0.0));
        let rg = self.rg(ia);
        self.push(Op::Relu(ia), out, rg, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(kernels::sigmoid);
        let rg = self.rg(ia);
        self.push(Op::Sigmoid(ia), out, rg, "sigmoid")
    }

    /// Cross-correlation of `x: [N, C, H, W]` with `w: [O, C, k, k]` plus an
    /// optional per-channel bias `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let (n, c, h, wd) = self.nodes[ix].value.dims4()?;
        let (o, wc, kh, kw) = self.nodes[iw].value.dims4()?;
        ensure!(stride >= 1, "nn-ops", "conv2d: stride must be positive");
        ensure!(kh == kw, "nn-ops", "conv2d: only square kernels are supported");
        ensure!(
            wc == c,
            "nn-ops",
            "conv2d: kernel expects {wc} input channels, input has {c}"
        );
        ensure!(
            h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "nn-ops",
            "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
            h + 2 * pad,
            wd + 2 * pad
        );
        if let Some(ib) = ib {
            ensure!(
                self.nodes[ib].value.shape() == [o],
                "nn-ops",
                "conv2d: bias must have shape [{o}]"
            );
        }
        let win = Window {
            channels: c,
            height: h,
            width: wd,
            kernel: kh,
            stride,
            pad,
            out_h: out_size(h, kh, stride, pad),
            out_w: out_size(wd, kw, stride, pad),
        };
        let (rows, p) = (win.rows(), win.cols());
        let mut out = vec![0.0; n * o * p];
        let mut col = if win.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; rows * p]
        };
        let xd = self.nodes[ix].value.data();
        let wdata = self.nodes[iw].value.data();
        for s in 0..n {
            let img = &xd[s * c * h * wd..(s + 1) * c * h * wd];
            let src: &[f64] = if win.is_pointwise() {
                img
            } else {
                kernels::im2col(img, &win, &mut col);
                &col
            };
            let dst = &mut out[s * o * p..(s + 1) * o * p];
            kernels::gemm(o, rows, p, wdata, rows, 1, src, p, 1, 0.0, dst);
            if let Some(ib) = ib {
                let bias = self.nodes[ib].value.data();
                for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias[oc]);
                }
            }
        }
        let out = Tensor::new([n, o, win.out_h, win.out_w], out)?;
        let rg = self.rg(ix) || self.rg(iw) || ib.is_some_and(|i| self.rg(i));
        self.push(
            Op::Conv2d {
                x: ix,
                w: iw,
                b: ib,
                stride,
                pad,
            },
            out,
            rg,
            "conv2d",
        )
    }

    /// Transposed convolution of `x: [N, C, H, W]` with `w: [C, O, k, k]`.
    /// Output spatial size is `(H - 1) * stride - 2 * pad + k`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let (n, c, h, wd) = self.nodes[ix].value.dims4()?;
        let (wc, o, kh, kw) = self.nodes[iw].value.dims4()?;
        ensure!(stride >= 1, "nn-ops", "deconv2d: stride must be positive");
        ensure!(kh == kw, "nn-ops", "deconv2d: only square kernels are supported");
        ensure!(
            wc == c,
            "nn-ops",
            "deconv2d: kernel expects {wc} input channels, input has {c}"
        );
        ensure!(
            (h - 1) * stride + kh > 2 * pad && (wd - 1) * stride + kw > 2 * pad,
            "nn-ops",
            "deconv2d: padding {pad} leaves no output"
        );
        if let Some(ib) = ib {
            ensure!(
                self.nodes[ib].value.shape() == [o],
                "nn-ops",
                "deconv2d: bias must have shape [{o}]"
            );
        }
        let oh = (h - 1) * stride + kh - 2 * pad;
        let ow = (wd - 1) * stride + kw - 2 * pad;
        let win = Window {
            channels: o,
            height: oh,
            width: ow,
            kernel: kh,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let (rows, p) = (win.rows(), win.cols());
        let mut out = vec![0.0; n * o * oh * ow];
        let mut col = vec![0.0; rows * p];
        let xd = self.nodes[ix].value.data();
        let wdata = self.nodes[iw].value.data();
        for s in 0..n {
            let img = &xd[s * c * p..(s + 1) * c * p];
            kernels::gemm(rows, c, p, wdata, 1, rows, img, p, 1, 0.0, &mut col);
            let dst = &mut out[s * o * oh * ow..(s + 1) * o * oh * ow];
            kernels::col2im(&col, &win, dst);
            if let Some(ib) = ib {
                let bias = self.nodes[ib].value.data();
                for (oc, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias[oc]);
                }
            }
        }
        let out = Tensor::new([n, o, oh, ow], out)?;
        let rg = self.rg(ix) || self.rg(iw) || ib.is_some_and(|i| self.rg(i));
        self.push(
            Op::Deconv2d {
                x: ix,
                w: iw,
                b: ib,
                stride,
                pad,
            },
            out,
            rg,
            "deconv2d",
        )
    }

    fn pool_dims(&self, i: usize, name: &str) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = self.nodes[i].value.dims4()?;
        ensure!(
            h % 2 == 0 && w % 2 == 0,
            "nn-ops",
            "{name}: spatial dims {h}x{w} must be even"
        );
        Ok((n, c, h, w))
    }

    /// 2x2 max-pooling with stride 2. Ties route the gradient to the first maximum.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (n, c, h, w) = self.pool_dims(ix, "max_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * y + dy) * w + 2 * xx + dx;
                        if xd[j] > xd[best] {
                            best = j;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], out)?;
        let rg = self.rg(ix);
        self.push(Op::MaxPool2 { x: ix, argmax }, out, rg, "max_pool2")
    }

    /// 2x2 average-pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (n, c, h, w) = self.pool_dims(ix, "avg_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let j = base + 2 * y * w + 2 * xx;
                    out.push(0.25 * (xd[j] + xd[j + 1] + xd[j + w] + xd[j + w + 1]));
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], out)?;
        let rg = self.rg(ix);
        self.push(Op::AvgPool2(ix), out, rg, "avg_pool2")
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        ensure!(factor >= 1, "nn-ops", "upsample_nearest: factor must be at least 1");
        let (n, c, h, w) = self.nodes[ix].value.dims4()?;
        let (oh, ow) = (h * factor, w * factor);
        let xd = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            for y in 0..oh {
                let row = &src[(y / factor) * w..(y / factor + 1) * w];
                for xx in 0..ow {
                    out.push(row[xx / factor]);
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], out)?;
        let rg = self.rg(ix);
        self.push(Op::Upsample { x: ix, factor }, out, rg, "upsample_nearest")
    }

    /// Per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (n, c, h, w) = self.nodes[ix].value.dims4()?;
        let hw = h * w;
        let out: Vec<f64> = self.nodes[ix]
            .value
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::new([n, c], out)?;
        let rg = self.rg(ix);
        self.push(Op::GlobalAvgPool(ix), out, rg, "global_avg_pool")
    }

    /// Row-wise softmax over the last axis of a `[N, n]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = self.nodes[ix].value.shape().to_vec();
        ensure!(
            shape.len() == 2,
            "nn-ops",
            "softmax: expected a [N, n] tensor, got {shape:?}"
        );
        let mut out = Vec::with_capacity(shape[0] * shape[1]);
        for row in self.nodes[ix].value.data().chunks(shape[1]) {
            out.extend(softmax_row(row));
        }
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(ix);
        self.push(Op::Softmax(ix), out, rg, "softmax")
    }

    /// Channel-wise product: scales each `[H, W]` plane of `x: [N, C, H, W]`
    /// by the matching entry of `w: [N, C]`.
    pub fn channel_mul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let (n, c, h, wd) = self.nodes[ix].value.dims4()?;
        ensure!(
            self.nodes[iw].value.shape() == [n, c],
            "nn-ops",
            "channel_mul: weights must have shape [{n}, {c}], got {:?}",
            self.nodes[iw].value.shape()
        );
        let hw = h * wd;
        let weights = self.nodes[iw].value.data();
        let out: Vec<f64> = self.nodes[ix]
            .value
            .data()
            .chunks(hw)
            .zip(weights)
            .flat_map(|(plane, &k)| plane.iter().map(move |v| v * k))
            .collect();
        let out = Tensor::new([n, c, h, wd], out)?;
        let rg = self.rg(ix) || self.rg(iw);
        self.push(Op::ChannelMul { x: ix, w: iw }, out, rg, "channel_mul")
    }

    /// Concatenation along axis 1 (channels).
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        ensure!(!xs.is_empty(), "nn-ops", "concat: no inputs");
        let idx: Vec<usize> = xs.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let first = self.nodes[idx[0]].value.shape().to_vec();
        ensure!(first.len() >= 2, "nn-ops", "concat: inputs need at least 2 axes");
        let mut channels = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            ensure!(
                s.len() == first.len() && s[0] == first[0] && s[2..] == first[2..],
                "nn-ops",
                "concat: shape {s:?} incompatible with {first:?}"
            );
            channels += s[1];
        }
        let (outer, _, inner) = split_dim1(&first);
        let mut out = Vec::with_capacity(outer * channels * inner);
        for o in 0..outer {
            for &i in &idx {
                let t = &self.nodes[i].value;
                let block = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[1] = channels;
        let out = Tensor::new(shape, out)?;
        let rg = idx.iter().any(|&i| self.rg(i));
        self.push(Op::Concat(idx), out, rg, "concat")
    }

    /// Takes `len` entries of axis 1 starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = self.nodes[ix].value.shape().to_vec();
        ensure!(
            shape.len() >= 2 && len >= 1 && start + len <= shape[1],
            "nn-ops",
            "slice: range {start}..{} out of bounds for shape {shape:?}",
            start + len
        );
        let (outer, ch, inner) = split_dim1(&shape);
        let src = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ch * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[1] = len;
        let out = Tensor::new(oshape, out)?;
        let rg = self.rg(ix);
        self.push(Op::Slice { x: ix, start }, out, rg, "slice")
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s = self.nodes[ix].value.data().iter().sum();
        let rg = self.rg(ix);
        self.push(Op::Sum(ix), Tensor::scalar(s), rg, "sum")
    }

    /// Mean sigmoid cross-entropy between `logits` and binary `labels`.
    ///
    /// `pos_weight` scales the positive-class term; 1.0 gives plain
    /// cross-entropy.
    pub fn sigmoid_ce(&mut self, logits: Var, labels: &Tensor, pos_weight: f64) -> Result<Var> {
        let il = self.idx(logits)?;
        let z = &self.nodes[il].value;
        ensure!(
            z.shape() == labels.shape(),
            "nn-ops",
            "sigmoid_ce: logits {:?} vs labels {:?}",
            z.shape(),
            labels.shape()
        );
        ensure!(
            labels.data().iter().all(|&y| y == 0.0 || y == 1.0),
            "nn-ops",
            "sigmoid_ce: labels must be 0 or 1"
        );
        ensure!(pos_weight > 0.0, "nn-ops", "sigmoid_ce: pos_weight must be positive");
        let total: f64 = z
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&z, &y)| pos_weight * y * kernels::softplus(-z) + (1.0 - y) * kernels::softplus(z))
            .sum();
        let loss = total / z.len() as f64;
        let rg = self.rg(il);
        self.push(
            Op::SigmoidCe {
                logits: il,
                labels: labels.data().to_vec(),
                pos_weight,
            },
            Tensor::scalar(loss),
            rg,
            "sigmoid_ce",
        )
    }

    /// Back-propagates from a scalar `loss`, populating the gradient of every
    /// leaf registered with `requires_grad`. Gradients of earlier calls are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.idx(loss)?;
        ensure!(
            self.nodes[il].value.is_scalar(),
            "tensor-core",
            "backward: loss must be a scalar, got shape {:?}",
            self.nodes[il].value.shape()
        );
        self.grads = vec![None; self.nodes.len()];
        self.grads[il] = Some(vec![1.0]);
        let Graph { nodes, grads, .. } = self;
        for i in (0..=il).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            backprop_node(nodes, grads, i, &g);
        }
        Ok(())
    }
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&v| libm::exp(v - m)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], j: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].requires_grad {
        return None;
    }
    Some(grads[j].get_or_insert_with(|| vec![0.0; nodes[j].value.len()]))
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            for j in [a, b] {
                if let Some(s) = slot(nodes, grads, j) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
            }
        }
        &Op::Mul(a, b) => {
            let (va, vb) = (nodes[a].value.data(), nodes[b].value.data());
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..g.len() {
                    s[k] += g[k] * vb[k];
                }
            }
            if let Some(s) = slot(nodes, grads, b) {
                for k in 0..g.len() {
                    s[k] += g[k] * va[k];
                }
            }
        }
        &Op::Scale(a, k) => {
            if let Some(s) = slot(nodes, grads, a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += k * g);
            }
        }
        &Op::Relu(a) => {
            let x = nodes[a].value.data();
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..g.len() {
                    if x[k] > 0.0 {
                        s[k] += g[k];
                    }
                }
            }
        }
        &Op::Sigmoid(a) => {
            let y = out.data();
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..g.len() {
                    s[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }
        }
        &Op::Conv2d { x, w, b, stride, pad } => conv_backward(nodes, grads, g, x, w, b, stride, pad),
        &Op::Deconv2d { x, w, b, stride, pad } => deconv_backward(nodes, grads, g, x, w, b, stride, pad),
        Op::MaxPool2 { x, argmax } => {
            if let Some(s) = slot(nodes, grads, *x) {
                for (k, &src) in argmax.iter().enumerate() {
                    s[src] += g[k];
                }
            }
        }
        &Op::AvgPool2(x) => {
            let (_, _, h, w) = nodes[x].value.dims4().expect("nchw");
            let (oh, ow) = (h / 2, w / 2);
            if let Some(s) = slot(nodes, grads, x) {
                for plane in 0..g.len() / (oh * ow) {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let v = 0.25 * g[(plane * oh + y) * ow + xx];
                            let j = plane * h * w + 2 * y * w + 2 * xx;
                            s[j] += v;
                            s[j + 1] += v;
                            s[j + w] += v;
                            s[j + w + 1] += v;
                        }
                    }
                }
            }
        }
        &Op::Upsample { x, factor } => {
            let (_, _, h, w) = nodes[x].value.dims4().expect("nchw");
            let (oh, ow) = (h * factor, w * factor);
            if let Some(s) = slot(nodes, grads, x) {
                for plane in 0..s.len() / (h * w) {
                    for y in 0..oh {
                        for xx in 0..ow {
                            s[plane * h * w + (y / factor) * w + xx / factor] += g[(plane * oh + y) * ow + xx];
                        }
                    }
                }
            }
        }
        &Op::GlobalAvgPool(x) => {
            let (_, _, h, w) = nodes[x].value.dims4().expect("nchw");
            let hw = h * w;
            if let Some(s) = slot(nodes, grads, x) {
                for (plane, chunk) in s.chunks_mut(hw).enumerate() {
                    let v = g[plane] / hw as f64;
                    chunk.iter_mut().for_each(|s| *s += v);
                }
            }
        }
        &Op::Softmax(x) => {
            let n = out.shape()[1];
            let y = out.data();
            if let Some(s) = slot(nodes, grads, x) {
                for r in 0..y.len() / n {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..n {
                        s[r * n + k] += yr[k] * (gr[k] - dot);
                    }
                }
            }
        }
        &Op::ChannelMul { x, w } => {
            let hw: usize = nodes[x].value.shape()[2..].iter().product();
            let (xv, wv) = (nodes[x].value.data(), nodes[w].value.data());
            if let Some(s) = slot(nodes, grads, x) {
                for (plane, chunk) in s.chunks_mut(hw).enumerate() {
                    let k = wv[plane];
                    chunk.iter_mut().zip(&g[plane * hw..]).for_each(|(s, g)| *s += k * g);
                }
            }
            if let Some(s) = slot(nodes, grads, w) {
                for (plane, sw) in s.iter_mut().enumerate() {
                    let r = plane * hw..(plane + 1) * hw;
                    *sw += xv[r.clone()].iter().zip(&g[r]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        Op::Concat(inputs) => {
            let (outer, ch, inner) = split_dim1(out.shape());
            let mut offset = 0;
            for &j in inputs {
                let cj = nodes[j].value.shape()[1];
                if let Some(s) = slot(nodes, grads, j) {
                    for o in 0..outer {
                        let src = &g[(o * ch + offset) * inner..(o * ch + offset + cj) * inner];
                        s[o * cj * inner..(o + 1) * cj * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(s, g)| *s += g);
                    }
                }
                offset += cj;
            }
        }
        &Op::Slice { x, start } => {
            let (outer, len, inner) = split_dim1(out.shape());
            let ch = nodes[x].value.shape()[1];
            if let Some(s) = slot(nodes, grads, x) {
                for o in 0..outer {
                    let base = (o * ch + start) * inner;
                    s[base..base + len * inner]
                        .iter_mut()
                        .zip(&g[o * len * inner..(o + 1) * len * inner])
                        .for_each(|(s, g)| *s += g);
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                s.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        Op::SigmoidCe {
            logits,
            labels,
            pos_weight,
        } => {
            let z = nodes[*logits].value.data();
            let scale = g[0] / z.len() as f64;
            if let Some(s) = slot(nodes, grads, *logits) {
                for k in 0..z.len() {
                    let p = kernels::sigmoid(z[k]);
                    let y = labels[k];
                    s[k] += scale * (pos_weight * y * (p - 1.0) + (1.0 - y) * p);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: usize,
    w: usize,
    b: Option<usize>,
    stride: usize,
    pad: usize,
) {
    let (n, c, h, wd) = nodes[x].value.dims4().expect("nchw");
    let (o, _, k, _) = nodes[w].value.dims4().expect("nchw");
    let win = Window {
        channels: c,
        height: h,
        width: wd,
        kernel: k,
        stride,
        pad,
        out_h: out_size(h, k, stride, pad),
        out_w: out_size(wd, k, stride, pad),
    };
    let (rows, p) = (win.rows(), win.cols());
    let xd = nodes[x].value.data();
    let wdata = nodes[w].value.data();
    if let Some(b) = b {
        if let Some(s) = slot(nodes, grads, b) {
            for (j, chunk) in g.chunks(p).enumerate() {
                s[j % o] += chunk.iter().sum::<f64>();
            }
        }
    }
    let pointwise = win.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![0.0; rows * p] };
    if let Some(s) = slot(nodes, grads, w) {
        for sidx in 0..n {
            let img = &xd[sidx * c * h * wd..(sidx + 1) * c * h * wd];
            let src: &[f64] = if pointwise {
                img
            } else {
                kernels::im2col(img, &win, &mut col);
                &col
            };
            let go = &g[sidx * o * p..(sidx + 1) * o * p];
            kernels::gemm(o, p, rows, go, p, 1, src, 1, p, 1.0, s);
        }
    }
    if let Some(s) = slot(nodes, grads, x) {
        for sidx in 0..n {
            let go = &g[sidx * o * p..(sidx + 1) * o * p];
            let dst = &mut s[sidx * c * h * wd..(sidx + 1) * c * h * wd];
            if pointwise {
                kernels::gemm(rows, o, p, wdata, 1, rows, go, p, 1, 1.0, dst);
            } else {
                kernels::gemm(rows, o, p, wdata, 1, rows, go, p, 1, 0.0, &mut col);
                kernels::col2im(&col, &win, dst);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn deconv_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: usize,
    w: usize,
    b: Option<usize>,
    stride: usize,
    pad: usize,
) {
    let (n, c, h, wd) = nodes[x].value.dims4().expect("nchw");
    let (_, o, k, _) = nodes[w].value.dims4().expect("nchw");
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let win = Window {
        channels: o,
        height: oh,
        width: ow,
        kernel: k,
        stride,
        pad,
        out_h: h,
        out_w: wd,
    };
    let (rows, p) = (win.rows(), win.cols());
    let out_plane = oh * ow;
    if let Some(b) = b {
        if let Some(s) = slot(nodes, grads, b) {
            for (j, chunk) in g.chunks(out_plane).enumerate() {
                s[j % o] += chunk.iter().sum::<f64>();
            }
        }
    }
    let need_w = nodes[w].requires_grad;
    let need_x = nodes[x].requires_grad;
    if !need_w && !need_x {
        return;
    }
    let xd = nodes[x].value.data();
    let wdata = nodes[w].value.data();
    let mut gcol = vec![0.0; rows * p];
    for sidx in 0..n {
        kernels::im2col(&g[sidx * o * out_plane..(sidx + 1) * o * out_plane], &win, &mut gcol);
        if let Some(s) = slot(nodes, grads, w) {
            let img = &xd[sidx * c * p..(sidx + 1) * c * p];
            kernels::gemm(c, p, rows, img, p, 1, &gcol, 1, p, 1.0, s);
        }
        if let Some(s) = slot(nodes, grads, x) {
            let dst = &mut s[sidx * c * p..(sidx + 1) * c * p];
            kernels::gemm(c, rows, p, wdata, rows, 1, &gcol, p, 1, 1.0, dst);
        }
    }
}
