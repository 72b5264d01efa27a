use bfanet_core::{grad_check, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Random projection so that every output element contributes to the scalar.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let r = random(g.shape(y), seed ^ 0x5eed);
    let r = g.input(r)?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn check_seeds(name: &str, f: impl Fn(&mut Graph, Var, u64) -> Result<Var>, shape: &[usize]) {
    for seed in 0..10u64 {
        let x = random(shape, seed);
        let r = grad_check(|g, v| f(g, v, seed), &x, STEP, TOL).unwrap();
        assert!(r.passed, "{name} seed {seed}: {r:?}");
        assert!(r.excluded * 20 <= r.checked, "{name} seed {seed}: too many kinks {r:?}");
    }
}

#[test]
fn conv_identity_kernel() {
    let x = random(&[1, 1, 4, 5], 1);
    let mut g = Graph::new();
    let xv = g.input(x.clone()).unwrap();
    let w = g.input(Tensor::full([1, 1, 1, 1], 1.0)).unwrap();
    let b = g.input(Tensor::zeros([1])).unwrap();
    let y = g.conv2d(xv, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_all_ones() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full([1, 1, 3, 3], 1.0)).unwrap();
    let w = g.input(Tensor::full([1, 1, 3, 3], 1.0)).unwrap();
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).item(), 9.0);
}

#[test]
fn conv_matches_direct_loops() {
    let x = random(&[2, 3, 7, 6], 3);
    let w = random(&[4, 3, 3, 3], 4);
    let b = random(&[4], 5);
    let (stride, pad) = (2, 1);
    let mut g = Graph::new();
    let (xv, wv, bv) = (
        g.input(x.clone()).unwrap(),
        g.input(w.clone()).unwrap(),
        g.input(b.clone()).unwrap(),
    );
    let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
    let (oh, ow) = ((7 + 2 - 3) / 2 + 1, (6 + 2 - 3) / 2 + 1);
    assert_eq!(g.shape(y), &[2, 4, oh, ow]);
    for n in 0..2 {
        for o in 0..4 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..3 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy >= 0 && iy < 7 && ix >= 0 && ix < 6 {
                                    acc += w.at4(o, c, ki, kj) * x.at4(n, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    assert!((g.value(y).at4(n, o, oy, ox) - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_channel_mismatch_is_contract_violation() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([1, 2, 4, 4])).unwrap();
    let w = g.input(Tensor::zeros([1, 3, 3, 3])).unwrap();
    let err = g.conv2d(x, w, None, 1, 1).unwrap_err();
    assert_eq!(err.module(), "nn-ops");
}

#[test]
fn conv_grads_input_kernel_bias() {
    let w = random(&[4, 3, 3, 3], 77);
    let b = random(&[4], 78);
    check_seeds(
        "conv2d/x",
        |g, v, s| {
            let (wv, bv) = (g.input(w.clone())?, g.input(b.clone())?);
            let y = g.conv2d(v, wv, Some(bv), 1, 1)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 8, 8],
    );
    let x = random(&[2, 3, 8, 8], 79);
    check_seeds(
        "conv2d/w",
        |g, v, s| {
            let (xv, bv) = (g.input(x.clone())?, g.input(b.clone())?);
            let y = g.conv2d(xv, v, Some(bv), 2, 1)?;
            weighted_sum(g, y, s)
        },
        &[4, 3, 3, 3],
    );
    check_seeds(
        "conv2d/b",
        |g, v, s| {
            let (xv, wv) = (g.input(x.clone())?, g.input(w.clone())?);
            let y = g.conv2d(xv, wv, Some(v), 1, 0)?;
            weighted_sum(g, y, s)
        },
        &[4],
    );
}

#[test]
fn sum_sigmoid_conv_matches_finite_differences() {
    let k = random(&[1, 1, 3, 3], 11);
    let x = random(&[1, 1, 5, 5], 12);
    let r = grad_check(
        |g, v| {
            let kv = g.input(k.clone())?;
            let c = g.conv2d(v, kv, None, 1, 1)?;
            let s = g.sigmoid(c)?;
            g.sum(s)
        },
        &x,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(r.passed && r.excluded == 0, "{r:?}");
}

/// Scatter-add definition of the transposed convolution.
fn deconv_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (_, o, k, _) = w.dims4().unwrap();
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let mut out = Tensor::zeros([n, o, oh, ow]);
    for s in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    for co in 0..o {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ty = (y * stride + ki) as isize - pad as isize;
                                let tx = (xx * stride + kj) as isize - pad as isize;
                                if ty >= 0 && tx >= 0 && (ty as usize) < oh && (tx as usize) < ow {
                                    let idx = ((s * o + co) * oh + ty as usize) * ow + tx as usize;
                                    out.data_mut()[idx] += x.at4(s, ci, y, xx) * w.at4(ci, co, ki, kj);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn deconv_matches_scatter_oracle() {
    for (shape, wshape, pad) in [([1, 1, 2, 2], [1, 1, 2, 2], 0), ([2, 3, 4, 4], [3, 2, 4, 4], 1)] {
        let x = random(&shape, 21);
        let w = random(&wshape, 22);
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap());
        let y = g.deconv2d(xv, wv, None, 2, pad).unwrap();
        let expect = deconv_oracle(&x, &w, 2, pad);
        assert_eq!(g.shape(y), expect.shape());
        assert!(g.value(y).max_abs_diff(&expect) < 1e-12);
    }
}

#[test]
fn deconv_doubles_and_zero_kernel_gives_zero() {
    let mut g = Graph::new();
    let x = g.input(random(&[1, 4, 8, 8], 1)).unwrap();
    let w = g.input(Tensor::zeros([4, 4, 4, 4])).unwrap();
    let b = g.input(Tensor::zeros([4])).unwrap();
    let y = g.deconv2d(x, w, Some(b), 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 16, 16]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn deconv_grads() {
    let w = random(&[3, 2, 4, 4], 31);
    let b = random(&[2], 32);
    check_seeds(
        "deconv2d/x",
        |g, v, s| {
            let (wv, bv) = (g.input(w.clone())?, g.input(b.clone())?);
            let y = g.deconv2d(v, wv, Some(bv), 2, 1)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 4, 4],
    );
    let x = random(&[2, 3, 4, 4], 33);
    check_seeds(
        "deconv2d/w",
        |g, v, s| {
            let (xv, bv) = (g.input(x.clone())?, g.input(b.clone())?);
            let y = g.deconv2d(xv, v, Some(bv), 2, 1)?;
            weighted_sum(g, y, s)
        },
        &[3, 2, 4, 4],
    );
    check_seeds(
        "deconv2d/b",
        |g, v, s| {
            let (xv, wv) = (g.input(x.clone())?, g.input(w.clone())?);
            let y = g.deconv2d(xv, wv, Some(v), 2, 1)?;
            weighted_sum(g, y, s)
        },
        &[2],
    );
}

#[test]
fn upsample_nearest_examples() {
    let mut g = Graph::new();
    let x = g
        .param(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let same = g.upsample_nearest(x, 1).unwrap();
    assert_eq!(g.value(same), g.value(x));
    let y = g.upsample_nearest(x, 2).unwrap();
    #[rustfmt::skip]
    let expect = [
        1.0, 1.0, 2.0, 2.0,
        1.0, 1.0, 2.0, 2.0,
        3.0, 3.0, 4.0, 4.0,
        3.0, 3.0, 4.0, 4.0,
    ];
    assert_eq!(g.value(y).data(), &expect);
    let big = g.upsample_nearest(x, 3).unwrap();
    let s = g.sum(big).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 9.0));
}

#[test]
fn global_avg_pool_examples() {
    let mut g = Graph::new();
    let x = g
        .param(Tensor::new([1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]).unwrap())
        .unwrap();
    let v = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(v).data(), &[2.5, 7.0]);
    let s = g.sum(v).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.25));
}

#[test]
fn softmax_examples() {
    let run = |v: Vec<f64>| {
        let mut g = Graph::new();
        let n = v.len();
        let x = g.input(Tensor::new([1, n], v).unwrap()).unwrap();
        let y = g.softmax(x).unwrap();
        g.value(y).data().to_vec()
    };
    assert_eq!(run(vec![0.0; 4]), vec![0.25; 4]);
    let w = run(vec![0.0, 3f64.ln()]);
    assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
    let base = vec![0.3, -1.2, 2.5, 0.0];
    let shifted: Vec<f64> = base.iter().map(|v| v + 100.0).collect();
    let (a, b) = (run(base), run(shifted));
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn sigmoid_ce_examples() {
    let ce = |z: f64, y: f64| {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(z)).unwrap();
        let l = g.sigmoid_ce(x, &Tensor::scalar(y), 1.0).unwrap();
        g.value(l).item()
    };
    assert!((ce(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(ce(50.0, 1.0) < 1e-20);
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(0.0)).unwrap();
    assert!(g.sigmoid_ce(x, &Tensor::scalar(0.5), 1.0).is_err());
}

#[test]
fn pooling_and_pointwise_grads() {
    check_seeds(
        "relu",
        |g, v, s| {
            let y = g.relu(v)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 4, 4],
    );
    check_seeds(
        "sigmoid",
        |g, v, s| {
            let y = g.sigmoid(v)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 4, 4],
    );
    check_seeds(
        "max_pool2",
        |g, v, s| {
            let y = g.max_pool2(v)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 4, 6],
    );
    check_seeds(
        "avg_pool2",
        |g, v, s| {
            let y = g.avg_pool2(v)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 4, 6],
    );
    check_seeds(
        "upsample",
        |g, v, s| {
            let y = g.upsample_nearest(v, 4)?;
            weighted_sum(g, y, s)
        },
        &[2, 2, 3, 3],
    );
    check_seeds(
        "gap",
        |g, v, s| {
            let y = g.global_avg_pool(v)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 4, 5],
    );
    check_seeds(
        "softmax",
        |g, v, s| {
            let y = g.softmax(v)?;
            weighted_sum(g, y, s)
        },
        &[3, 6],
    );
    check_seeds(
        "sigmoid_ce",
        |g, v, s| {
            let labels = random(g.shape(v), s + 1000).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
            let z = g.scale(v, 4.0)?;
            g.sigmoid_ce(z, &labels, 1.0)
        },
        &[2, 1, 4, 4],
    );
    check_seeds(
        "sigmoid_ce/pos_weight",
        |g, v, s| {
            let labels = random(g.shape(v), s + 1000).map(|x| if x > 0.3 { 1.0 } else { 0.0 });
            g.sigmoid_ce(v, &labels, 3.0)
        },
        &[2, 1, 4, 4],
    );
}

#[test]
fn channel_ops_grads() {
    let w = random(&[2, 3], 5);
    check_seeds(
        "channel_mul/x",
        |g, v, s| {
            let wv = g.input(w.clone())?;
            let y = g.channel_mul(v, wv)?;
            weighted_sum(g, y, s)
        },
        &[2, 3, 4, 4],
    );
    let x = random(&[2, 3, 4, 4], 6);
    check_seeds(
        "channel_mul/w",
        |g, v, s| {
            let xv = g.input(x.clone())?;
            let y = g.channel_mul(xv, v)?;
            weighted_sum(g, y, s)
        },
        &[2, 3],
    );
    check_seeds(
        "concat+slice",
        |g, v, s| {
            let other = g.input(random(&[2, 2, 3, 3], 8))?;
            let c = g.concat(&[v, other, v])?;
            let sl = g.slice(c, 1, 4)?;
            weighted_sum(g, sl, s)
        },
        &[2, 3, 3, 3],
    );
    check_seeds(
        "add+mul",
        |g, v, s| {
            let a = g.add(v, v)?;
            let m = g.mul(a, v)?;
            weighted_sum(g, m, s)
        },
        &[2, 5],
    );
}

#[test]
fn fan_out_accumulates() {
    let mut g = Graph::new();
    let x = g.param(random(&[3, 4], 2)).unwrap();
    let a = g.sum(x).unwrap();
    let b = g.sum(x).unwrap();
    let t = g.add(a, b).unwrap();
    g.backward(t).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 2.0));
}

#[test]
fn backward_contract_violations() {
    let mut g = Graph::new();
    let x = g.param(random(&[2, 2], 1)).unwrap();
    assert!(g.backward(x).is_err());
    let mut other = Graph::new();
    let y = other.param(Tensor::scalar(1.0)).unwrap();
    assert!(g.backward(y).is_err());
    assert!(g.relu(y).is_err());
}

#[test]
fn non_finite_is_an_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(1e300)).unwrap();
    assert!(g.mul(x, x).is_err());
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut g = Graph::new();
        let x = g.param(random(&[2, 3, 8, 8], 4)).unwrap();
        let w = g.param(random(&[5, 3, 3, 3], 5)).unwrap();
        let c = g.conv2d(x, w, None, 1, 1).unwrap();
        let p = g.max_pool2(c).unwrap();
        let s = g.sigmoid(p).unwrap();
        let l = g.sum(s).unwrap();
        g.backward(l).unwrap();
        (g.value(s).clone(), g.grad(w).unwrap())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn concat_then_slice_is_identity(a in 1usize..4, b in 1usize..4, seed in 0u64..1000) {
        let ta = random(&[2, a, 3, 2], seed);
        let tb = random(&[2, b, 3, 2], seed + 1);
        let mut g = Graph::new();
        let (va, vb) = (g.input(ta.clone()).unwrap(), g.input(tb.clone()).unwrap());
        let c = g.concat(&[va, vb]).unwrap();
        let sa = g.slice(c, 0, a).unwrap();
        let sb = g.slice(c, a, b).unwrap();
        prop_assert_eq!(g.value(sa), &ta);
        prop_assert_eq!(g.value(sb), &tb);
    }

    #[test]
    fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..12), k in -200.0f64..200.0) {
        let n = v.len();
        let mut g = Graph::new();
        let x = g.input(Tensor::new([1, n], v.clone()).unwrap()).unwrap();
        let y = g.softmax(x).unwrap();
        let shifted = g.input(Tensor::new([1, n], v.iter().map(|a| a + k).collect()).unwrap()).unwrap();
        let ys = g.softmax(shifted).unwrap();
        let w = g.value(y).data();
        prop_assert!(w.iter().all(|&p| p > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let argmax = |w: &[f64]| w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(argmax(w), argmax(g.value(ys).data()));
    }

    #[test]
    fn sigmoid_ce_is_nonnegative(z in proptest::collection::vec(-60.0f64..60.0, 1..16), bits in any::<u16>()) {
        let n = z.len();
        let labels = Tensor::from_fn([n], |i| ((bits >> (i % 16)) & 1) as f64);
        let mut g = Graph::new();
        let x = g.input(Tensor::new([n], z).unwrap()).unwrap();
        let l = g.sigmoid_ce(x, &labels, 1.0).unwrap();
        prop_assert!(g.value(l).item() >= 0.0);
    }
}
