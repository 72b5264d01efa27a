//! Raw numeric kernels shared by the graph ops. Everything here works on
//! plain slices; shape checking happens one level up.

/// Geometry of a sliding window over one `c x h x w` image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// True when the column matrix is the image itself.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c = a * b + beta * c` with arbitrary strides, row-major `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn im2col(img: &[f64], win: &Window, col: &mut [f64]) {
    let Window {
        channels,
        height,
        width,
        kernel,
        stride,
        pad,
        out_h,
        out_w,
    } = *win;
    let p = out_h * out_w;
    for c in 0..channels {
        let plane = &img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let line = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * width..(iy as usize + 1) * width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *v = if ix < 0 || ix >= width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `img`.
pub(crate) fn col2im(col: &[f64], win: &Window, img: &mut [f64]) {
    let Window {
        channels,
        height,
        width,
        kernel,
        stride,
        pad,
        out_h,
        out_w,
    } = *win;
    let p = out_h * out_w;
    for c in 0..channels {
        let plane = &mut img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < width as isize {
                            dst[ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
