//! Dense kernels shared by the primitives: row-major GEMM and im2col
//! convolution.

/// `c = op(a) * op(b) + beta * c` for row-major matrices, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored in its
/// untransposed layout (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: slice lengths are asserted above and the strides describe
    // exactly those row-major layouts.
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

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kw) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

pub(crate) fn im2col(g: &ConvGeom, input: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let l = oh * ow;
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        dst_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *d = if ix < 0 || ix >= g.width as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add of `cols` back into an input-shaped buffer.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f64], out: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let l = oh * ow;
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    batch: usize,
    out_channels: usize,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (k, l) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; k * l];
    let mut out = vec![0.0; batch * out_channels * l];
    for n in 0..batch {
        im2col(g, &input[n * g.sample_len()..(n + 1) * g.sample_len()], &mut cols);
        let dst = &mut out[n * out_channels * l..(n + 1) * out_channels * l];
        gemm(out_channels, k, l, weight, false, &cols, false, dst, 0.0);
        if let Some(b) = bias {
            for (o, row) in dst.chunks_mut(l).enumerate() {
                row.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    out_channels: usize,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads {
    let (k, l) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; k * l];
    let mut d_input = need_input.then(|| vec![0.0; batch * g.sample_len()]);
    let mut d_weight = need_weight.then(|| vec![0.0; out_channels * k]);
    let mut d_bias = need_bias.then(|| vec![0.0; out_channels]);
    for n in 0..batch {
        let gout = &grad_out[n * out_channels * l..(n + 1) * out_channels * l];
        if let Some(dw) = d_weight.as_mut() {
            im2col(g, &input[n * g.sample_len()..(n + 1) * g.sample_len()], &mut cols);
            gemm(out_channels, l, k, gout, false, &cols, true, dw, 1.0);
        }
        if let Some(db) = d_bias.as_mut() {
            for (o, row) in gout.chunks(l).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dx) = d_input.as_mut() {
            gemm(k, out_channels, l, weight, true, gout, false, &mut cols, 0.0);
            col2im(g, &cols, &mut dx[n * g.sample_len()..(n + 1) * g.sample_len()]);
        }
    }
    ConvGrads { input: d_input, weight: d_weight, bias: d_bias }
}
