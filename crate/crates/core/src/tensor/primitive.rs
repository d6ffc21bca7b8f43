//! The closed set of differentiable primitives and their forward and
//! vector-Jacobian rules.

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Primitive kind without attributes, used for reporting and enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Conv2d,
    Linear,
    Relu,
    Sigmoid,
    Softmax,
    L2Normalize,
    ChannelMean,
    ChannelStd,
    GlobalAvgPool,
    Concat,
    Add,
    Mul,
    Scale,
    Matmul,
    Transpose,
    Sum,
    Mean,
    Square,
    Log,
    Exp,
    Slice,
    BroadcastChannel,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 22] = [
        PrimitiveKind::Conv2d,
        PrimitiveKind::Linear,
        PrimitiveKind::Relu,
        PrimitiveKind::Sigmoid,
        PrimitiveKind::Softmax,
        PrimitiveKind::L2Normalize,
        PrimitiveKind::ChannelMean,
        PrimitiveKind::ChannelStd,
        PrimitiveKind::GlobalAvgPool,
        PrimitiveKind::Concat,
        PrimitiveKind::Add,
        PrimitiveKind::Mul,
        PrimitiveKind::Scale,
        PrimitiveKind::Matmul,
        PrimitiveKind::Transpose,
        PrimitiveKind::Sum,
        PrimitiveKind::Mean,
        PrimitiveKind::Square,
        PrimitiveKind::Log,
        PrimitiveKind::Exp,
        PrimitiveKind::Slice,
        PrimitiveKind::BroadcastChannel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Conv2d => "conv2d",
            PrimitiveKind::Linear => "linear",
            PrimitiveKind::Relu => "relu",
            PrimitiveKind::Sigmoid => "sigmoid",
            PrimitiveKind::Softmax => "softmax",
            PrimitiveKind::L2Normalize => "l2_normalize",
            PrimitiveKind::ChannelMean => "channel_mean",
            PrimitiveKind::ChannelStd => "channel_std",
            PrimitiveKind::GlobalAvgPool => "global_avg_pool",
            PrimitiveKind::Concat => "concat",
            PrimitiveKind::Add => "add",
            PrimitiveKind::Mul => "mul",
            PrimitiveKind::Scale => "scale",
            PrimitiveKind::Matmul => "matmul",
            PrimitiveKind::Transpose => "transpose",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::Mean => "mean",
            PrimitiveKind::Square => "square",
            PrimitiveKind::Log => "log",
            PrimitiveKind::Exp => "exp",
            PrimitiveKind::Slice => "slice",
            PrimitiveKind::BroadcastChannel => "broadcast_channel",
        }
    }
}

impl std::fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A primitive together with its kind-specific attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Inputs: `x` (NCHW), `w` (OIHW), optional bias `b` (O).
    Conv2d {
        stride: usize,
        padding: usize,
    },
    /// Inputs: `x` (B x in), `w` (out x in), optional bias (out). `y = x wᵀ + b`.
    Linear,
    Relu,
    Sigmoid,
    Softmax {
        axis: usize,
    },
    /// Norms below `1e-12` are clamped.
    L2Normalize {
        axis: usize,
    },
    /// NCHW -> NC
    ChannelMean,
    /// NCHW -> NC, biased variance, `sqrt(var + eps)`.
    ChannelStd {
        eps: f64,
    },
    /// NCHW -> NC
    GlobalAvgPool,
    Concat {
        axis: usize,
    },
    Add,
    Mul,
    /// `factor * x + offset`
    Scale {
        factor: f64,
        offset: f64,
    },
    Matmul,
    Transpose,
    Sum,
    Mean,
    Square,
    Log,
    Exp,
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    /// NC -> NCHW
    BroadcastChannel {
        height: usize,
        width: usize,
    },
}

pub(crate) const NORM_FLOOR: f64 = 1e-12;

pub(crate) struct Forward {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub aux: Vec<f64>,
}

fn fwd(shape: Vec<usize>, data: Vec<f64>) -> Result<Forward> {
    Ok(Forward { shape, data, aux: Vec::new() })
}

/// (outer, len, inner) split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Conv2d { .. } => PrimitiveKind::Conv2d,
            Primitive::Linear => PrimitiveKind::Linear,
            Primitive::Relu => PrimitiveKind::Relu,
            Primitive::Sigmoid => PrimitiveKind::Sigmoid,
            Primitive::Softmax { .. } => PrimitiveKind::Softmax,
            Primitive::L2Normalize { .. } => PrimitiveKind::L2Normalize,
            Primitive::ChannelMean => PrimitiveKind::ChannelMean,
            Primitive::ChannelStd { .. } => PrimitiveKind::ChannelStd,
            Primitive::GlobalAvgPool => PrimitiveKind::GlobalAvgPool,
            Primitive::Concat { .. } => PrimitiveKind::Concat,
            Primitive::Add => PrimitiveKind::Add,
            Primitive::Mul => PrimitiveKind::Mul,
            Primitive::Scale { .. } => PrimitiveKind::Scale,
            Primitive::Matmul => PrimitiveKind::Matmul,
            Primitive::Transpose => PrimitiveKind::Transpose,
            Primitive::Sum => PrimitiveKind::Sum,
            Primitive::Mean => PrimitiveKind::Mean,
            Primitive::Square => PrimitiveKind::Square,
            Primitive::Log => PrimitiveKind::Log,
            Primitive::Exp => PrimitiveKind::Exp,
            Primitive::Slice { .. } => PrimitiveKind::Slice,
            Primitive::BroadcastChannel { .. } => PrimitiveKind::BroadcastChannel,
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            Primitive::Conv2d { .. } | Primitive::Linear => n == 2 || n == 3,
            Primitive::Add | Primitive::Mul | Primitive::Matmul => n == 2,
            Primitive::Concat { .. } => n >= 1,
            _ => n == 1,
        }
    }

    pub(crate) fn forward(&self, inputs: &[&Tensor]) -> Result<Forward> {
        let kind = self.kind().name();
        if !self.arity_ok(inputs.len()) {
            return Err(Error::shape(kind, format!("wrong number of inputs: {}", inputs.len())));
        }
        let x = inputs[0];
        let xs = x.shape();
        let xd = x.data();
        match *self {
            Primitive::Conv2d { stride, padding } => {
                let w = inputs[1];
                let ws = w.shape();
                if xs.len() != 4 || ws.len() != 4 {
                    return Err(Error::shape(
                        kind,
                        format!("expected NCHW input and OIHW kernel, got {xs:?} and {ws:?}"),
                    ));
                }
                if xs[1] != ws[1] {
                    return Err(Error::shape(kind, format!("input channels {} != kernel channels {}", xs[1], ws[1])));
                }
                if stride == 0 || xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3] {
                    return Err(Error::shape(
                        kind,
                        format!("kernel {ws:?} does not fit input {xs:?} with padding {padding}, stride {stride}"),
                    ));
                }
                if let Some(b) = inputs.get(2) {
                    if b.shape() != [ws[0]] {
                        return Err(Error::shape(kind, format!("bias shape {:?} != [{}]", b.shape(), ws[0])));
                    }
                }
                let g = conv_geom(xs, ws, stride, padding);
                let data = kernels::conv_forward(&g, xs[0], ws[0], xd, w.data(), inputs.get(2).map(|b| b.data()));
                fwd(vec![xs[0], ws[0], g.out_h(), g.out_w()], data)
            }
            Primitive::Linear => {
                let w = inputs[1];
                let ws = w.shape();
                if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
                    return Err(Error::shape(kind, format!("input {xs:?} incompatible with weight {ws:?}")));
                }
                if let Some(b) = inputs.get(2) {
                    if b.shape() != [ws[0]] {
                        return Err(Error::shape(kind, format!("bias shape {:?} != [{}]", b.shape(), ws[0])));
                    }
                }
                let (rows, out) = (xs[0], ws[0]);
                let mut data = vec![0.0; rows * out];
                if let Some(b) = inputs.get(2) {
                    for row in data.chunks_mut(out) {
                        row.copy_from_slice(b.data());
                    }
                }
                kernels::gemm(rows, xs[1], out, xd, false, w.data(), true, &mut data, 1.0);
                fwd(vec![rows, out], data)
            }
            Primitive::Relu => fwd(xs.to_vec(), xd.iter().map(|&v| v.max(0.0)).collect()),
            Primitive::Sigmoid => fwd(xs.to_vec(), xd.iter().map(|&v| sigmoid(v)).collect()),
            Primitive::Softmax { axis } => {
                check_axis(kind, xs, axis)?;
                let (outer, len, inner) = split_axis(xs, axis);
                let mut data = vec![0.0; xd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let max = (0..len).map(|k| xd[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                        let mut total = 0.0;
                        for k in 0..len {
                            let e = (xd[idx(k)] - max).exp();
                            data[idx(k)] = e;
                            total += e;
                        }
                        for k in 0..len {
                            data[idx(k)] /= total;
                        }
                    }
                }
                fwd(xs.to_vec(), data)
            }
            Primitive::L2Normalize { axis } => {
                check_axis(kind, xs, axis)?;
                let (outer, len, inner) = split_axis(xs, axis);
                let mut data = vec![0.0; xd.len()];
                let mut norms = vec![0.0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let norm = (0..len).map(|k| xd[idx(k)] * xd[idx(k)]).sum::<f64>().sqrt();
                        norms[o * inner + i] = norm;
                        let denom = norm.max(NORM_FLOOR);
                        for k in 0..len {
                            data[idx(k)] = xd[idx(k)] / denom;
                        }
                    }
                }
                Ok(Forward { shape: xs.to_vec(), data, aux: norms })
            }
            Primitive::ChannelMean | Primitive::GlobalAvgPool => {
                check_nchw(kind, xs)?;
                let hw = xs[2] * xs[3];
                let data = xd.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
                fwd(vec![xs[0], xs[1]], data)
            }
            Primitive::ChannelStd { eps } => {
                check_nchw(kind, xs)?;
                let hw = xs[2] * xs[3];
                let data = xd
                    .chunks(hw)
                    .map(|p| {
                        let mu = p.iter().sum::<f64>() / hw as f64;
                        let var = p.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / hw as f64;
                        (var + eps).sqrt()
                    })
                    .collect();
                fwd(vec![xs[0], xs[1]], data)
            }
            Primitive::Concat { axis } => {
                check_axis(kind, xs, axis)?;
                for (i, t) in inputs.iter().enumerate() {
                    let ts = t.shape();
                    let compatible =
                        ts.len() == xs.len() && ts.iter().zip(xs).enumerate().all(|(d, (a, b))| d == axis || a == b);
                    if !compatible {
                        return Err(Error::shape(
                            kind,
                            format!("input {i} shape {ts:?} incompatible with {xs:?} along axis {axis}"),
                        ));
                    }
                }
                let (outer, _, inner) = split_axis(xs, axis);
                let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
                let mut data = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for t in inputs {
                        let chunk = t.shape()[axis] * inner;
                        data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                    }
                }
                let mut shape = xs.to_vec();
                shape[axis] = total;
                fwd(shape, data)
            }
            Primitive::Add | Primitive::Mul => {
                let y = inputs[1];
                if y.shape() != xs {
                    return Err(Error::shape(kind, format!("{xs:?} vs {:?}", y.shape())));
                }
                let data =
                    xd.iter().zip(y.data()).map(|(a, b)| if *self == Primitive::Add { a + b } else { a * b }).collect();
                fwd(xs.to_vec(), data)
            }
            Primitive::Scale { factor, offset } => fwd(xs.to_vec(), xd.iter().map(|v| factor * v + offset).collect()),
            Primitive::Matmul => {
                let y = inputs[1];
                let ys = y.shape();
                if xs.len() != 2 || ys.len() != 2 || xs[1] != ys[0] {
                    return Err(Error::shape(kind, format!("{xs:?} x {ys:?}")));
                }
                let mut data = vec![0.0; xs[0] * ys[1]];
                kernels::gemm(xs[0], xs[1], ys[1], xd, false, y.data(), false, &mut data, 0.0);
                fwd(vec![xs[0], ys[1]], data)
            }
            Primitive::Transpose => {
                if xs.len() != 2 {
                    return Err(Error::shape(kind, format!("expected a matrix, got {xs:?}")));
                }
                let (r, c) = (xs[0], xs[1]);
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[j * r + i] = xd[i * c + j];
                    }
                }
                fwd(vec![c, r], data)
            }
            Primitive::Sum => fwd(vec![1], vec![xd.iter().sum()]),
            Primitive::Mean => fwd(vec![1], vec![xd.iter().sum::<f64>() / xd.len() as f64]),
            Primitive::Square => fwd(xs.to_vec(), xd.iter().map(|v| v * v).collect()),
            Primitive::Log => {
                if xd.iter().any(|&v| v <= 0.0) {
                    return Err(Error::invalid("log: non-positive input"));
                }
                fwd(xs.to_vec(), xd.iter().map(|v| v.ln()).collect())
            }
            Primitive::Exp => fwd(xs.to_vec(), xd.iter().map(|v| v.exp()).collect()),
            Primitive::Slice { axis, start, len } => {
                check_axis(kind, xs, axis)?;
                if len == 0 || start + len > xs[axis] {
                    return Err(Error::shape(
                        kind,
                        format!("range {start}..{} outside axis {axis} of {xs:?}", start + len),
                    ));
                }
                let (outer, full, inner) = split_axis(xs, axis);
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    data.extend_from_slice(&xd[base..base + len * inner]);
                }
                let mut shape = xs.to_vec();
                shape[axis] = len;
                fwd(shape, data)
            }
            Primitive::BroadcastChannel { height, width } => {
                if xs.len() != 2 || height == 0 || width == 0 {
                    return Err(Error::shape(kind, format!("expected NC input and positive spatial size, got {xs:?}")));
                }
                let hw = height * width;
                let mut data = Vec::with_capacity(xd.len() * hw);
                for &v in xd {
                    data.extend(std::iter::repeat_n(v, hw));
                }
                fwd(vec![xs[0], xs[1], height, width], data)
            }
        }
    }

    /// Vector-Jacobian products for each input that requires grad.
    pub(crate) fn vjp(&self, inputs: &[Tensor], out: &[f64], aux: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let need: Vec<bool> = inputs.iter().map(|t| t.requires_grad()).collect();
        let x = &inputs[0];
        let xs = x.shape();
        let xd = x.data();
        let map1 = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> { vec![Some((0..xd.len()).map(f).collect())] };
        match *self {
            Primitive::Conv2d { stride, padding } => {
                let w = &inputs[1];
                let geom = conv_geom(xs, w.shape(), stride, padding);
                let grads = kernels::conv_backward(
                    &geom,
                    xs[0],
                    w.shape()[0],
                    xd,
                    w.data(),
                    g,
                    need[0],
                    need[1],
                    need.get(2).copied().unwrap_or(false),
                );
                let mut res = vec![grads.input, grads.weight];
                if inputs.len() == 3 {
                    res.push(grads.bias);
                }
                res
            }
            Primitive::Linear => {
                let w = &inputs[1];
                let (rows, inn, out_n) = (xs[0], xs[1], w.shape()[0]);
                let dx = need[0].then(|| {
                    let mut d = vec![0.0; rows * inn];
                    kernels::gemm(rows, out_n, inn, g, false, w.data(), false, &mut d, 0.0);
                    d
                });
                let dw = need[1].then(|| {
                    let mut d = vec![0.0; out_n * inn];
                    kernels::gemm(out_n, rows, inn, g, true, xd, false, &mut d, 0.0);
                    d
                });
                let mut res = vec![dx, dw];
                if inputs.len() == 3 {
                    res.push(need[2].then(|| {
                        let mut d = vec![0.0; out_n];
                        for row in g.chunks(out_n) {
                            d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        d
                    }));
                }
                res
            }
            Primitive::Relu => map1(&|i| if xd[i] > 0.0 { g[i] } else { 0.0 }),
            Primitive::Sigmoid => map1(&|i| g[i] * out[i] * (1.0 - out[i])),
            Primitive::Softmax { axis } => {
                let (outer, len, inner) = split_axis(xs, axis);
                let mut d = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[idx(k)] * out[idx(k)]).sum();
                        for k in 0..len {
                            d[idx(k)] = out[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                vec![Some(d)]
            }
            Primitive::L2Normalize { axis } => {
                let (outer, len, inner) = split_axis(xs, axis);
                let mut d = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let norm = aux[o * inner + i];
                        if norm > NORM_FLOOR {
                            let dot: f64 = (0..len).map(|k| g[idx(k)] * out[idx(k)]).sum();
                            for k in 0..len {
                                d[idx(k)] = (g[idx(k)] - out[idx(k)] * dot) / norm;
                            }
                        } else {
                            for k in 0..len {
                                d[idx(k)] = g[idx(k)] / NORM_FLOOR;
                            }
                        }
                    }
                }
                vec![Some(d)]
            }
            Primitive::ChannelMean | Primitive::GlobalAvgPool => {
                let hw = xs[2] * xs[3];
                map1(&|i| g[i / hw] / hw as f64)
            }
            Primitive::ChannelStd { .. } => {
                let hw = xs[2] * xs[3];
                let mut d = vec![0.0; xd.len()];
                for (p, plane) in xd.chunks(hw).enumerate() {
                    let mu = plane.iter().sum::<f64>() / hw as f64;
                    let scale = g[p] / (hw as f64 * out[p]);
                    for (k, v) in plane.iter().enumerate() {
                        d[p * hw + k] = scale * (v - mu);
                    }
                }
                vec![Some(d)]
            }
            Primitive::Concat { axis } => {
                let (outer, total, inner) = split_axis(&concat_shape(inputs, axis), axis);
                let mut offset = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for (t, &nd) in inputs.iter().zip(&need) {
                    let len = t.shape()[axis];
                    res.push(nd.then(|| {
                        let mut d = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + len * inner]);
                        }
                        d
                    }));
                    offset += len;
                }
                res
            }
            Primitive::Add => vec![need[0].then(|| g.to_vec()), need[1].then(|| g.to_vec())],
            Primitive::Mul => {
                let yd = inputs[1].data();
                vec![
                    need[0].then(|| g.iter().zip(yd).map(|(a, b)| a * b).collect()),
                    need[1].then(|| g.iter().zip(xd).map(|(a, b)| a * b).collect()),
                ]
            }
            Primitive::Scale { factor, .. } => map1(&|i| g[i] * factor),
            Primitive::Matmul => {
                let y = &inputs[1];
                let (m, k, n) = (xs[0], xs[1], y.shape()[1]);
                let dx = need[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, y.data(), true, &mut d, 0.0);
                    d
                });
                let dy = need[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    kernels::gemm(k, m, n, xd, true, g, false, &mut d, 0.0);
                    d
                });
                vec![dx, dy]
            }
            Primitive::Transpose => {
                let (r, c) = (xs[0], xs[1]);
                map1(&|i| {
                    let (row, col) = (i / c, i % c);
                    g[col * r + row]
                })
            }
            Primitive::Sum => vec![Some(vec![g[0]; xd.len()])],
            Primitive::Mean => vec![Some(vec![g[0] / xd.len() as f64; xd.len()])],
            Primitive::Square => map1(&|i| 2.0 * xd[i] * g[i]),
            Primitive::Log => map1(&|i| g[i] / xd[i]),
            Primitive::Exp => map1(&|i| g[i] * out[i]),
            Primitive::Slice { axis, start, len } => {
                let (outer, full, inner) = split_axis(xs, axis);
                let mut d = vec![0.0; xd.len()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(d)]
            }
            Primitive::BroadcastChannel { height, width } => {
                let hw = height * width;
                vec![Some(g.chunks(hw).map(|c| c.iter().sum()).collect())]
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn conv_geom(xs: &[usize], ws: &[usize], stride: usize, padding: usize) -> ConvGeom {
    ConvGeom { channels: xs[1], height: xs[2], width: xs[3], kh: ws[2], kw: ws[3], stride, padding }
}

fn concat_shape(inputs: &[Tensor], axis: usize) -> Vec<usize> {
    let mut shape = inputs[0].shape().to_vec();
    shape[axis] = inputs.iter().map(|t| t.shape()[axis]).sum();
    shape
}

fn check_axis(kind: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(kind, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

fn check_nchw(kind: &'static str, shape: &[usize]) -> Result<()> {
    if shape.len() != 4 {
        return Err(Error::shape(kind, format!("expected NCHW input, got {shape:?}")));
    }
    Ok(())
}
