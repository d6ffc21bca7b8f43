//! Planar `C x H x W` image helpers.

/// Separable Gaussian blur with clamped edges. Sigmas below 0.05 px are a
/// no-op.
pub fn gaussian_blur(img: &[f64], channels: usize, size: usize, sigma: f64) -> Vec<f64> {
    if sigma < 0.05 {
        return img.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let plane = size * size;
    let mut tmp = vec![0.0; img.len()];
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        let src = &img[c * plane..(c + 1) * plane];
        let t = &mut tmp[c * plane..(c + 1) * plane];
        for y in 0..size {
            for x in 0..size {
                t[y * size + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * src[y * size + clamp(x as isize + k as isize - radius)])
                    .sum();
            }
        }
        let o = &mut out[c * plane..(c + 1) * plane];
        for y in 0..size {
            for x in 0..size {
                o[y * size + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * t[clamp(y as isize + k as isize - radius) * size + x])
                    .sum();
            }
        }
    }
    out
}

/// Bilinear resample through an affine map of normalized coordinates in
/// `[-1, 1]`: output point `p` reads the input at `scale · R(angle) · p + shift`.
/// Reads outside the image clamp to the border.
pub fn resample(
    img: &[f64],
    channels: usize,
    in_size: usize,
    out_size: usize,
    scale: f64,
    angle: f64,
    shift: (f64, f64),
) -> Vec<f64> {
    if in_size == out_size && scale == 1.0 && angle == 0.0 && shift == (0.0, 0.0) {
        return img.to_vec();
    }
    let (sin, cos) = angle.sin_cos();
    let max = in_size as f64 - 1.0;
    let mut out = vec![0.0; channels * out_size * out_size];
    for v in 0..out_size {
        for u in 0..out_size {
            let nx = 2.0 * (u as f64 + 0.5) / out_size as f64 - 1.0;
            let ny = 2.0 * (v as f64 + 0.5) / out_size as f64 - 1.0;
            let sx = scale * (cos * nx - sin * ny) + shift.0;
            let sy = scale * (sin * nx + cos * ny) + shift.1;
            let px = ((sx + 1.0) / 2.0 * in_size as f64 - 0.5).clamp(0.0, max);
            let py = ((sy + 1.0) / 2.0 * in_size as f64 - 0.5).clamp(0.0, max);
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(in_size - 1), (y0 + 1).min(in_size - 1));
            let (fx, fy) = (px - x0 as f64, py - y0 as f64);
            for c in 0..channels {
                let p = &img[c * in_size * in_size..(c + 1) * in_size * in_size];
                let top = p[y0 * in_size + x0] * (1.0 - fx) + p[y0 * in_size + x1] * fx;
                let bottom = p[y1 * in_size + x0] * (1.0 - fx) + p[y1 * in_size + x1] * fx;
                out[(c * out_size + v) * out_size + u] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Rotates each RGB pixel about the gray axis by `angle` radians.
pub(crate) fn rotate_hue(img: &mut [f64], size: usize, angle: f64) {
    if angle == 0.0 {
        return;
    }
    let (s, c) = angle.sin_cos();
    let k = (1.0 - c) / 3.0;
    let r3 = s / 3f64.sqrt();
    let m = [[c + k, k - r3, k + r3], [k + r3, c + k, k - r3], [k - r3, k + r3, c + k]];
    let plane = size * size;
    for i in 0..plane {
        let px = [img[i], img[plane + i], img[2 * plane + i]];
        for (ch, row) in m.iter().enumerate() {
            img[ch * plane + i] = row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
        }
    }
}
