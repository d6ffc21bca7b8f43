use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::image::{gaussian_blur, rotate_hue};
use super::{stream_rng, AttackType, Liveness, SampleRecord, Style, CHANNELS};
use crate::error::{Error, Result};

/// Stream offset separating identity patterns from per-sample streams.
const IDENTITY_STREAM: u64 = 1 << 48;

const SKIN_TEXTURE: f64 = 0.04;
const GRID_PERIOD: f64 = 4.0;
const GRID_AMPLITUDE: f64 = 0.15;
const MOIRE_FREQS: (f64, f64) = (0.22, 0.25);
const MOIRE_SKEW: f64 = 0.15;
const MOIRE_AMPLITUDE: f64 = 0.2;
const BLUR_ATTACK_SIGMA: f64 = 1.2;
const SPECKLE: f64 = 0.08;

#[derive(Debug, Clone, Copy)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; CHANNELS],
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    color: [f64; CHANNELS],
}

/// Identity-specific base render: a smooth random field plus a few
/// landmark blobs, all in normalized image coordinates.
#[derive(Debug, Clone)]
pub struct IdentityPattern {
    pub identity_id: usize,
    base: [f64; CHANNELS],
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

impl IdentityPattern {
    pub fn new(dataset_seed: u64, identity_id: usize) -> Self {
        let mut rng = stream_rng(dataset_seed, IDENTITY_STREAM + identity_id as u64);
        let base = [0; CHANNELS].map(|_| rng.gen_range(0.35..0.65));
        let waves = (0..3)
            .map(|_| Wave {
                fx: rng.gen_range(-2.0..2.0),
                fy: rng.gen_range(-2.0..2.0),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: [0; CHANNELS].map(|_| rng.gen_range(-0.06..0.06)),
            })
            .collect();
        let n_blobs = rng.gen_range(2..=3);
        let blobs = (0..n_blobs)
            .map(|_| Blob {
                cx: rng.gen_range(0.2..0.8),
                cy: rng.gen_range(0.2..0.8),
                radius: rng.gen_range(0.09..0.18),
                color: [0; CHANNELS].map(|_| rng.gen_range(-0.22..0.22)),
            })
            .collect();
        Self { identity_id, base, waves, blobs }
    }

    pub fn render(&self, size: usize) -> Vec<f64> {
        let plane = size * size;
        let mut img = vec![0.0; CHANNELS * plane];
        for y in 0..size {
            for x in 0..size {
                let (u, v) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
                let mut px = self.base;
                for w in &self.waves {
                    let s = (2.0 * PI * (w.fx * u + w.fy * v) + w.phase).sin();
                    for c in 0..CHANNELS {
                        px[c] += w.amp[c] * s;
                    }
                }
                for b in &self.blobs {
                    let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
                    let g = (-d2 / (2.0 * b.radius * b.radius)).exp();
                    for c in 0..CHANNELS {
                        px[c] += b.color[c] * g;
                    }
                }
                for c in 0..CHANNELS {
                    img[c * plane + y * size + x] = px[c];
                }
            }
        }
        img
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn add_luminance(img: &mut [f64], plane: usize, field: impl Fn(usize) -> f64) {
    for c in 0..CHANNELS {
        for i in 0..plane {
            img[c * plane + i] += field(i);
        }
    }
}

/// Renders one sample. Random fields are drawn in a fixed order (skin
/// texture, style noise, then attack parameters) so samples that differ
/// only in their attack share all other randomness.
pub fn generate_sample<R: Rng + ?Sized>(
    identity: &IdentityPattern,
    liveness: Liveness,
    attack_type: AttackType,
    style: Style,
    domain_tag: usize,
    size: usize,
    rng: &mut R,
) -> Result<SampleRecord> {
    if attack_type.liveness() != liveness {
        return Err(Error::invalid(format!("attack `{attack_type}` is inconsistent with liveness `{liveness}`")));
    }
    let plane = size * size;
    let texture = normals(rng, plane);
    let style_noise = normals(rng, CHANNELS * plane);

    let mut img = identity.render(size);
    add_luminance(&mut img, plane, |i| SKIN_TEXTURE * texture[i]);

    let coord = |i: usize| ((i % size) as f64, (i / size) as f64);
    match attack_type {
        AttackType::None => {}
        AttackType::Grid => {
            let (px, py) = (rng.gen_range(0.0..GRID_PERIOD), rng.gen_range(0.0..GRID_PERIOD));
            add_luminance(&mut img, plane, |i| {
                let (x, y) = coord(i);
                0.5 * GRID_AMPLITUDE
                    * ((2.0 * PI * (x + px) / GRID_PERIOD).cos() + (2.0 * PI * (y + py) / GRID_PERIOD).cos())
            });
        }
        AttackType::Moire => {
            let theta = rng.gen_range(0.0..PI);
            let (n1, n2) = ((theta.cos(), theta.sin()), ((theta + MOIRE_SKEW).cos(), (theta + MOIRE_SKEW).sin()));
            add_luminance(&mut img, plane, |i| {
                let (x, y) = coord(i);
                let a = (2.0 * PI * MOIRE_FREQS.0 * (x * n1.0 + y * n1.1)).cos();
                let b = (2.0 * PI * MOIRE_FREQS.1 * (x * n2.0 + y * n2.1)).cos();
                MOIRE_AMPLITUDE * a * b
            });
        }
        AttackType::Blur => img = gaussian_blur(&img, CHANNELS, size, BLUR_ATTACK_SIGMA),
        AttackType::Noise => {
            let speckle = normals(rng, plane);
            add_luminance(&mut img, plane, |i| SPECKLE * speckle[i]);
        }
    }

    rotate_hue(&mut img, size, style.hue);
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    img.iter_mut().for_each(|v| *v = (*v - mean) * style.contrast + mean);
    img = gaussian_blur(&img, CHANNELS, size, style.blur);
    for (v, n) in img.iter_mut().zip(&style_noise) {
        *v = (*v + style.brightness + style.noise * n).clamp(0.0, 1.0) as f32 as f64;
    }

    Ok(SampleRecord { image: img, size, identity_id: identity.identity_id, liveness, attack_type, style, domain_tag })
}
