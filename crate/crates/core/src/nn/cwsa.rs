use rand::Rng;

use super::{prefixed, prefixed_mut, Dense, Module};
use crate::error::{Error, Result};
use crate::stylecross::STYLE_EPS;
use crate::tensor::Tensor;

/// Channel-wise style attention: a squeeze-excitation style gate driven by
/// per-channel mean and variance, applied as `x̂ = a·x + x`.
#[derive(Debug, Clone)]
pub struct Cwsa {
    pub w1: Dense,
    pub w2: Dense,
    channels: usize,
}

impl Cwsa {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::invalid(format!("CWSA reduction {reduction} must divide channel count {channels}")));
        }
        let hidden = channels / reduction;
        Ok(Self { w1: Dense::new(rng, 2 * channels, hidden)?, w2: Dense::new(rng, hidden, channels)?, channels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Gate `a ∈ (0,1)^{B x C}`.
    pub fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape("cwsa", format!("expected B x {} x H x W, got {s:?}", self.channels)));
        }
        let mean = x.channel_mean()?;
        // channel_std carries eps inside the root; remove it to recover the
        // plain biased variance.
        let var = x.channel_std(STYLE_EPS)?.square()?.affine(1.0, -STYLE_EPS)?;
        let stats = Tensor::concat(&[&mean, &var], 1)?;
        self.w2.forward(&self.w1.forward(&stats)?.relu()?)?.sigmoid()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.attention(x)?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        x.mul(&a.broadcast_channel(h, w)?)?.add(x)
    }
}

impl Module for Cwsa {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("w1", self.w1.params());
        v.extend(prefixed("w2", self.w2.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("w1", self.w1.params_mut());
        v.extend(prefixed_mut("w2", self.w2.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(mut c: Cwsa) -> Cwsa {
        for (_, t) in c.params_mut() {
            *t = Tensor::param(t.shape(), vec![0.0; t.numel()]).unwrap();
        }
        c
    }

    /// Straight-line recomputation of the gate and rescaling.
    fn oracle(c: &Cwsa, x: &[f64], b: usize, ch: usize, hw: usize) -> Vec<f64> {
        let (w1, b1, w2, b2) = (c.w1.weight.data(), c.w1.bias.data(), c.w2.weight.data(), c.w2.bias.data());
        let hidden = c.w1.bias.numel();
        let mut out = vec![0.0; x.len()];
        for n in 0..b {
            let mut stats = vec![0.0; 2 * ch];
            for k in 0..ch {
                let p = &x[(n * ch + k) * hw..(n * ch + k + 1) * hw];
                let mu = p.iter().sum::<f64>() / hw as f64;
                stats[k] = mu;
                stats[ch + k] = p.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / hw as f64;
            }
            let h: Vec<f64> = (0..hidden)
                .map(|j| (b1[j] + (0..2 * ch).map(|i| w1[j * 2 * ch + i] * stats[i]).sum::<f64>()).max(0.0))
                .collect();
            for k in 0..ch {
                let z = b2[k] + (0..hidden).map(|j| w2[k * hidden + j] * h[j]).sum::<f64>();
                let a = 1.0 / (1.0 + (-z).exp());
                for i in 0..hw {
                    let idx = (n * ch + k) * hw + i;
                    out[idx] = a * x[idx] + x[idx];
                }
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_one_and_a_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = zeroed(Cwsa::new(&mut rng, 4, 2).unwrap());
        let x = Tensor::new(&[1, 4, 2, 2], (0..16).map(|i| i as f64 - 7.5).collect()).unwrap();
        let y = c.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 1.5 * b);
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Cwsa::new(&mut rng, 4, 2).unwrap();
        let y = c.forward(&Tensor::zeros(&[2, 4, 3, 3]).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Cwsa::new(&mut rng, 4, 2).unwrap();
        let data: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[1, 4, 3, 3], data.clone()).unwrap();
        let y = c.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(oracle(&c, &data, 1, 4, 9)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Cwsa::new(&mut rng, 4, 2).unwrap();
        assert!(c.forward(&Tensor::zeros(&[1, 3, 2, 2]).unwrap()).is_err());
        assert!(Cwsa::new(&mut rng, 6, 4).is_err());
    }

    #[test]
    fn preserves_sign_and_bounds_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = Cwsa::new(&mut rng, 8, 4).unwrap();
        let data: Vec<f64> = (0..2 * 8 * 16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = Tensor::new(&[2, 8, 4, 4], data).unwrap();
        let y = c.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(a.signum(), b.signum());
            assert!(b.abs() <= a.abs() && a.abs() <= 2.0 * b.abs());
        }
    }
}
