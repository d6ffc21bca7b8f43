use rand::Rng;

use super::{kaiming_uniform, Module};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Liveness classifier `C`; class 0 is live, class 1 is spoof.
    Classifier,
    /// Identity discriminator `D` over the training identities.
    Discriminator,
}

/// Cosine head: logits are cosines between the L2-normalized feature and
/// L2-normalized class rows.
#[derive(Debug, Clone)]
pub struct Head {
    pub kind: HeadKind,
    pub weight: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub cosines: Tensor,
    pub probs: Tensor,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, kind: HeadKind, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!("head needs at least 2 classes, got {num_classes}")));
        }
        Ok(Self { kind, weight: kaiming_uniform(rng, &[num_classes, feature_dim], feature_dim)? })
    }

    pub fn classifier<R: Rng + ?Sized>(rng: &mut R, feature_dim: usize) -> Result<Self> {
        Self::new(rng, HeadKind::Classifier, 2, feature_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// B x classes cosine logits.
    pub fn cosines(&self, features: &Tensor) -> Result<Tensor> {
        let fs = features.shape();
        if fs.len() != 2 || fs[1] != self.feature_dim() {
            return Err(Error::shape("head", format!("features {fs:?} vs head dimension {}", self.feature_dim())));
        }
        let f = features.l2_normalize(1)?;
        let w = self.weight.l2_normalize(1)?;
        f.matmul(&w.transpose()?)
    }

    /// Cosines and `softmax(scale · cosines)`.
    pub fn forward(&self, features: &Tensor, scale: f64) -> Result<HeadOutput> {
        let cosines = self.cosines(features)?;
        let probs = cosines.scale(scale)?.softmax(1)?;
        Ok(HeadOutput { cosines, probs })
    }
}

impl Module for Head {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head_with(weight: Vec<f64>, classes: usize, dim: usize) -> Head {
        Head { kind: HeadKind::Classifier, weight: Tensor::param(&[classes, dim], weight).unwrap() }
    }

    #[test]
    fn parallel_feature_gives_unit_cosine() {
        let h = head_with(vec![2.0, 0.0, 0.0, 3.0], 2, 2);
        let f = Tensor::new(&[1, 2], vec![5.0, 0.0]).unwrap();
        let out = h.forward(&f, 1.0).unwrap();
        assert_eq!(out.cosines.data(), &[1.0, 0.0]);
    }

    #[test]
    fn orthogonal_feature_gives_uniform_probabilities() {
        let h = head_with(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2, 3);
        let f = Tensor::new(&[1, 3], vec![0.0, 0.0, 2.0]).unwrap();
        let out = h.forward(&f, 30.0).unwrap();
        assert_eq!(out.probs.data(), &[0.5, 0.5]);
    }

    #[test]
    fn matches_brute_force_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Head::new(&mut rng, HeadKind::Discriminator, 4, 6).unwrap();
        let fd: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = Tensor::new(&[3, 6], fd.clone()).unwrap();
        let s = 30.0;
        let out = h.forward(&f, s).unwrap();
        let w = h.weight.data();
        for b in 0..3 {
            let row = &fd[b * 6..(b + 1) * 6];
            let fnorm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos: Vec<f64> = (0..4)
                .map(|k| {
                    let wr = &w[k * 6..(k + 1) * 6];
                    let wn = wr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>() / (fnorm * wn)
                })
                .collect();
            let z: f64 = cos.iter().map(|c| (s * c).exp()).sum();
            for k in 0..4 {
                assert!((out.probs.data()[b * 4 + k] - (s * cos[k]).exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let h = head_with(vec![1.0; 4], 2, 2);
        assert!(h.forward(&Tensor::zeros(&[1, 3]).unwrap(), 1.0).is_err());
    }
}
