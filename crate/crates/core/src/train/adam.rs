use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One Adam update with decoupled weight decay, in place. `t` is the
/// 1-based step count after this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, weight_decay: f64) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * weight_decay * p[i];
        p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Adam state for one module, with moments in `params()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<M: Module>(module: &M, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = module.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self { weight_decay, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies accumulated gradients to `module`, replacing each parameter
    /// by a fresh leaf. Missing gradients count as zero.
    pub fn apply<M: Module>(&mut self, module: &mut M, lr: f64) -> Result<()> {
        let mut params = module.params_mut();
        if params.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, module has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        for (k, (name, t)) in params.iter_mut().enumerate() {
            let g = t.grad_vec().unwrap_or_else(|| vec![0.0; t.numel()]);
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss(format!("gradient of {name} contains {bad}")));
            }
            let mut data = t.data().to_vec();
            adam_update(&mut data, &g, &mut self.m[k], &mut self.v[k], self.step, lr, self.weight_decay);
            **t = Tensor::param(t.shape(), data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -4.0, 0.0];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut p, &g, &mut m, &mut v, 1, 0.01, 0.0);
        for ((after, before), gi) in p.iter().zip([1.0, -2.0, 0.5]).zip(&g) {
            let expected = before - 0.01 * gi / (gi.abs() + EPSILON);
            assert!((after - expected).abs() < 1e-15, "{after} vs {expected}");
        }
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut p = vec![2.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, 0.5);
        assert!((p[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_keeps_unit_step() {
        let mut p = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for t in 1..=20 {
            adam_update(&mut p, &[3.0], &mut m, &mut v, t, 0.01, 0.0);
        }
        assert!((p[0] + 0.2).abs() < 1e-6, "{}", p[0]);
    }
}
