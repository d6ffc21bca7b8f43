//! Encoders `U`/`V`, the cosine heads `C`/`D`, and the channel-wise style
//! attention block.

mod cwsa;
mod encoder;
mod head;

pub use cwsa::Cwsa;
pub use encoder::{Encoded, Encoder, EncoderConfig};
pub use head::{Head, HeadKind, HeadOutput};

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// Anything that owns named trainable tensors.
pub trait Module {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn zero_grad(&self) {
        for (_, t) in self.params() {
            t.zero_grad();
        }
    }
}

/// Copy of `m` whose parameters are constants: gradients stop there.
pub fn detached<M: Module + Clone>(m: &M) -> M {
    let mut out = m.clone();
    for (_, t) in out.params_mut() {
        *t = t.detach();
    }
    out
}

/// Flat snapshot of all parameter values, in `params()` order.
pub fn snapshot<M: Module>(m: &M) -> Vec<Vec<f64>> {
    m.params().iter().map(|(_, t)| t.data().to_vec()).collect()
}

pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    inner.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

pub(crate) fn prefixed_mut<'a>(prefix: &str, inner: Vec<(String, &'a mut Tensor)>) -> Vec<(String, &'a mut Tensor)> {
    inner.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// Kaiming-uniform (fan-in, ReLU gain) weights.
pub(crate) fn kaiming_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Result<Tensor> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            weight: kaiming_uniform(rng, &[out_ch, in_ch, k, k], in_ch * k * k)?,
            bias: Tensor::param(&[out_ch], vec![0.0; out_ch])?,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

impl Module for Conv {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Self {
            weight: kaiming_uniform(rng, &[outputs, inputs], inputs)?,
            bias: Tensor::param(&[outputs], vec![0.0; outputs])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, Some(&self.bias))
    }
}

impl Module for Dense {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}
