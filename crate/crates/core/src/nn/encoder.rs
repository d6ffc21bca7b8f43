use rand::Rng;

use super::{prefixed, prefixed_mut, Conv, Cwsa, Module};
use crate::error::{Error, Result};
use crate::stylecross::{style_cross_batch, Level, LevelPairings, StylePlan};
use crate::tensor::Tensor;

pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub stage_channels: [usize; 3],
    pub feature_dim: usize,
    pub cwsa_enabled: bool,
    pub cwsa_reduction: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_size: 32, stage_channels: [16, 32, 64], feature_dim: 64, cwsa_enabled: true, cwsa_reduction: 4 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            return Err(Error::Config(format!("input_size {} must be a positive multiple of 8", self.input_size)));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage channel counts must be positive".into()));
        }
        if self.feature_dim != self.stage_channels[2] {
            return Err(Error::Config(format!(
                "feature_dim {} must equal the high-level channel count {}",
                self.feature_dim, self.stage_channels[2]
            )));
        }
        if self.cwsa_enabled && (self.cwsa_reduction == 0 || !self.feature_dim.is_multiple_of(self.cwsa_reduction)) {
            return Err(Error::Config(format!(
                "cwsa_reduction {} must divide {}",
                self.cwsa_reduction, self.feature_dim
            )));
        }
        Ok(())
    }
}

/// conv3x3 stride 2 -> ReLU -> conv3x3 stride 1 -> ReLU.
#[derive(Debug, Clone)]
pub struct Stage {
    pub down: Conv,
    pub refine: Conv,
}

impl Stage {
    fn new<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self { down: Conv::new(rng, in_ch, out_ch, 3, 2)?, refine: Conv::new(rng, out_ch, out_ch, 3, 1)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.refine.forward(&self.down.forward(x)?.relu()?)?.relu()
    }
}

impl Module for Stage {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("down", self.down.params());
        v.extend(prefixed("refine", self.refine.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("down", self.down.params_mut());
        v.extend(prefixed_mut("refine", self.refine.params_mut()));
        v
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    pub stages: [Stage; 3],
    pub cwsa: Option<Cwsa>,
}

/// Result of one encoder call.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Pooled, unnormalized B x N features of the original batch.
    pub features: Tensor,
    /// One feature set per style flow, in [`StylePlan::expand_flows`] order.
    pub augmented: Vec<Tensor>,
    /// Low, mid and high stage outputs of the original batch.
    pub intermediates: [Tensor; 3],
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.stage_channels;
        let stages = [Stage::new(rng, INPUT_CHANNELS, c1)?, Stage::new(rng, c1, c2)?, Stage::new(rng, c2, c3)?];
        let cwsa = if config.cwsa_enabled { Some(Cwsa::new(rng, c3, config.cwsa_reduction)?) } else { None };
        Ok(Self { config, stages, cwsa })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn pool(&self, high: &Tensor) -> Result<Tensor> {
        match &self.cwsa {
            Some(c) => c.forward(high)?.global_avg_pool(),
            None => high.global_avg_pool(),
        }
    }

    /// Features only, no style flows.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode(x, None, &LevelPairings::none())?.features)
    }

    /// Runs the original batch and, when `plan` is given, every style flow.
    /// Flows reuse the original pass up to their first active level.
    pub fn encode(&self, x: &Tensor, plan: Option<&StylePlan>, pairings: &LevelPairings) -> Result<Encoded> {
        let s = x.shape();
        let size = self.config.input_size;
        if s.len() != 4 || s[1] != INPUT_CHANNELS || s[2] != size || s[3] != size {
            return Err(Error::shape("encode", format!("expected B x {INPUT_CHANNELS} x {size} x {size}, got {s:?}")));
        }
        let batch = s[0];
        if let Some(plan) = plan {
            for &l in plan.levels() {
                match pairings.get(l) {
                    None => return Err(Error::invalid(format!("style level {l:?} is active but has no pairing"))),
                    Some(p) if p.len() != batch => {
                        return Err(Error::invalid(format!(
                            "pairing for level {l:?} covers {} samples, batch has {batch}",
                            p.len()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }

        let low = self.stages[0].forward(x)?;
        let mid = self.stages[1].forward(&low)?;
        let high = self.stages[2].forward(&mid)?;
        let features = self.pool(&high)?;
        let hooks = [low, mid, high];

        let mut augmented = Vec::new();
        if let Some(plan) = plan {
            for flow in plan.expand_flows() {
                let first = flow[0].index();
                let mut h = hooks[first].clone();
                for (k, level) in Level::ALL.iter().enumerate().skip(first) {
                    if k > first {
                        h = self.stages[k].forward(&h)?;
                    }
                    if flow.contains(level) {
                        let perm = pairings.get(*level).expect("pairing checked above").perm();
                        h = style_cross_batch(&h, perm)?;
                    }
                }
                augmented.push(self.pool(&h)?);
            }
        }
        Ok(Encoded { features, augmented, intermediates: hooks })
    }
}

impl Module for Encoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            v.extend(prefixed(&format!("stage{i}"), st.params()));
        }
        if let Some(c) = &self.cwsa {
            v.extend(prefixed("cwsa", c.params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for (i, st) in self.stages.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("stage{i}"), st.params_mut()));
        }
        if let Some(c) = &mut self.cwsa {
            v.extend(prefixed_mut("cwsa", c.params_mut()));
        }
        v
    }
}
