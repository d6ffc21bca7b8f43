//! Synthetic face-proxy data: factorized generator, on-disk datasets and
//! the per-identity batch sampler.

mod dataset;
mod generator;
mod image;
mod report;
mod sampler;
mod spec;

pub use dataset::{generate_dataset, Dataset, ManifestEntry, MANIFEST_FILE, SAMPLES_DIR, SOURCE_DIR, TARGET_DIR};
pub use generator::{generate_sample, IdentityPattern};
pub use image::{gaussian_blur, resample};
pub use report::{domain_shift_report, self_check_report, DomainShift, SelfCheck};
pub use sampler::{stack_images, Augment, Batch, BatchSampler, SamplerConfig};
pub use spec::{DatasetSpec, DomainStyle, Range};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Liveness {
    Live,
    Spoof,
}

impl Liveness {
    /// Class index used by the liveness heads: live is 0.
    pub fn label(self) -> usize {
        match self {
            Self::Live => 0,
            Self::Spoof => 1,
        }
    }

    pub fn is_live(self) -> bool {
        self == Self::Live
    }
}

impl fmt::Display for Liveness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Live => "live",
            Self::Spoof => "spoof",
        })
    }
}

impl FromStr for Liveness {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(Self::Live),
            "spoof" => Ok(Self::Spoof),
            _ => Err(Error::Format(format!("unknown liveness `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackType {
    None,
    Grid,
    Moire,
    Blur,
    Noise,
}

impl AttackType {
    pub const SPOOFS: [AttackType; 4] = [Self::Grid, Self::Moire, Self::Blur, Self::Noise];

    pub fn liveness(self) -> Liveness {
        if self == Self::None {
            Liveness::Live
        } else {
            Liveness::Spoof
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Grid => "grid",
            Self::Moire => "moire",
            Self::Blur => "blur",
            Self::Noise => "noise",
        })
    }
}

impl FromStr for AttackType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "grid" => Ok(Self::Grid),
            "moire" => Ok(Self::Moire),
            "blur" => Ok(Self::Blur),
            "noise" => Ok(Self::Noise),
            _ => Err(Error::Format(format!("unknown attack type `{s}`"))),
        }
    }
}

/// Global appearance parameters applied after composition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Style {
    pub brightness: f64,
    pub contrast: f64,
    /// Rotation about the gray axis, radians.
    pub hue: f64,
    /// Gaussian blur sigma in pixels.
    pub blur: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl Style {
    pub fn neutral() -> Self {
        Self { contrast: 1.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// `3 x size x size`, row-major, values in [0, 1].
    pub image: Vec<f64>,
    pub size: usize,
    pub identity_id: usize,
    pub liveness: Liveness,
    pub attack_type: AttackType,
    pub style: Style,
    pub domain_tag: usize,
}

/// Independent stream `index` of the generator seeded by `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_text_round_trip() {
        for a in [AttackType::None, AttackType::Grid, AttackType::Moire, AttackType::Blur, AttackType::Noise] {
            assert_eq!(a.to_string().parse::<AttackType>().unwrap(), a);
        }
        assert_eq!("live".parse::<Liveness>().unwrap().label(), 0);
        assert_eq!("spoof".parse::<Liveness>().unwrap().label(), 1);
        assert!("fake".parse::<Liveness>().is_err());
    }
}
