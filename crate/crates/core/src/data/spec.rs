use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use super::{AttackType, Style};
use crate::error::{Error, Result};
use crate::kv;

/// Closed interval `[lo, hi]`, written `lo,hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.lo..=self.hi)
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

impl FromStr for Range {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s.split_once(',').ok_or_else(|| Error::Config(format!("range `{s}` is not `lo,hi`")))?;
        let lo: f64 = kv::parse_value("range", lo.trim())?;
        let hi: f64 = kv::parse_value("range", hi.trim())?;
        if !(lo <= hi) {
            return Err(Error::Config(format!("range `{s}` has lo > hi")));
        }
        Ok(Self { lo, hi })
    }
}

/// Per-domain style ranges and spoof attack mix.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStyle {
    pub brightness: Range,
    pub contrast: Range,
    pub hue: Range,
    pub blur: Range,
    pub noise: Range,
    /// Relative weights for grid, moire, blur, noise attacks.
    pub attacks: [f64; 4],
}

impl DomainStyle {
    /// Built-in profiles; domains past the fourth reuse them cyclically.
    pub fn preset(domain: usize) -> Self {
        match domain % 4 {
            0 => Self {
                brightness: Range::new(-0.05, 0.05),
                contrast: Range::new(0.9, 1.1),
                hue: Range::new(0.2, 0.5),
                blur: Range::new(0.0, 0.3),
                noise: Range::new(0.0, 0.02),
                attacks: [0.4, 0.2, 0.2, 0.2],
            },
            1 => Self {
                brightness: Range::new(-0.1, 0.0),
                contrast: Range::new(0.8, 1.0),
                hue: Range::new(-0.5, -0.2),
                blur: Range::new(0.5, 1.0),
                noise: Range::new(0.0, 0.02),
                attacks: [0.2, 0.4, 0.2, 0.2],
            },
            2 => Self {
                brightness: Range::new(0.0, 0.1),
                contrast: Range::new(1.0, 1.3),
                hue: Range::new(-0.1, 0.1),
                blur: Range::new(0.0, 0.3),
                noise: Range::new(0.03, 0.06),
                attacks: [0.2, 0.2, 0.2, 0.4],
            },
            _ => Self {
                brightness: Range::new(-0.15, -0.05),
                contrast: Range::new(0.7, 0.9),
                hue: Range::new(0.6, 1.0),
                blur: Range::new(0.2, 0.6),
                noise: Range::new(0.01, 0.03),
                attacks: [0.25, 0.25, 0.25, 0.25],
            },
        }
    }

    pub fn sample_style<R: Rng + ?Sized>(&self, rng: &mut R) -> Style {
        Style {
            brightness: self.brightness.sample(rng),
            contrast: self.contrast.sample(rng),
            hue: self.hue.sample(rng),
            blur: self.blur.sample(rng),
            noise: self.noise.sample(rng),
        }
    }

    pub fn sample_attack<R: Rng + ?Sized>(&self, rng: &mut R) -> AttackType {
        let total: f64 = self.attacks.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (a, &w) in AttackType::SPOOFS.iter().zip(&self.attacks) {
            if u < w {
                return *a;
            }
            u -= w;
        }
        *AttackType::SPOOFS
            .iter()
            .zip(&self.attacks)
            .rev()
            .find(|(_, &w)| w > 0.0)
            .map(|(a, _)| a)
            .unwrap_or(&AttackType::Grid)
    }

    pub fn admits(&self, s: &Style) -> bool {
        self.brightness.contains(s.brightness)
            && self.contrast.contains(s.contrast)
            && self.hue.contains(s.hue)
            && self.blur.contains(s.blur)
            && self.noise.contains(s.noise)
    }

    fn attacks_text(&self) -> String {
        AttackType::SPOOFS.iter().zip(&self.attacks).map(|(a, w)| format!("{a}:{w}")).collect::<Vec<_>>().join(",")
    }

    fn parse_attacks(key: &str, v: &str) -> Result<[f64; 4]> {
        let mut w = [0.0; 4];
        for part in v.split(',') {
            let (name, weight) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("`{key}`: expected attack:weight, got `{part}`")))?;
            let a: AttackType =
                name.trim().parse().map_err(|_| Error::Config(format!("`{key}`: unknown attack `{name}`")))?;
            let idx = AttackType::SPOOFS
                .iter()
                .position(|&x| x == a)
                .ok_or_else(|| Error::Config(format!("`{key}`: `none` is not a spoof attack")))?;
            w[idx] = kv::parse_value(key, weight.trim())?;
        }
        if w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("`{key}`: weights must be non-negative with a positive sum")));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_domains: usize,
    /// Domains written to the target split instead of the source split.
    pub target_domains: Vec<usize>,
    pub ids_per_domain: usize,
    /// Samples per identity for each of live and spoof.
    pub samples_per_id: usize,
    pub image_size: usize,
    pub seed: u64,
    pub domains: Vec<DomainStyle>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::with_domains(4, vec![3], 12, 8, 32, 7)
    }
}

const SCALAR_KEYS: [&str; 6] =
    ["n_domains", "target_domains", "ids_per_domain", "samples_per_id", "image_size", "seed"];
const DOMAIN_FIELDS: [&str; 6] = ["brightness", "contrast", "hue", "blur", "noise", "attacks"];

impl DatasetSpec {
    pub fn with_domains(
        n_domains: usize,
        target_domains: Vec<usize>,
        ids_per_domain: usize,
        samples_per_id: usize,
        image_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_domains,
            target_domains,
            ids_per_domain,
            samples_per_id,
            image_size,
            seed,
            domains: (0..n_domains).map(DomainStyle::preset).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_domains == 0 || self.ids_per_domain == 0 || self.samples_per_id == 0 {
            return Err(Error::Config("n_domains, ids_per_domain and samples_per_id must be positive".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image_size {} is below 8", self.image_size)));
        }
        if self.domains.len() != self.n_domains {
            return Err(Error::Config(format!(
                "{} domain profiles for {} domains",
                self.domains.len(),
                self.n_domains
            )));
        }
        if let Some(&d) = self.target_domains.iter().find(|&&d| d >= self.n_domains) {
            return Err(Error::Config(format!("target domain {d} does not exist")));
        }
        if self.source_domains().is_empty() {
            return Err(Error::Config("at least one domain must be a source domain".into()));
        }
        for (d, p) in self.domains.iter().enumerate() {
            if p.contrast.lo <= 0.0 || p.blur.lo < 0.0 || p.noise.lo < 0.0 {
                return Err(Error::Config(format!(
                    "domain {d}: contrast must be positive, blur and noise non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn source_domains(&self) -> Vec<usize> {
        (0..self.n_domains).filter(|d| !self.target_domains.contains(d)).collect()
    }

    /// Identity ids owned by `domain`; ranges never overlap.
    pub fn identity_range(&self, domain: usize) -> std::ops::Range<usize> {
        domain * self.ids_per_domain..(domain + 1) * self.ids_per_domain
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut p = vec![
            ("n_domains".to_string(), self.n_domains.to_string()),
            ("target_domains".to_string(), kv::join(&self.target_domains)),
            ("ids_per_domain".to_string(), self.ids_per_domain.to_string()),
            ("samples_per_id".to_string(), self.samples_per_id.to_string()),
            ("image_size".to_string(), self.image_size.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        for (d, s) in self.domains.iter().enumerate() {
            let values = [
                s.brightness.to_string(),
                s.contrast.to_string(),
                s.hue.to_string(),
                s.blur.to_string(),
                s.noise.to_string(),
                s.attacks_text(),
            ];
            for (field, v) in DOMAIN_FIELDS.iter().zip(values) {
                p.push((format!("domain{d}.{field}"), v));
            }
        }
        p
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.to_pairs())
    }

    /// Defaults overridden by `pairs`. Domain profiles start from the
    /// presets and may be overridden field by field.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut spec = Self::default();
        let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        if let Some(v) = get("n_domains") {
            spec.n_domains = kv::parse_value("n_domains", v)?;
            spec.domains = (0..spec.n_domains).map(DomainStyle::preset).collect();
            spec.target_domains.retain(|&d| d < spec.n_domains);
        }
        if let Some(v) = get("target_domains") {
            spec.target_domains = kv::parse_list("target_domains", v)?;
        }
        if let Some(v) = get("ids_per_domain") {
            spec.ids_per_domain = kv::parse_value("ids_per_domain", v)?;
        }
        if let Some(v) = get("samples_per_id") {
            spec.samples_per_id = kv::parse_value("samples_per_id", v)?;
        }
        if let Some(v) = get("image_size") {
            spec.image_size = kv::parse_value("image_size", v)?;
        }
        if let Some(v) = get("seed") {
            spec.seed = kv::parse_value("seed", v)?;
        }
        for (key, v) in pairs {
            if SCALAR_KEYS.contains(&key.as_str()) {
                continue;
            }
            let parsed = key
                .strip_prefix("domain")
                .and_then(|rest| rest.split_once('.'))
                .and_then(|(d, field)| d.parse::<usize>().ok().map(|d| (d, field)))
                .filter(|(_, field)| DOMAIN_FIELDS.contains(field));
            let Some((d, field)) = parsed else {
                return Err(Error::Config(format!(
                    "unknown dataset key `{key}`; valid keys: {}, domain<N>.{{{}}}",
                    SCALAR_KEYS.join(", "),
                    DOMAIN_FIELDS.join(",")
                )));
            };
            let profile =
                spec.domains.get_mut(d).ok_or_else(|| Error::Config(format!("`{key}`: domain {d} does not exist")))?;
            match field {
                "brightness" => profile.brightness = v.parse()?,
                "contrast" => profile.contrast = v.parse()?,
                "hue" => profile.hue = v.parse()?,
                "blur" => profile.blur = v.parse()?,
                "noise" => profile.noise = v.parse()?,
                _ => profile.attacks = DomainStyle::parse_attacks(key, v)?,
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&kv::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn text_round_trip() {
        let mut spec = DatasetSpec::default();
        spec.domains[1].attacks = [0.0, 1.0, 0.5, 0.0];
        spec.domains[2].hue = Range::new(-0.3, 0.125);
        assert_eq!(DatasetSpec::from_text(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn partial_override() {
        let spec = DatasetSpec::from_text("n_domains = 2\ntarget_domains = none\ndomain1.noise = 0,0.5\n").unwrap();
        assert_eq!(spec.domains.len(), 2);
        assert!(spec.target_domains.is_empty());
        assert_eq!(spec.domains[1].noise, Range::new(0.0, 0.5));
    }

    #[test]
    fn unknown_keys_listed() {
        let e = DatasetSpec::from_text("colour = red").unwrap_err().to_string();
        assert!(e.contains("ids_per_domain"), "{e}");
        assert!(DatasetSpec::from_text("domain9.hue = 0,1").is_err());
        assert!(DatasetSpec::from_text("target_domains = 0,1,2,3").is_err());
    }

    #[test]
    fn disjoint_identity_ranges() {
        let spec = DatasetSpec::default();
        for a in 0..spec.n_domains {
            for b in a + 1..spec.n_domains {
                let (ra, rb) = (spec.identity_range(a), spec.identity_range(b));
                assert!(ra.end <= rb.start);
            }
        }
    }

    #[test]
    fn attack_mix_respects_zero_weights() {
        let mut p = DomainStyle::preset(0);
        p.attacks = [0.0, 1.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(p.sample_attack(&mut rng), AttackType::Moire);
        }
    }
}
