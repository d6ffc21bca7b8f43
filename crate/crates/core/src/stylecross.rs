//! Feature-level style augmentation by exchanging per-channel statistics
//! between samples that share a group key (liveness for the liveness
//! encoder, identity for the identity encoder).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Epsilon inside the channel standard deviation.
pub const STYLE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Low,
    Mid,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Mid, Level::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Level::Low => 'L',
            Level::Mid => 'M',
            Level::High => 'H',
        }
    }

    fn from_letter(c: &str) -> Result<Self> {
        match c.trim() {
            "L" | "l" | "low" => Ok(Level::Low),
            "M" | "m" | "mid" => Ok(Level::Mid),
            "H" | "h" | "high" => Ok(Level::High),
            other => Err(Error::Config(format!("unknown style-cross level `{other}` (expected L, M or H)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowMode {
    /// One augmented pass with style cross at every active level (`×`).
    Cascaded,
    /// One augmented pass per active level (`+`).
    Parallel,
}

impl FromStr for FlowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cascaded" | "x" | "×" => Ok(FlowMode::Cascaded),
            "parallel" | "+" => Ok(FlowMode::Parallel),
            other => Err(Error::Config(format!("unknown style-cross mode `{other}` (expected cascaded or parallel)"))),
        }
    }
}

impl fmt::Display for FlowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowMode::Cascaded => "cascaded",
            FlowMode::Parallel => "parallel",
        })
    }
}

/// Which encoder levels apply style cross, and how multiple levels combine.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StylePlan {
    levels: Vec<Level>,
    mode: FlowMode,
}

impl StylePlan {
    pub fn new(levels: &[Level], mode: FlowMode) -> Result<Self> {
        let mut levels = levels.to_vec();
        levels.sort();
        levels.dedup();
        if levels.is_empty() {
            return Err(Error::invalid("style plan needs at least one active level"));
        }
        let mode = if levels.len() == 1 { FlowMode::Cascaded } else { mode };
        Ok(Self { levels, mode })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Mode with single-level plans normalized to cascaded.
    pub fn mode(&self) -> FlowMode {
        if self.levels.len() <= 1 {
            FlowMode::Cascaded
        } else {
            self.mode
        }
    }

    pub fn is_active(&self, level: Level) -> bool {
        self.levels.contains(&level)
    }

    /// Level sets, one per augmented pass.
    pub fn expand_flows(&self) -> Vec<Vec<Level>> {
        match self.mode() {
            FlowMode::Cascaded => vec![self.levels.clone()],
            FlowMode::Parallel => self.levels.iter().map(|&l| vec![l]).collect(),
        }
    }

    /// Parses the config pair `sc_levels = M,H` / `sc_mode = parallel`.
    /// `none` (or an empty list) yields no plan.
    pub fn from_config(levels: &str, mode: &str) -> Result<Option<Self>> {
        let levels = levels.trim();
        if levels.is_empty() || levels.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        let parsed = levels.split(',').map(Level::from_letter).collect::<Result<Vec<_>>>()?;
        Ok(Some(Self::new(&parsed, mode.parse()?)?))
    }

    pub fn levels_config(&self) -> String {
        self.levels.iter().map(|l| l.letter().to_string()).collect::<Vec<_>>().join(",")
    }

    /// The eleven flows, named `L`, `M`, `H`, `LxM`, ..., `L+M+H`.
    pub fn all_flows() -> Vec<StylePlan> {
        const NAMES: [&str; 11] = ["L", "M", "H", "LxM", "LxH", "MxH", "LxMxH", "L+M", "L+H", "M+H", "L+M+H"];
        NAMES.iter().map(|n| n.parse().expect("valid flow name")).collect()
    }
}

impl fmt::Display for StylePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sep = match self.mode() {
            FlowMode::Cascaded => "x",
            FlowMode::Parallel => "+",
        };
        let names: Vec<String> = self.levels.iter().map(|l| l.letter().to_string()).collect();
        f.write_str(&names.join(sep))
    }
}

impl FromStr for StylePlan {
    type Err = Error;

    /// Flow names such as `M+H` or `LxMxH`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (mode, parts): (FlowMode, Vec<&str>) = if s.contains('+') {
            (FlowMode::Parallel, s.split('+').collect())
        } else {
            (FlowMode::Cascaded, s.split(['x', '×']).collect())
        };
        let levels = parts.into_iter().map(Level::from_letter).collect::<Result<Vec<_>>>()?;
        StylePlan::new(&levels, mode)
    }
}

/// A label-preserving permutation: sample `i` takes its style from
/// sample `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    perm: Vec<usize>,
}

impl Pairing {
    /// Validates that `perm` is a permutation mapping each index to one
    /// with the same group key.
    pub fn new<K: PartialEq>(perm: Vec<usize>, keys: &[K]) -> Result<Self> {
        if perm.len() != keys.len() {
            return Err(Error::invalid(format!("pairing covers {} samples, labels cover {}", perm.len(), keys.len())));
        }
        let mut seen = vec![false; perm.len()];
        for (i, &j) in perm.iter().enumerate() {
            if j >= perm.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::invalid("pairing is not a permutation"));
            }
            if keys[i] != keys[j] {
                return Err(Error::invalid(format!("pairing maps sample {i} to {j} across label groups")));
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect() }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// One optional pairing per encoder level.
#[derive(Debug, Clone, Default)]
pub struct LevelPairings {
    slots: [Option<Pairing>; 3],
}

impl LevelPairings {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn set(&mut self, level: Level, pairing: Pairing) {
        self.slots[level.index()] = Some(pairing);
    }

    pub fn get(&self, level: Level) -> Option<&Pairing> {
        self.slots[level.index()].as_ref()
    }

    /// Identity pairing at every level.
    pub fn identity(n: usize) -> Self {
        let mut p = Self::none();
        for l in Level::ALL {
            p.set(l, Pairing::identity(n));
        }
        p
    }

    /// Fresh pairings for every active level of `plan`.
    pub fn sample<K: Ord + Clone, R: Rng + ?Sized>(plan: &StylePlan, keys: &[K], rng: &mut R) -> Self {
        let mut p = Self::none();
        for &l in plan.levels() {
            p.set(l, Pairing { perm: make_pairing(keys, rng) });
        }
        p
    }
}

/// Maximum number of shuffles drawn per group while avoiding fixed points.
pub const PAIRING_ATTEMPTS: usize = 16;

/// Group-restricted random permutation. Each group of size > 1 receives a
/// uniform shuffle, redrawn up to [`PAIRING_ATTEMPTS`] times until it has
/// no fixed point; singleton groups map to themselves.
pub fn make_pairing<K: Ord + Clone, R: Rng + ?Sized>(keys: &[K], rng: &mut R) -> Vec<usize> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.clone()).or_default().push(i);
    }
    let mut perm: Vec<usize> = (0..keys.len()).collect();
    for members in groups.values() {
        if members.len() < 2 {
            continue;
        }
        let mut shuffled = members.clone();
        for _ in 0..PAIRING_ATTEMPTS {
            shuffled.copy_from_slice(members);
            shuffled.shuffle(rng);
            if shuffled.iter().zip(members).all(|(a, b)| a != b) {
                break;
            }
        }
        for (&dst, &src) in members.iter().zip(&shuffled) {
            perm[dst] = src;
        }
    }
    perm
}

/// Re-styles `content` with the channel statistics of `style`:
/// `σ_style · (content − μ_content) / σ_content + μ_style`, where
/// `σ = sqrt(var + STYLE_EPS)`.
///
/// Accepts single C x H x W maps (constants) or N x C x H x W batches, in
/// which case sample `i` of `content` is paired with sample `i` of `style`.
pub fn style_cross(content: &Tensor, style: &Tensor) -> Result<Tensor> {
    let s = content.shape().to_vec();
    if s != style.shape() || !(s.len() == 3 || s.len() == 4) {
        return Err(Error::shape(
            "style_cross",
            format!("content {:?} and style {:?} must be equal C x H x W or N x C x H x W shapes", s, style.shape()),
        ));
    }
    if s.len() == 3 {
        if content.requires_grad() || style.requires_grad() {
            return Err(Error::invalid(
                "style_cross on single maps is for constants; pass N x C x H x W batches to differentiate",
            ));
        }
        let lift = |t: &Tensor| Tensor::new(&[1, s[0], s[1], s[2]], t.data().to_vec());
        let out = style_cross(&lift(content)?, &lift(style)?)?;
        return Tensor::new(&s, out.data().to_vec());
    }
    let n = s[0];
    let both = Tensor::concat(&[content, style], 0)?;
    let perm: Vec<usize> = (n..2 * n).chain(0..n).collect();
    style_cross_batch(&both, &perm)?.slice(0, 0, n)
}

/// Batched style cross on an N x C x H x W map: sample `i` receives the
/// channel statistics of sample `perm[i]`. Differentiable in all inputs.
pub fn style_cross_batch(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || perm.len() != s[0] {
        return Err(Error::shape("style_cross", format!("map {s:?} with pairing of length {}", perm.len())));
    }
    let (h, w) = (s[2], s[3]);
    let mean = x.channel_mean()?;
    let std = x.channel_std(STYLE_EPS)?;
    let inv_std = std.log()?.scale(-1.0)?.exp()?;
    let normalized = x.sub(&mean.broadcast_channel(h, w)?)?.mul(&inv_std.broadcast_channel(h, w)?)?;
    let style_std = std.gather_rows(perm)?;
    let style_mean = mean.gather_rows(perm)?;
    normalized.mul(&style_std.broadcast_channel(h, w)?)?.add(&style_mean.broadcast_channel(h, w)?)
}
