//! Objective terms: orthogonality, ambiguity, augmented-instance contrast,
//! asymmetric AM-softmax, identity cross-entropy, the two baseline
//! contrasts, and the weighted FAS/FR totals.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added to the masked diagonal before the contrast softmax; `exp` of it
/// underflows to exactly zero.
const DIAGONAL_MASK: f64 = -1e9;
const NORM_TOLERANCE: f64 = 1e-3;
const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub aaic_u: f64,
    pub idamb: f64,
    pub ortho_u: f64,
    pub aaic_v: f64,
    pub liamb: f64,
    pub ortho_v: f64,
    pub tau: f64,
    pub am_scale: f64,
    pub m_live: f64,
    pub m_spoof: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            aaic_u: 1.0,
            idamb: 1.0,
            ortho_u: 1.0,
            aaic_v: 1.0,
            liamb: 1.0,
            ortho_v: 1.0,
            tau: 0.07,
            am_scale: 30.0,
            m_live: 0.4,
            m_spoof: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.am_scale > 0.0) {
            return Err(Error::Config(format!("am_scale must be positive, got {}", self.am_scale)));
        }
        for (name, m) in [("m_live", self.m_live), ("m_spoof", self.m_spoof)] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AaicForm {
    #[default]
    AsWritten,
    Log,
}

impl FromStr for AaicForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(Self::AsWritten),
            "log" => Ok(Self::Log),
            _ => Err(Error::Config(format!("unknown aaic form `{s}` (expected as_written or log)"))),
        }
    }
}

impl fmt::Display for AaicForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AsWritten => "as_written",
            Self::Log => "log",
        })
    }
}

/// Which contrast the liveness branch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContrastKind {
    #[default]
    Aaic,
    Binary,
    Triplet,
}

impl ContrastKind {
    pub const ALL: [ContrastKind; 3] = [Self::Aaic, Self::Binary, Self::Triplet];
}

impl FromStr for ContrastKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aaic" => Ok(Self::Aaic),
            "binary" => Ok(Self::Binary),
            "triplet" => Ok(Self::Triplet),
            _ => Err(Error::Config(format!("unknown contrast `{s}` (expected aaic, binary or triplet)"))),
        }
    }
}

impl fmt::Display for ContrastKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Aaic => "aaic",
            Self::Binary => "binary",
            Self::Triplet => "triplet",
        })
    }
}

/// Contrast labels for a pool laid out as the `B` originals followed by
/// each augmented flow's `B` views, in the same sample order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastLabeling {
    pub labels: Vec<usize>,
}

impl ContrastLabeling {
    /// Live views all share label 0; spoof original `i` and its augmented
    /// copies share `i + 1`.
    pub fn fas(is_live: &[bool], flows: usize) -> Self {
        let base: Vec<usize> = is_live.iter().enumerate().map(|(i, &l)| if l { 0 } else { i + 1 }).collect();
        Self::repeat(&base, flows)
    }

    /// Every view of identity `k` gets label `k`.
    pub fn fr(identities: &[usize], flows: usize) -> Self {
        Self::repeat(identities, flows)
    }

    /// Live and spoof each form one class.
    pub fn binary(is_live: &[bool], flows: usize) -> Self {
        let base: Vec<usize> = is_live.iter().map(|&l| usize::from(!l)).collect();
        Self::repeat(&base, flows)
    }

    fn repeat(base: &[usize], flows: usize) -> Self {
        let mut labels = Vec::with_capacity(base.len() * (flows + 1));
        for _ in 0..=flows {
            labels.extend_from_slice(base);
        }
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
    Tensor::new(shape, data)
}

/// Row sums of a 2D tensor as a `rows x 1` column.
fn row_sums(t: &Tensor) -> Result<Tensor> {
    let cols = t.shape()[1];
    t.matmul(&constant(&[cols, 1], vec![1.0; cols])?)
}

fn require_2d(kind: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(kind, format!("expected a 2D tensor, got {s:?}"))),
    }
}

fn check_normalized(kind: &'static str, t: &Tensor) -> Result<()> {
    let (_, n) = require_2d(kind, t)?;
    for (i, row) in t.data().chunks(n).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::invalid(format!("{kind}: row {i} has norm {norm}, expected unit rows")));
        }
    }
    Ok(())
}

/// Mean squared cosine over all `(i, j)` pairs of unit rows.
pub fn orthogonality_loss(fu: &Tensor, fv: &Tensor) -> Result<Tensor> {
    let (bu, nu) = require_2d("orthogonality", fu)?;
    let (bv, nv) = require_2d("orthogonality", fv)?;
    if nu != nv {
        return Err(Error::shape("orthogonality", format!("feature widths {nu} and {nv} differ")));
    }
    check_normalized("orthogonality", fu)?;
    check_normalized("orthogonality", fv)?;
    fu.matmul(&fv.transpose()?)?.square()?.sum()?.scale(1.0 / (bu * bv) as f64)
}

/// Mean squared distance of each probability row from the uniform vector.
pub fn ambiguity_loss(probs: &Tensor) -> Result<Tensor> {
    let (b, k) = require_2d("ambiguity", probs)?;
    if k < 2 {
        return Err(Error::invalid(format!("ambiguity loss needs at least 2 classes, got {k}")));
    }
    for (i, row) in probs.data().chunks(k).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::invalid(format!("ambiguity: row {i} sums to {s}")));
        }
    }
    probs.affine(1.0, -1.0 / k as f64)?.square()?.sum()?.scale(1.0 / b as f64)
}

/// Row-wise softmax of `z_i·z_j / τ` over `j ≠ i` for L2-normalized views.
fn masked_similarity_softmax(views: &Tensor, tau: f64) -> Result<Tensor> {
    let (p, _) = require_2d("contrast", views)?;
    let z = views.l2_normalize(1)?;
    let mut diag = vec![0.0; p * p];
    for i in 0..p {
        diag[i * p + i] = DIAGONAL_MASK;
    }
    z.matmul(&z.transpose()?)?.scale(1.0 / tau)?.add(&constant(&[p, p], diag)?)?.softmax(1)
}

/// Augmented-instance contrast over a pool of `P` views. Anchors without
/// positives contribute zero but still count toward `P`.
pub fn aaic_loss(views: &Tensor, labeling: &ContrastLabeling, tau: f64, form: AaicForm) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (p, _) = require_2d("aaic", views)?;
    if p < 2 || labeling.len() != p {
        return Err(Error::shape("aaic", format!("{p} views with {} labels (need at least 2)", labeling.len())));
    }
    let y = &labeling.labels;
    let soft = masked_similarity_softmax(views, tau)?;
    let mut weights = vec![0.0; p * p];
    for i in 0..p {
        let positives = (0..p).filter(|&j| j != i && y[j] == y[i]).count();
        for j in 0..p {
            if j != i && y[j] == y[i] {
                weights[i * p + j] = match form {
                    AaicForm::AsWritten => 1.0,
                    AaicForm::Log => 1.0 / positives as f64,
                };
            }
        }
    }
    let mask = constant(&[p, p], weights.iter().map(|&w| if w > 0.0 { 0.0 } else { 1.0 }).collect())?;
    let weights = constant(&[p, p], weights)?;
    let terms = match form {
        AaicForm::AsWritten => soft,
        // Non-positive entries become log(t + 1) and are zeroed by `weights`.
        AaicForm::Log => soft.add(&mask)?.log()?,
    };
    terms.mul(&weights)?.sum()?.scale(-1.0 / p as f64)
}

/// Mean-distance triplet: per anchor, `relu(mean d²(pos) − mean d²(neg) + margin)`
/// on unit features, averaged over anchors that have both.
pub fn triplet_loss(views: &Tensor, labels: &[usize], margin: f64) -> Result<Tensor> {
    let (p, _) = require_2d("triplet", views)?;
    if labels.len() != p {
        return Err(Error::shape("triplet", format!("{p} views with {} labels", labels.len())));
    }
    let z = views.l2_normalize(1)?;
    let sim = z.matmul(&z.transpose()?)?;
    let mut w = vec![0.0; p * p];
    let mut valid = vec![0.0; p];
    for i in 0..p {
        let pos = (0..p).filter(|&j| j != i && labels[j] == labels[i]).count();
        let neg = (0..p).filter(|&j| labels[j] != labels[i]).count();
        if pos == 0 || neg == 0 {
            continue;
        }
        valid[i] = 1.0;
        for j in 0..p {
            if j == i {
                continue;
            }
            // d² = 2 − 2cos, so the pos/neg gap is 2·(mean cos_neg − mean cos_pos).
            w[i * p + j] = if labels[j] == labels[i] { -2.0 / pos as f64 } else { 2.0 / neg as f64 };
        }
    }
    let count: f64 = valid.iter().sum();
    if count == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let gaps = row_sums(&sim.mul(&constant(&[p, p], w)?)?)?.affine(1.0, margin)?.relu()?;
    gaps.mul(&constant(&[p, 1], valid)?)?.sum()?.scale(1.0 / count)
}

fn picked_log_probs(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = require_2d("cross_entropy", logits)?;
    if labels.len() != b {
        return Err(Error::shape("cross_entropy", format!("{b} rows with {} labels", labels.len())));
    }
    let mut onehot = vec![0.0; b * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        onehot[i * k + y] = 1.0;
    }
    row_sums(&logits.softmax(1)?.mul(&constant(&[b, k], onehot)?)?)?.log()
}

/// Mean softmax cross-entropy of `logits` against class indices.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let b = labels.len().max(1);
    picked_log_probs(logits, labels)?.sum()?.scale(-1.0 / b as f64)
}

/// Asymmetric AM-softmax on `B x 2` cosines; label 0 is live, 1 is spoof.
/// The target cosine loses its class margin before scaling by `s`.
pub fn asym_am_softmax(cosines: &Tensor, labels: &[usize], s: f64, m_live: f64, m_spoof: f64) -> Result<Tensor> {
    let (b, k) = require_2d("asym_am_softmax", cosines)?;
    if k != 2 || labels.len() != b {
        return Err(Error::shape(
            "asym_am_softmax",
            format!("cosines {:?} with {} labels", cosines.shape(), labels.len()),
        ));
    }
    let mut margins = vec![0.0; b * 2];
    for (i, &y) in labels.iter().enumerate() {
        margins[i * 2 + y.min(1)] = match y {
            0 => m_live,
            1 => m_spoof,
            _ => return Err(Error::invalid(format!("liveness label {y} is neither 0 (live) nor 1 (spoof)"))),
        };
    }
    cross_entropy(&cosines.sub(&constant(&[b, 2], margins)?)?.scale(s)?, labels)
}

/// `Σ weight·term`, failing on the first non-finite term by name.
pub fn weighted_total(terms: &[(&str, f64, &Tensor)]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for &(name, w, t) in terms {
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        if !t.item().is_finite() {
            return Err(Error::NonFiniteLoss(format!("{name} = {}", t.item())));
        }
        let scaled = if w == 1.0 { t.clone() } else { t.scale(w)? };
        total = Some(match total {
            None => scaled,
            Some(acc) => acc.add(&scaled)?,
        });
    }
    total.ok_or_else(|| Error::invalid("empty loss composition"))
}

/// Components of the liveness objective.
#[derive(Debug, Clone)]
pub struct FasTerms {
    pub cls: Tensor,
    pub contrast: Tensor,
    pub idamb: Tensor,
    pub ortho: Tensor,
}

/// Components of the identity objective.
#[derive(Debug, Clone)]
pub struct FrTerms {
    pub id: Tensor,
    pub contrast: Tensor,
    pub liamb: Tensor,
    pub ortho: Tensor,
}

pub fn compose_fas_loss(t: &FasTerms, w: &LossWeights) -> Result<Tensor> {
    weighted_total(&[
        ("L_cls", 1.0, &t.cls),
        ("L_aaicU", w.aaic_u, &t.contrast),
        ("L_idamb", w.idamb, &t.idamb),
        ("L_orthoU", w.ortho_u, &t.ortho),
    ])
}

pub fn compose_fr_loss(t: &FrTerms, w: &LossWeights) -> Result<Tensor> {
    weighted_total(&[
        ("L_id", 1.0, &t.id),
        ("L_aaicV", w.aaic_v, &t.contrast),
        ("L_liamb", w.liamb, &t.liamb),
        ("L_orthoV", w.ortho_v, &t.ortho),
    ])
}
