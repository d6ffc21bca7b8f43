use rand::Rng;

use super::adam::Adam;
use super::config::TrainConfig;
use crate::data::{stream_rng, Batch};
use crate::error::{Error, Result};
use crate::losses::{
    aaic_loss, ambiguity_loss, asym_am_softmax, compose_fas_loss, compose_fr_loss, cross_entropy, orthogonality_loss,
    triplet_loss, ContrastKind, ContrastLabeling, FasTerms, FrTerms,
};
use crate::nn::{detached, prefixed, prefixed_mut, Encoded, Encoder, Head, HeadKind, Module};
use crate::stylecross::LevelPairings;
use crate::tensor::Tensor;

/// Column names of the per-step loss log, in [`StepLosses::values`] order.
pub const LOSS_COLUMNS: [&str; 11] =
    ["step", "L_cls", "L_aaicU", "L_idamb", "L_orthoU", "L_FAS", "L_id", "L_aaicV", "L_liamb", "L_orthoV", "L_FR"];

/// The two encoders and their heads.
#[derive(Debug, Clone)]
pub struct Models {
    pub u: Encoder,
    pub c: Head,
    pub v: Encoder,
    pub d: Head,
}

impl Models {
    /// Fresh weights drawn from the seed's initialization stream.
    pub fn new(cfg: &TrainConfig, num_identities: usize) -> Result<Self> {
        let mut rng = stream_rng(cfg.seed, 0);
        let u = Encoder::new(&mut rng, cfg.encoder.clone())?;
        let c = Head::classifier(&mut rng, u.feature_dim())?;
        let v = Encoder::new(&mut rng, cfg.encoder_v())?;
        let d = Head::new(&mut rng, HeadKind::Discriminator, num_identities.max(2), v.feature_dim())?;
        Ok(Self { u, c, v, d })
    }

    pub fn num_identities(&self) -> usize {
        self.d.num_classes()
    }

    /// Constant copies for inference.
    pub fn frozen(&self) -> Self {
        Self { u: detached(&self.u), c: detached(&self.c), v: detached(&self.v), d: detached(&self.d) }
    }
}

impl Module for Models {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("u", self.u.params());
        out.extend(prefixed("c", self.c.params()));
        out.extend(prefixed("v", self.v.params()));
        out.extend(prefixed("d", self.d.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = prefixed_mut("u", self.u.params_mut());
        out.extend(prefixed_mut("c", self.c.params_mut()));
        out.extend(prefixed_mut("v", self.v.params_mut()));
        out.extend(prefixed_mut("d", self.d.params_mut()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub u: Adam,
    pub c: Adam,
    pub v: Adam,
    pub d: Adam,
}

impl Optimizers {
    pub fn new(m: &Models, weight_decay: f64) -> Self {
        Self {
            u: Adam::new(&m.u, weight_decay),
            c: Adam::new(&m.c, weight_decay),
            v: Adam::new(&m.v, weight_decay),
            d: Adam::new(&m.d, weight_decay),
        }
    }

    /// `(name, state)` pairs in a fixed order.
    pub fn named(&self) -> [(&'static str, &Adam); 4] {
        [("u", &self.u), ("c", &self.c), ("v", &self.v), ("d", &self.d)]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Adam); 4] {
        [("u", &mut self.u), ("c", &mut self.c), ("v", &mut self.v), ("d", &mut self.d)]
    }
}

/// Scalar loss values of one step. Terms of a disabled branch are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub step: u64,
    pub cls: f64,
    pub aaic_u: f64,
    pub idamb: f64,
    pub ortho_u: f64,
    pub fas: f64,
    pub id: f64,
    pub aaic_v: f64,
    pub liamb: f64,
    pub ortho_v: f64,
    pub fr: f64,
}

impl StepLosses {
    pub fn values(&self) -> [f64; 10] {
        [
            self.cls,
            self.aaic_u,
            self.idamb,
            self.ortho_u,
            self.fas,
            self.id,
            self.aaic_v,
            self.liamb,
            self.ortho_v,
            self.fr,
        ]
    }

    pub fn to_row(&self) -> String {
        let mut s = self.step.to_string();
        for v in self.values() {
            s.push_str(&format!(", {v}"));
        }
        s
    }
}

fn pool(enc: &Encoded) -> Result<Tensor> {
    let mut parts: Vec<&Tensor> = vec![&enc.features];
    parts.extend(enc.augmented.iter());
    if parts.len() == 1 {
        return Ok(enc.features.clone());
    }
    Tensor::concat(&parts, 0)
}

fn liveness_contrast(cfg: &TrainConfig, enc: &Encoded, is_live: &[bool]) -> Result<Tensor> {
    let flows = enc.augmented.len();
    let views = pool(enc)?;
    match cfg.contrast {
        ContrastKind::Aaic => aaic_loss(&views, &ContrastLabeling::fas(is_live, flows), cfg.weights.tau, cfg.aaic_form),
        ContrastKind::Binary => {
            aaic_loss(&views, &ContrastLabeling::binary(is_live, flows), cfg.weights.tau, cfg.aaic_form)
        }
        ContrastKind::Triplet => {
            triplet_loss(&views, &ContrastLabeling::binary(is_live, flows).labels, cfg.triplet_margin)
        }
    }
}

fn zero() -> Tensor {
    Tensor::scalar(0.0)
}

/// One alternating update. Phase A trains `U` and `C` against a detached
/// `V`/`D`; phase B trains `V` and `D` against detached `U` features and
/// the updated, detached `C`. `id_classes[i]` is the discriminator class
/// of sample `i`.
pub fn train_step<R: Rng + ?Sized>(
    models: &mut Models,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    batch: &Batch,
    id_classes: &[usize],
    lr: f64,
    rng: &mut R,
) -> Result<StepLosses> {
    train_step_observed(models, opts, cfg, batch, id_classes, lr, rng, |_| {})
}

/// [`train_step`] with a callback that sees the models between phases.
#[allow(clippy::too_many_arguments)]
pub fn train_step_observed<R: Rng + ?Sized>(
    models: &mut Models,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    batch: &Batch,
    id_classes: &[usize],
    lr: f64,
    rng: &mut R,
    mut between_phases: impl FnMut(&Models),
) -> Result<StepLosses> {
    let b = batch.len();
    if id_classes.len() != b {
        return Err(Error::invalid(format!("{b} samples with {} identity classes", id_classes.len())));
    }
    let x = &batch.images;
    let pair_u = match &cfg.plan_u {
        Some(p) => LevelPairings::sample(p, &batch.is_live, rng),
        None => LevelPairings::none(),
    };
    let pair_v = match &cfg.plan_v {
        Some(p) if cfg.use_v => LevelPairings::sample(p, &batch.identities, rng),
        _ => LevelPairings::none(),
    };

    let enc_v = if cfg.use_v { Some(models.v.encode(x, cfg.plan_v.as_ref(), &pair_v)?) } else { None };
    let enc_u = models.u.encode(x, cfg.plan_u.as_ref(), &pair_u)?;
    let fu_n = enc_u.features.l2_normalize(1)?;

    let cls = asym_am_softmax(
        &models.c.cosines(&enc_u.features)?,
        &batch.liveness_labels(),
        cfg.weights.am_scale,
        cfg.weights.m_live,
        cfg.weights.m_spoof,
    )?;
    let contrast_u = liveness_contrast(cfg, &enc_u, &batch.is_live)?;
    let (idamb, ortho_u) = match &enc_v {
        Some(ev) => {
            let d_frozen = detached(&models.d);
            let idamb = ambiguity_loss(&d_frozen.forward(&enc_u.features, cfg.id_scale)?.probs)?;
            let fv_frozen = ev.features.detach().l2_normalize(1)?;
            (idamb, orthogonality_loss(&fu_n, &fv_frozen)?)
        }
        None => (zero(), zero()),
    };
    let fas_terms = FasTerms { cls, contrast: contrast_u, idamb, ortho: ortho_u };
    let fas = compose_fas_loss(&fas_terms, &cfg.weights)?;
    models.u.zero_grad();
    models.c.zero_grad();
    fas.backward()?;
    opts.u.apply(&mut models.u, lr)?;
    opts.c.apply(&mut models.c, lr)?;

    let mut out = StepLosses {
        step: opts.u.step,
        cls: fas_terms.cls.item(),
        aaic_u: fas_terms.contrast.item(),
        idamb: fas_terms.idamb.item(),
        ortho_u: fas_terms.ortho.item(),
        fas: fas.item(),
        ..StepLosses::default()
    };
    between_phases(models);

    let Some(ev) = enc_v else { return Ok(out) };
    let fv_n = ev.features.l2_normalize(1)?;
    let id = cross_entropy(&models.d.cosines(&ev.features)?.scale(cfg.id_scale)?, id_classes)?;
    let contrast_v = aaic_loss(
        &pool(&ev)?,
        &ContrastLabeling::fr(&batch.identities, ev.augmented.len()),
        cfg.weights.tau,
        cfg.aaic_form,
    )?;
    let liamb = ambiguity_loss(&detached(&models.c).forward(&ev.features, 1.0)?.probs)?;
    let ortho_v = orthogonality_loss(&fv_n, &fu_n.detach())?;
    let fr_terms = FrTerms { id, contrast: contrast_v, liamb, ortho: ortho_v };
    let fr = compose_fr_loss(&fr_terms, &cfg.weights)?;
    models.v.zero_grad();
    models.d.zero_grad();
    fr.backward()?;
    opts.v.apply(&mut models.v, lr)?;
    opts.d.apply(&mut models.d, lr)?;

    out.id = fr_terms.id.item();
    out.aaic_v = fr_terms.contrast.item();
    out.liamb = fr_terms.liamb.item();
    out.ortho_v = fr_terms.ortho.item();
    out.fr = fr.item();
    Ok(out)
}
