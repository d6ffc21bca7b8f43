use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::{Augment, SamplerConfig};
use crate::error::{Error, Result};
use crate::kv;
use crate::losses::{AaicForm, ContrastKind, LossWeights};
use crate::nn::EncoderConfig;
use crate::stylecross::{FlowMode, StylePlan};

/// How the best checkpoint is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Held-out source identities; target data is never read.
    #[default]
    SourceVal,
    /// The target domain itself, as in the original selection loop.
    TargetEval,
}

impl FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source_val" => Ok(Self::SourceVal),
            "target_eval" => Ok(Self::TargetEval),
            _ => Err(Error::Config(format!("unknown selection `{s}` (expected source_val or target_eval)"))),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SourceVal => "source_val",
            Self::TargetEval => "target_eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// 0 picks `floor(train samples / batch size)`.
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub lr_halving_period: usize,
    pub weight_decay: f64,
    pub encoder: EncoderConfig,
    /// CWSA inside `V` as well as `U`.
    pub cwsa_v: bool,
    pub plan_u: Option<StylePlan>,
    pub plan_v: Option<StylePlan>,
    pub contrast: ContrastKind,
    pub aaic_form: AaicForm,
    /// Train the identity branch `V`/`D` and the cross-branch terms.
    pub use_v: bool,
    pub weights: LossWeights,
    /// Softmax scale of the identity head in `L_id`.
    pub id_scale: f64,
    pub triplet_margin: f64,
    pub selection: Selection,
    pub val_fraction: f64,
    pub calibration_samples: usize,
    pub ids_per_domain: usize,
    pub live_per_id: usize,
    pub spoof_per_id: usize,
    pub augment: bool,
    pub crop_scale_min: f64,
    pub max_rotation_deg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mh = StylePlan::from_config("M,H", "parallel").expect("valid default plan");
        Self {
            seed: 0,
            epochs: 200,
            steps_per_epoch: 0,
            lr: 5e-4,
            lr_halving_period: 50,
            weight_decay: 5e-4,
            encoder: EncoderConfig::default(),
            cwsa_v: false,
            plan_u: mh.clone(),
            plan_v: mh,
            contrast: ContrastKind::Aaic,
            aaic_form: AaicForm::AsWritten,
            use_v: true,
            weights: LossWeights::default(),
            id_scale: 16.0,
            triplet_margin: 0.5,
            selection: Selection::SourceVal,
            val_fraction: 0.1,
            calibration_samples: 192,
            ids_per_domain: 4,
            live_per_id: 4,
            spoof_per_id: 4,
            augment: true,
            crop_scale_min: 0.8,
            max_rotation_deg: 10.0,
        }
    }
}

pub const KEYS: [&str; 38] = [
    "seed",
    "epochs",
    "steps_per_epoch",
    "lr",
    "lr_halving_period",
    "weight_decay",
    "input_size",
    "stage_channels",
    "feature_dim",
    "cwsa",
    "cwsa_reduction",
    "cwsa_v",
    "sc_levels",
    "sc_mode",
    "sc_levels_v",
    "sc_mode_v",
    "contrast",
    "aaic_form",
    "use_v",
    "lambda_aaic_u",
    "lambda_idamb",
    "lambda_ortho_u",
    "lambda_aaic_v",
    "lambda_liamb",
    "lambda_ortho_v",
    "tau",
    "am_scale",
    "m_live",
    "m_spoof",
    "id_scale",
    "triplet_margin",
    "selection",
    "val_fraction",
    "calibration_samples",
    "ids_per_domain",
    "live_per_id",
    "spoof_per_id",
    "augment",
];

/// Keys beyond [`KEYS`] that only shape augmentation.
pub const AUGMENT_KEYS: [&str; 2] = ["crop_scale_min", "max_rotation_deg"];

fn plan_pair(plan: &Option<StylePlan>) -> (String, String) {
    match plan {
        None => ("none".into(), FlowMode::Parallel.to_string()),
        Some(p) => (p.levels_config(), p.mode().to_string()),
    }
}

impl TrainConfig {
    pub fn valid_keys() -> Vec<&'static str> {
        KEYS.iter().chain(AUGMENT_KEYS.iter()).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.weights.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.lr_halving_period == 0 {
            return Err(Error::Config("epochs and lr_halving_period must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.id_scale > 0.0) {
            return Err(Error::Config("weight_decay must be non-negative and id_scale positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if self.ids_per_domain == 0 || self.live_per_id == 0 || self.spoof_per_id == 0 {
            return Err(Error::Config("ids_per_domain, live_per_id and spoof_per_id must be positive".into()));
        }
        if !(self.crop_scale_min > 0.0 && self.crop_scale_min <= 1.0) {
            return Err(Error::Config(format!("crop_scale_min must lie in (0, 1], got {}", self.crop_scale_min)));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.lr_halving_period) as i32)
    }

    pub fn encoder_v(&self) -> EncoderConfig {
        EncoderConfig { cwsa_enabled: self.cwsa_v, ..self.encoder.clone() }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            ids_per_domain: self.ids_per_domain,
            live_per_id: self.live_per_id,
            spoof_per_id: self.spoof_per_id,
            input_size: self.encoder.input_size,
            augment: self
                .augment
                .then_some(Augment { crop_scale: (self.crop_scale_min, 1.0), max_rotation_deg: self.max_rotation_deg }),
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let (lu, mu) = plan_pair(&self.plan_u);
        let (lv, mv) = plan_pair(&self.plan_v);
        let e = &self.encoder;
        let w = &self.weights;
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.epochs.to_string(),
            self.steps_per_epoch.to_string(),
            self.lr.to_string(),
            self.lr_halving_period.to_string(),
            self.weight_decay.to_string(),
            e.input_size.to_string(),
            kv::join(&e.stage_channels),
            e.feature_dim.to_string(),
            e.cwsa_enabled.to_string(),
            e.cwsa_reduction.to_string(),
            self.cwsa_v.to_string(),
            lu,
            mu,
            lv,
            mv,
            self.contrast.to_string(),
            self.aaic_form.to_string(),
            self.use_v.to_string(),
            w.aaic_u.to_string(),
            w.idamb.to_string(),
            w.ortho_u.to_string(),
            w.aaic_v.to_string(),
            w.liamb.to_string(),
            w.ortho_v.to_string(),
            w.tau.to_string(),
            w.am_scale.to_string(),
            w.m_live.to_string(),
            w.m_spoof.to_string(),
            self.id_scale.to_string(),
            self.triplet_margin.to_string(),
            self.selection.to_string(),
            self.val_fraction.to_string(),
            self.calibration_samples.to_string(),
            self.ids_per_domain.to_string(),
            self.live_per_id.to_string(),
            self.spoof_per_id.to_string(),
            self.augment.to_string(),
        ];
        let mut pairs: Vec<(String, String)> = KEYS.iter().map(|k| k.to_string()).zip(values).collect();
        pairs.push(("crop_scale_min".into(), self.crop_scale_min.to_string()));
        pairs.push(("max_rotation_deg".into(), self.max_rotation_deg.to_string()));
        pairs
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.to_pairs())
    }

    /// Applies `key = value` pairs on top of `self`.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut plan_u = plan_pair(&self.plan_u);
        let mut plan_v = plan_pair(&self.plan_v);
        for (k, v) in pairs {
            let key = k.as_str();
            let e = &mut self.encoder;
            let w = &mut self.weights;
            match key {
                "seed" => self.seed = kv::parse_value(key, v)?,
                "epochs" => self.epochs = kv::parse_value(key, v)?,
                "steps_per_epoch" => self.steps_per_epoch = kv::parse_value(key, v)?,
                "lr" => self.lr = kv::parse_value(key, v)?,
                "lr_halving_period" => self.lr_halving_period = kv::parse_value(key, v)?,
                "weight_decay" => self.weight_decay = kv::parse_value(key, v)?,
                "input_size" => e.input_size = kv::parse_value(key, v)?,
                "stage_channels" => {
                    let c: Vec<usize> = kv::parse_list(key, v)?;
                    e.stage_channels =
                        c.try_into().map_err(|_| Error::Config("stage_channels needs exactly three values".into()))?;
                }
                "feature_dim" => e.feature_dim = kv::parse_value(key, v)?,
                "cwsa" => e.cwsa_enabled = kv::parse_value(key, v)?,
                "cwsa_reduction" => e.cwsa_reduction = kv::parse_value(key, v)?,
                "cwsa_v" => self.cwsa_v = kv::parse_value(key, v)?,
                "sc_levels" => plan_u.0 = v.clone(),
                "sc_mode" => plan_u.1 = v.clone(),
                "sc_levels_v" => plan_v.0 = v.clone(),
                "sc_mode_v" => plan_v.1 = v.clone(),
                "contrast" => self.contrast = v.parse()?,
                "aaic_form" => self.aaic_form = v.parse()?,
                "use_v" => self.use_v = kv::parse_value(key, v)?,
                "lambda_aaic_u" => w.aaic_u = kv::parse_value(key, v)?,
                "lambda_idamb" => w.idamb = kv::parse_value(key, v)?,
                "lambda_ortho_u" => w.ortho_u = kv::parse_value(key, v)?,
                "lambda_aaic_v" => w.aaic_v = kv::parse_value(key, v)?,
                "lambda_liamb" => w.liamb = kv::parse_value(key, v)?,
                "lambda_ortho_v" => w.ortho_v = kv::parse_value(key, v)?,
                "tau" => w.tau = kv::parse_value(key, v)?,
                "am_scale" => w.am_scale = kv::parse_value(key, v)?,
                "m_live" => w.m_live = kv::parse_value(key, v)?,
                "m_spoof" => w.m_spoof = kv::parse_value(key, v)?,
                "id_scale" => self.id_scale = kv::parse_value(key, v)?,
                "triplet_margin" => self.triplet_margin = kv::parse_value(key, v)?,
                "selection" => self.selection = v.parse()?,
                "val_fraction" => self.val_fraction = kv::parse_value(key, v)?,
                "calibration_samples" => self.calibration_samples = kv::parse_value(key, v)?,
                "ids_per_domain" => self.ids_per_domain = kv::parse_value(key, v)?,
                "live_per_id" => self.live_per_id = kv::parse_value(key, v)?,
                "spoof_per_id" => self.spoof_per_id = kv::parse_value(key, v)?,
                "augment" => self.augment = kv::parse_value(key, v)?,
                "crop_scale_min" => self.crop_scale_min = kv::parse_value(key, v)?,
                "max_rotation_deg" => self.max_rotation_deg = kv::parse_value(key, v)?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown config key `{key}`; valid keys: {}",
                        Self::valid_keys().join(", ")
                    )))
                }
            }
        }
        self.plan_u = StylePlan::from_config(&plan_u.0, &plan_u.1)?;
        self.plan_v = StylePlan::from_config(&plan_v.0, &plan_v.1)?;
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply(&kv::parse(text)?)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
