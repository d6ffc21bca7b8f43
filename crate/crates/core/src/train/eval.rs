use super::step::Models;
use crate::data::{stack_images, Dataset};
use crate::error::Result;
use crate::metrics::{eer_threshold, hter, probe_disentanglement, roc_auc, Embeddings, ProbeReport, ScoreSet};

const EVAL_CHUNK: usize = 64;

/// `(f_u, f_v)` row-major features of `rows`, without style flows.
pub fn features(models: &Models, ds: &Dataset, rows: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = models.frozen();
    let size = m.u.config().input_size;
    let (mut fu, mut fv) = (Vec::new(), Vec::new());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = stack_images(ds, chunk, size)?;
        fu.extend_from_slice(m.u.features(&x)?.data());
        fv.extend_from_slice(m.v.features(&x)?.data());
    }
    Ok((fu, fv))
}

/// Live-class probability of `C` at unit scale; a strictly monotone
/// function of the margin `cos_live − cos_spoof`, so rankings and
/// thresholds match any other scale without saturating.
fn live_probability(models: &Models, f: &[f64], dim: usize) -> Result<Vec<f64>> {
    let t = crate::tensor::Tensor::new(&[f.len() / dim, dim], f.to_vec())?;
    let p = models.c.forward(&t, 1.0)?.probs;
    Ok(p.data().chunks(2).map(|r| r[0]).collect())
}

/// Liveness scores of `rows`, higher meaning more live.
pub fn score_rows(models: &Models, ds: &Dataset, rows: &[usize]) -> Result<ScoreSet> {
    let m = models.frozen();
    let size = m.u.config().input_size;
    let dim = m.u.feature_dim();
    let mut scores = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let f = m.u.features(&stack_images(ds, chunk, size)?)?;
        scores.extend(live_probability(&m, f.data(), dim)?);
    }
    let live = rows.iter().map(|&r| ds.entries[r].liveness.is_live()).collect();
    ScoreSet::new(scores, live)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub auc: f64,
    pub hter: f64,
    pub threshold: f64,
    /// Equal error rate of the set under its own best threshold.
    pub eer: f64,
}

impl EvalReport {
    pub fn from_scores(set: &ScoreSet, threshold: f64) -> Self {
        Self {
            samples: set.scores().len(),
            auc: roc_auc(set),
            hter: hter(set, threshold),
            threshold,
            eer: eer_threshold(set).1,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "samples = {}\nauc = {}\nhter = {}\nthreshold = {}\neer = {}\n",
            self.samples, self.auc, self.hter, self.threshold, self.eer
        )
    }
}

/// Scores `rows` and reports AUC and HTER at `threshold`.
pub fn evaluate(models: &Models, ds: &Dataset, rows: &[usize], threshold: f64) -> Result<EvalReport> {
    Ok(EvalReport::from_scores(&score_rows(models, ds, rows)?, threshold))
}

/// Disentanglement probes over `rows`.
pub fn probe(models: &Models, ds: &Dataset, rows: &[usize]) -> Result<ProbeReport> {
    let (fu, fv) = features(models, ds, rows)?;
    let dim = models.u.feature_dim();
    let ids: Vec<usize> = rows.iter().map(|&r| ds.entries[r].identity_id).collect();
    let live: Vec<bool> = rows.iter().map(|&r| ds.entries[r].liveness.is_live()).collect();
    let ambiguity = live_probability(&models.frozen(), &fv, dim)?;
    probe_disentanglement(&fu, &fv, dim, &ids, &live, Some(&ambiguity))
}

/// Which feature space to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Liveness,
    Identity,
}

pub fn embeddings(models: &Models, ds: &Dataset, rows: &[usize], space: Space) -> Result<Embeddings> {
    let (fu, fv) = features(models, ds, rows)?;
    let (features, dim) = match space {
        Space::Liveness => (fu, models.u.feature_dim()),
        Space::Identity => (fv, models.v.feature_dim()),
    };
    Ok(Embeddings {
        dim,
        features,
        identity: rows.iter().map(|&r| ds.entries[r].identity_id).collect(),
        liveness: rows.iter().map(|&r| ds.entries[r].liveness).collect(),
        domain: rows.iter().map(|&r| ds.entries[r].domain_tag).collect(),
    })
}
