use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn normalized_rows(x: &[f64], dim: usize) -> Vec<Vec<f64>> {
    x.chunks(dim)
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean |cosine| between rows of `a` and rows of `b`: over every `(i, j)`
/// pair when `all_pairs`, otherwise over matched rows `(i, i)`.
pub fn mean_abs_cosine(a: &[f64], b: &[f64], dim: usize, all_pairs: bool) -> Result<f64> {
    if a.len() != b.len() || dim == 0 || !a.len().is_multiple_of(dim) || a.is_empty() {
        return Err(Error::invalid("feature matrices must be non-empty with equal shapes"));
    }
    let (ra, rb) = (normalized_rows(a, dim), normalized_rows(b, dim));
    let n = ra.len();
    if all_pairs {
        let total: f64 = ra.iter().map(|x| rb.iter().map(|y| dot(x, y).abs()).sum::<f64>()).sum();
        Ok(total / (n * n) as f64)
    } else {
        Ok(ra.iter().zip(&rb).map(|(x, y)| dot(x, y).abs()).sum::<f64>() / n as f64)
    }
}

/// Nearest-centroid accuracy on unit-normalized features. Within each
/// class, even-numbered occurrences fit the centroids and odd-numbered
/// ones are scored.
pub fn nearest_centroid_accuracy(features: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    let rows = normalized_rows(features, dim);
    if rows.len() != labels.len() {
        return Err(Error::invalid(format!("{} rows for {} labels", rows.len(), labels.len())));
    }
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut is_train = Vec::with_capacity(labels.len());
    for &l in labels {
        let k = seen.entry(l).or_default();
        is_train.push((*k).is_multiple_of(2));
        *k += 1;
    }
    if seen.len() < 2 {
        return Err(Error::invalid("probe needs at least two classes"));
    }
    if let Some((l, _)) = seen.iter().find(|(_, &n)| n < 2) {
        return Err(Error::invalid(format!("class {l} has fewer than two samples")));
    }
    let mut centroids: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for ((row, &l), &train) in rows.iter().zip(labels).zip(&is_train) {
        if train {
            let c = centroids.entry(l).or_insert_with(|| (vec![0.0; dim], 0));
            c.0.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            c.1 += 1;
        }
    }
    let centroids: Vec<(usize, Vec<f64>)> =
        centroids.into_iter().map(|(l, (sum, n))| (l, sum.into_iter().map(|v| v / n as f64).collect())).collect();
    let (mut right, mut total) = (0usize, 0usize);
    for ((row, &l), &train) in rows.iter().zip(labels).zip(&is_train) {
        if train {
            continue;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for (label, c) in &centroids {
            let d: f64 = c.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, *label);
            }
        }
        right += usize::from(best.1 == l);
        total += 1;
    }
    Ok(right as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// Mean |cos(f_u, f_v)| over all sample pairs.
    pub mean_abs_cos: f64,
    /// Mean |cos(f_u, f_v)| over matched samples.
    pub mean_abs_cos_matched: f64,
    pub identity_acc_u: f64,
    pub identity_acc_v: f64,
    pub identity_chance: f64,
    pub liveness_acc_u: f64,
    pub liveness_acc_v: f64,
    /// Mean |P(live) − 0.5| of the liveness head on `f_v`, when given.
    pub liveness_ambiguity_v: Option<f64>,
}

impl ProbeReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "mean_abs_cos = {}\nmean_abs_cos_matched = {}\nidentity_acc_u = {}\nidentity_acc_v = {}\nidentity_chance = {}\nliveness_acc_u = {}\nliveness_acc_v = {}\n",
            self.mean_abs_cos,
            self.mean_abs_cos_matched,
            self.identity_acc_u,
            self.identity_acc_v,
            self.identity_chance,
            self.liveness_acc_u,
            self.liveness_acc_v
        );
        if let Some(a) = self.liveness_ambiguity_v {
            s.push_str(&format!("liveness_ambiguity_v = {a}\n"));
        }
        s
    }
}

/// Cross-space similarity and nearest-centroid probes. `live_prob_v` is
/// the liveness head's live-class probability on each `f_v`.
pub fn probe_disentanglement(
    fu: &[f64],
    fv: &[f64],
    dim: usize,
    identities: &[usize],
    is_live: &[bool],
    live_prob_v: Option<&[f64]>,
) -> Result<ProbeReport> {
    let n = identities.len();
    if fu.len() != n * dim || fv.len() != n * dim || is_live.len() != n {
        return Err(Error::invalid("probe inputs have mismatched lengths"));
    }
    let liveness: Vec<usize> = is_live.iter().map(|&l| usize::from(!l)).collect();
    let n_ids = identities.iter().collect::<std::collections::BTreeSet<_>>().len();
    let ambiguity = match live_prob_v {
        Some(p) if p.len() == n => Some(p.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / n as f64),
        Some(_) => return Err(Error::invalid("liveness probabilities do not match the sample count")),
        None => None,
    };
    Ok(ProbeReport {
        mean_abs_cos: mean_abs_cosine(fu, fv, dim, true)?,
        mean_abs_cos_matched: mean_abs_cosine(fu, fv, dim, false)?,
        identity_acc_u: nearest_centroid_accuracy(fu, dim, identities)?,
        identity_acc_v: nearest_centroid_accuracy(fv, dim, identities)?,
        identity_chance: 1.0 / n_ids as f64,
        liveness_acc_u: nearest_centroid_accuracy(fu, dim, &liveness)?,
        liveness_acc_v: nearest_centroid_accuracy(fv, dim, &liveness)?,
        liveness_ambiguity_v: ambiguity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_spaces_have_zero_cosine() {
        let fu = [1.0, 0.0, 2.0, 0.0, 0.5, 0.0];
        let fv = [0.0, 3.0, 0.0, 1.0, 0.0, 2.0];
        assert_eq!(mean_abs_cosine(&fu, &fv, 2, true).unwrap(), 0.0);
    }

    #[test]
    fn identical_spaces() {
        let f = [1.0, 0.2, 0.3, 0.9, 0.8, 0.1, 0.2, 1.0];
        let ids = [0, 1, 0, 1];
        let live = [true, true, false, false];
        let r = probe_disentanglement(&f, &f, 2, &ids, &live, None).unwrap();
        assert!((r.mean_abs_cos_matched - 1.0).abs() < 1e-12);
        assert_eq!(r.identity_acc_u, r.identity_acc_v);
        assert_eq!(r.liveness_acc_u, r.liveness_acc_v);
        assert_eq!(r.identity_chance, 0.5);
    }

    #[test]
    fn centroid_probe_separates_clusters() {
        let f = [1.0, 0.0, 0.0, 1.0, 0.9, 0.1, 0.1, 0.9];
        assert_eq!(nearest_centroid_accuracy(&f, 2, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert!(nearest_centroid_accuracy(&f, 2, &[0, 0, 0, 0]).is_err());
    }
}
