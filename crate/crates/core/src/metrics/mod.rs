//! Biometric metrics, disentanglement probes and embedding export.

mod embeddings;
mod probe;

pub use embeddings::{export_embeddings, read_embeddings, Embeddings};
pub use probe::{mean_abs_cosine, nearest_centroid_accuracy, probe_disentanglement, ProbeReport};

use crate::error::{Error, Result};

/// Liveness scores (higher means more live) with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    is_live: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, is_live: Vec<bool>) -> Result<Self> {
        if scores.len() != is_live.len() {
            return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), is_live.len())));
        }
        if !is_live.contains(&true) || !is_live.contains(&false) {
            return Err(Error::invalid("score set needs both live and spoof samples"));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite score {s}")));
        }
        Ok(Self { scores, is_live })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_live(&self) -> &[bool] {
        &self.is_live
    }

    fn counts(&self) -> (usize, usize) {
        let live = self.is_live.iter().filter(|&&l| l).count();
        (live, self.is_live.len() - live)
    }

    /// `(FAR, FRR)` when samples scoring at least `t` are accepted as live.
    pub fn rates(&self, t: f64) -> (f64, f64) {
        let (nl, ns) = self.counts();
        let (mut false_accept, mut false_reject) = (0usize, 0usize);
        for (&s, &l) in self.scores.iter().zip(&self.is_live) {
            match (l, s >= t) {
                (false, true) => false_accept += 1,
                (true, false) => false_reject += 1,
                _ => {}
            }
        }
        (false_accept as f64 / ns as f64, false_reject as f64 / nl as f64)
    }

    /// Candidate thresholds: midpoints between consecutive distinct scores,
    /// plus one below the minimum and one above the maximum.
    pub fn candidate_thresholds(&self) -> Vec<f64> {
        let mut s = self.scores.clone();
        s.sort_by(f64::total_cmp);
        s.dedup();
        let mut t = Vec::with_capacity(s.len() + 1);
        t.push(s[0] - 1.0);
        t.extend(s.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
        t.push(s[s.len() - 1] + 1.0);
        t
    }
}

/// Probability that a live sample outscores a spoof, ties counting half.
/// Computed from mid-ranks.
pub fn roc_auc(set: &ScoreSet) -> f64 {
    let n = set.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    let mut rank_sum_live = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_live += mid * order[i..=j].iter().filter(|&&k| set.is_live[k]).count() as f64;
        i = j + 1;
    }
    let (nl, ns) = set.counts();
    (rank_sum_live - (nl * (nl + 1)) as f64 / 2.0) / (nl * ns) as f64
}

/// Threshold where FAR and FRR are closest, with `eer = (FAR + FRR) / 2`
/// there. Ties prefer the lower mean error, then the lower threshold.
pub fn eer_threshold(set: &ScoreSet) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::INFINITY, 0.0);
    for t in set.candidate_thresholds() {
        let (far, frr) = set.rates(t);
        let key = ((far - frr).abs(), (far + frr) / 2.0);
        if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1) {
            best = (key.0, key.1, t);
        }
    }
    (best.2, best.1)
}

pub fn hter(set: &ScoreSet, threshold: f64) -> f64 {
    let (far, frr) = set.rates(threshold);
    (far + frr) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(scores: &[f64], live: &[bool]) -> ScoreSet {
        ScoreSet::new(scores.to_vec(), live.to_vec()).unwrap()
    }

    fn auc_oracle(s: &ScoreSet) -> f64 {
        let mut acc = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in s.is_live().iter().enumerate() {
            for (j, &lj) in s.is_live().iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    acc += match s.scores()[i].partial_cmp(&s.scores()[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        acc / pairs
    }

    #[test]
    fn auc_known_cases() {
        assert_eq!(roc_auc(&set(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false])), 1.0);
        assert_eq!(roc_auc(&set(&[0.5; 4], &[true, false, true, false])), 0.5);
        assert!(ScoreSet::new(vec![0.1, 0.2], vec![true, true]).is_err());
    }

    #[test]
    fn auc_matches_pair_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..12).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
            let live: Vec<bool> = (0..12).map(|i| i < 6).collect();
            let s = set(&scores, &live);
            assert!((roc_auc(&s) - auc_oracle(&s)).abs() < 1e-12);
        }
    }

    #[test]
    fn eer_known_cases() {
        let sep = set(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]);
        let (t, eer) = eer_threshold(&sep);
        assert_eq!(eer, 0.0);
        assert_eq!(hter(&sep, t), 0.0);
        assert_eq!(hter(&sep, 0.5), 0.0);
        assert_eq!(hter(&sep, -1.0), 0.5);
        let rev = set(&[0.1, 0.2, 0.9, 0.8], &[true, true, false, false]);
        assert!(eer_threshold(&rev).1 >= 0.5);
    }

    #[test]
    fn hter_at_eer_threshold_is_eer() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
            let live: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
            let s = set(&scores, &live);
            let (t, eer) = eer_threshold(&s);
            assert!((hter(&s, t) - eer).abs() < 1e-12);
        }
    }
}
