use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::dataset::{Dataset, ManifestEntry};
use super::{Liveness, CHANNELS};
use crate::error::{Error, Result};

/// Identity/liveness independence check over exact counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub samples: usize,
    /// `(identity, live count, spoof count)`.
    pub counts: Vec<(usize, usize, usize)>,
    /// Empirical mutual information in nats.
    pub mutual_information: f64,
    /// `n(i,l)·N == n(i)·n(l)` holds for every cell.
    pub independent: bool,
}

impl SelfCheck {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# identity/liveness independence check");
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "identities = {}", self.counts.len());
        let _ = writeln!(s, "mutual_information = {}", self.mutual_information);
        let _ = writeln!(s, "independent = {}", self.independent);
        let _ = writeln!(s, "# identity, live, spoof");
        for (id, l, sp) in &self.counts {
            let _ = writeln!(s, "{id}, {l}, {sp}");
        }
        s
    }
}

pub fn self_check_report(entries: &[ManifestEntry]) -> SelfCheck {
    let mut table: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
    for e in entries {
        table.entry(e.identity_id).or_default()[e.liveness.label()] += 1;
    }
    let n = entries.len();
    let mut marg_l = [0usize; 2];
    for c in table.values() {
        marg_l[0] += c[0];
        marg_l[1] += c[1];
    }
    let mut mi = 0.0;
    let mut independent = true;
    for c in table.values() {
        let ni = c[0] + c[1];
        for l in 0..2 {
            if c[l] * n != ni * marg_l[l] {
                independent = false;
            }
            if c[l] > 0 {
                // Integer ratio keeps the exactly independent case at log(1) = 0.
                let ratio = (c[l] * n) as f64 / (ni * marg_l[l]) as f64;
                mi += c[l] as f64 / n as f64 * ratio.ln();
            }
        }
    }
    SelfCheck {
        samples: n,
        counts: table.into_iter().map(|(id, c)| (id, c[0], c[1])).collect(),
        mutual_information: mi,
        independent,
    }
}

/// Accuracy of a nearest-centroid live/spoof classifier on per-channel
/// pixel mean and spread, trained on one domain and tested on each.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    /// `(train domain, test domain, accuracy)`.
    pub cells: Vec<(usize, usize, f64)>,
}

impl DomainShift {
    pub fn accuracy(&self, train: usize, test: usize) -> Option<f64> {
        self.cells.iter().find(|c| c.0 == train && c.1 == test).map(|c| c.2)
    }

    /// Mean in-domain accuracy minus mean cross-domain accuracy.
    pub fn mean_degradation(&self) -> f64 {
        let (mut same, mut ns, mut cross, mut nc) = (0.0, 0, 0.0, 0);
        for &(a, b, acc) in &self.cells {
            if a == b {
                same += acc;
                ns += 1;
            } else {
                cross += acc;
                nc += 1;
            }
        }
        if ns == 0 || nc == 0 {
            return 0.0;
        }
        same / ns as f64 - cross / nc as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# pixel-statistics liveness classifier, nearest centroid");
        let _ = writeln!(s, "mean_degradation = {}", self.mean_degradation());
        let _ = writeln!(s, "# train_domain, test_domain, accuracy");
        for (a, b, acc) in &self.cells {
            let _ = writeln!(s, "{a}, {b}, {acc}");
        }
        s
    }
}

fn pixel_stats(img: &[f64]) -> [f64; 2 * CHANNELS] {
    let plane = img.len() / CHANNELS;
    let mut f = [0.0; 2 * CHANNELS];
    for c in 0..CHANNELS {
        let p = &img[c * plane..(c + 1) * plane];
        let mean = p.iter().sum::<f64>() / plane as f64;
        f[c] = mean;
        f[CHANNELS + c] = (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64).sqrt();
    }
    f
}

pub fn domain_shift_report(ds: &Dataset) -> Result<DomainShift> {
    let feats: Vec<_> = ds.images.iter().map(|im| pixel_stats(im)).collect();
    let domains = ds.domains();
    let mut cells = Vec::new();
    for &a in &domains {
        let mut centroids = [[0.0; 2 * CHANNELS]; 2];
        let mut counts = [0usize; 2];
        for (e, f) in ds.entries.iter().zip(&feats) {
            if e.domain_tag == a {
                let l = e.liveness.label();
                counts[l] += 1;
                centroids[l].iter_mut().zip(f).for_each(|(c, v)| *c += v);
            }
        }
        if counts.contains(&0) {
            return Err(Error::invalid(format!("domain {a} lacks live or spoof samples")));
        }
        for l in 0..2 {
            centroids[l].iter_mut().for_each(|c| *c /= counts[l] as f64);
        }
        for &b in &domains {
            let (mut right, mut total) = (0usize, 0usize);
            for (e, f) in ds.entries.iter().zip(&feats) {
                if e.domain_tag != b {
                    continue;
                }
                let d = |c: &[f64; 2 * CHANNELS]| c.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                let guess = if d(&centroids[0]) <= d(&centroids[1]) { Liveness::Live } else { Liveness::Spoof };
                right += usize::from(guess == e.liveness);
                total += 1;
            }
            cells.push((a, b, right as f64 / total as f64));
        }
    }
    Ok(DomainShift { cells })
}
