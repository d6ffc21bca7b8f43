use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use super::dataset::Dataset;
use super::image::resample;
use super::CHANNELS;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random resized crop followed by rotation, applied per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    /// Range of the crop's area as a fraction of the image.
    pub crop_scale: (f64, f64),
    pub max_rotation_deg: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Self { crop_scale: (0.8, 1.0), max_rotation_deg: 10.0 }
    }
}

impl Augment {
    pub fn apply<R: Rng + ?Sized>(&self, img: &[f64], in_size: usize, out_size: usize, rng: &mut R) -> Vec<f64> {
        let side = rng.gen_range(self.crop_scale.0..=self.crop_scale.1).sqrt();
        let angle = rng.gen_range(-self.max_rotation_deg..=self.max_rotation_deg).to_radians();
        let slack = 1.0 - side;
        let shift = (rng.gen_range(-slack..=slack), rng.gen_range(-slack..=slack));
        resample(img, CHANNELS, in_size, out_size, side, angle, shift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub ids_per_domain: usize,
    pub live_per_id: usize,
    pub spoof_per_id: usize,
    pub input_size: usize,
    pub augment: Option<Augment>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { ids_per_domain: 4, live_per_id: 4, spoof_per_id: 4, input_size: 32, augment: Some(Augment::default()) }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `B x 3 x input_size x input_size`.
    pub images: Tensor,
    /// Dataset row of each sample.
    pub indices: Vec<usize>,
    pub is_live: Vec<bool>,
    pub identities: Vec<usize>,
    pub domains: Vec<usize>,
    /// Identities whose live or spoof pool was too small and were drawn
    /// with replacement.
    pub with_replacement: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Liveness class per sample, live = 0.
    pub fn liveness_labels(&self) -> Vec<usize> {
        self.is_live.iter().map(|&l| usize::from(!l)).collect()
    }
}

/// Stacks dataset rows into an image tensor, resized to `input_size`.
pub fn stack_images(ds: &Dataset, rows: &[usize], input_size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * CHANNELS * input_size * input_size);
    for &r in rows {
        data.extend(resample(&ds.images[r], CHANNELS, ds.image_size, input_size, 1.0, 0.0, (0.0, 0.0)));
    }
    Tensor::new(&[rows.len(), CHANNELS, input_size, input_size], data)
}

/// Per-domain, per-identity sampler: each batch takes `ids_per_domain`
/// distinct identities from every domain and a fixed number of live and
/// spoof samples from each.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    ds: &'a Dataset,
    config: SamplerConfig,
    groups: BTreeMap<usize, BTreeMap<usize, [Vec<usize>; 2]>>,
}

impl<'a> BatchSampler<'a> {
    /// `rows` restricts sampling to a subset of the dataset.
    pub fn new(ds: &'a Dataset, rows: &[usize], config: SamplerConfig) -> Result<Self> {
        let mut groups: BTreeMap<usize, BTreeMap<usize, [Vec<usize>; 2]>> = BTreeMap::new();
        for &r in rows {
            let e = ds.entries.get(r).ok_or_else(|| Error::invalid(format!("row {r} is outside the dataset")))?;
            groups.entry(e.domain_tag).or_default().entry(e.identity_id).or_default()[e.liveness.label()].push(r);
        }
        if groups.is_empty() {
            return Err(Error::invalid("sampler has no rows"));
        }
        for (d, ids) in &groups {
            if ids.len() < config.ids_per_domain {
                return Err(Error::invalid(format!(
                    "domain {d} has {} identities, batches need {}",
                    ids.len(),
                    config.ids_per_domain
                )));
            }
            if let Some((id, _)) = ids.iter().find(|(_, g)| g[0].is_empty() || g[1].is_empty()) {
                return Err(Error::invalid(format!("identity {id} lacks live or spoof samples")));
            }
        }
        Ok(Self { ds, config, groups })
    }

    pub fn batch_size(&self) -> usize {
        self.groups.len() * self.config.ids_per_domain * (self.config.live_per_id + self.config.spoof_per_id)
    }

    pub fn eligible_identities(&self) -> Vec<usize> {
        self.groups.values().flat_map(|ids| ids.keys().copied()).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Batch> {
        let cfg = &self.config;
        let mut rows = Vec::with_capacity(self.batch_size());
        let mut with_replacement = Vec::new();
        for ids in self.groups.values() {
            let keys: Vec<usize> = ids.keys().copied().collect();
            let mut chosen: Vec<usize> = index::sample(rng, keys.len(), cfg.ids_per_domain).into_vec();
            chosen.sort_unstable();
            for k in chosen {
                let id = keys[k];
                let pools = &ids[&id];
                let mut replaced = false;
                for (pool, want) in pools.iter().zip([cfg.live_per_id, cfg.spoof_per_id]) {
                    if pool.len() >= want {
                        rows.extend(index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]));
                    } else {
                        replaced = true;
                        rows.extend((0..want).map(|_| pool[rng.gen_range(0..pool.len())]));
                    }
                }
                if replaced {
                    with_replacement.push(id);
                }
            }
        }
        let size = cfg.input_size;
        let mut data = Vec::with_capacity(rows.len() * CHANNELS * size * size);
        for &r in &rows {
            let img = &self.ds.images[r];
            match &cfg.augment {
                Some(a) => data.extend(a.apply(img, self.ds.image_size, size, rng)),
                None => data.extend(resample(img, CHANNELS, self.ds.image_size, size, 1.0, 0.0, (0.0, 0.0))),
            }
        }
        let entries = &self.ds.entries;
        Ok(Batch {
            images: Tensor::new(&[rows.len(), CHANNELS, size, size], data)?,
            is_live: rows.iter().map(|&r| entries[r].liveness.is_live()).collect(),
            identities: rows.iter().map(|&r| entries[r].identity_id).collect(),
            domains: rows.iter().map(|&r| entries[r].domain_tag).collect(),
            indices: rows,
            with_replacement,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, AttackType, IdentityPattern, Liveness, Style};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(domains: usize, ids: usize, per: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut recs = Vec::new();
        for d in 0..domains {
            for i in 0..ids {
                let id = d * ids + i;
                let p = IdentityPattern::new(0, id);
                for (l, a) in [(Liveness::Live, AttackType::None), (Liveness::Spoof, AttackType::Grid)] {
                    for _ in 0..per {
                        recs.push(generate_sample(&p, l, a, Style::neutral(), d, 8, &mut rng).unwrap());
                    }
                }
            }
        }
        Dataset::from_records(recs).unwrap()
    }

    fn cfg(per: usize) -> SamplerConfig {
        SamplerConfig { ids_per_domain: 2, live_per_id: per, spoof_per_id: per, input_size: 8, augment: None }
    }

    #[test]
    fn batch_layout() {
        let ds = toy(3, 3, 4);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let s = BatchSampler::new(&ds, &rows, cfg(2)).unwrap();
        let b = s.sample(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.len(), 3 * 2 * 4);
        assert_eq!(s.batch_size(), b.len());
        let mut per_id: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
        for (id, live) in b.identities.iter().zip(&b.is_live) {
            per_id.entry(*id).or_default()[usize::from(!live)] += 1;
        }
        assert_eq!(per_id.len(), 6);
        assert!(per_id.values().all(|c| *c == [2, 2]));
        assert!(b.with_replacement.is_empty());
        let mut distinct = b.indices.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), b.len());
    }

    #[test]
    fn small_pools_fall_back_to_replacement() {
        let ds = toy(1, 2, 2);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let s = BatchSampler::new(&ds, &rows, cfg(3)).unwrap();
        let b = s.sample(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(b.len(), 12);
        assert_eq!(b.with_replacement.len(), 2);
    }

    #[test]
    fn too_few_identities_rejected() {
        let ds = toy(1, 1, 2);
        let rows: Vec<usize> = (0..ds.len()).collect();
        assert!(BatchSampler::new(&ds, &rows, cfg(1)).is_err());
    }

    #[test]
    fn augmentation_keeps_range_and_shape() {
        let ds = toy(1, 2, 2);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let c = SamplerConfig { augment: Some(Augment::default()), input_size: 16, ..cfg(2) };
        let b = BatchSampler::new(&ds, &rows, c).unwrap().sample(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(b.images.shape(), &[8, 3, 16, 16]);
        assert!(b.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
