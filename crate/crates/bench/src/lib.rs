//! Fixtures shared by the engine benchmarks.

pub use dlif_core::{Result, Tensor};

use dlif_core::data::{generate_sample, AttackType, Batch, BatchSampler, Dataset, IdentityPattern, Liveness, Style};
use dlif_core::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor of uniform values in `[-1, 1)`.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// Like [`uniform`] but tracked for gradients.
pub fn uniform_param(shape: &[usize], seed: u64) -> Tensor {
    uniform(shape, seed).to_param()
}

/// In-memory dataset with `domains x ids` identities and `per` live and
/// `per` spoof images each.
pub fn dataset(domains: usize, ids: usize, per: usize, size: usize) -> Dataset {
    let mut r = rng(0);
    let mut recs = Vec::new();
    for d in 0..domains {
        for i in 0..ids {
            let p = IdentityPattern::new(0, d * ids + i);
            for k in 0..2 * per {
                let (l, a) = if k < per {
                    (Liveness::Live, AttackType::None)
                } else {
                    (Liveness::Spoof, AttackType::SPOOFS[k % 4])
                };
                recs.push(generate_sample(&p, l, a, Style::neutral(), d, size, &mut r).expect("consistent attack"));
            }
        }
    }
    Dataset::from_records(recs).expect("non-empty dataset")
}

/// One default-sized training batch drawn from `ds`.
pub fn batch(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Batch> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    BatchSampler::new(ds, &rows, cfg.sampler())?.sample(&mut rng(seed))
}
