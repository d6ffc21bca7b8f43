use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use dlif_core::data::{
    generate_dataset, generate_sample, AttackType, BatchSampler, Dataset, DatasetSpec, IdentityPattern, Liveness,
    SamplerConfig, Style, SOURCE_DIR, TARGET_DIR,
};
use dlif_core::stylecross::make_pairing;

fn toy_dataset(domains: usize, ids: usize, per: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut recs = Vec::new();
    for d in 0..domains {
        for i in 0..ids {
            let p = IdentityPattern::new(0, d * ids + i);
            for (l, a) in [(Liveness::Live, AttackType::None), (Liveness::Spoof, AttackType::Noise)] {
                for _ in 0..per {
                    recs.push(generate_sample(&p, l, a, Style::neutral(), d, 8, &mut rng).unwrap());
                }
            }
        }
    }
    Dataset::from_records(recs).unwrap()
}

#[test]
fn identity_selection_is_uniform() {
    let (domains, ids) = (2, 6);
    let ds = toy_dataset(domains, ids, 4);
    let rows: Vec<usize> = (0..ds.len()).collect();
    let cfg = SamplerConfig { augment: None, input_size: 8, ..SamplerConfig::default() };
    let sampler = BatchSampler::new(&ds, &rows, cfg).unwrap();
    let draws = 1000;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..draws {
        let b = sampler.sample(&mut rng).unwrap();
        let mut seen: Vec<usize> = b.identities.clone();
        seen.dedup();
        for id in seen {
            *counts.entry(id).or_default() += 1;
        }
    }
    let p = 4.0 / ids as f64;
    let (mean, sd) = (draws as f64 * p, (draws as f64 * p * (1.0 - p)).sqrt());
    assert_eq!(counts.len(), domains * ids);
    for (id, &c) in &counts {
        assert!((c as f64 - mean).abs() < 5.0 * sd, "identity {id} drawn {c} times, expected {mean} ± {sd}");
    }
}

#[test]
fn pairing_partners_are_uniform_within_groups() {
    let keys = [0, 0, 0, 0, 0, 1, 1, 1, 2];
    let trials = 20_000;
    let mut counts = vec![vec![0usize; keys.len()]; keys.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..trials {
        for (i, j) in make_pairing(&keys, &mut rng).into_iter().enumerate() {
            counts[i][j] += 1;
        }
    }
    for i in 0..keys.len() {
        let group: Vec<usize> = (0..keys.len()).filter(|&j| keys[j] == keys[i]).collect();
        if group.len() == 1 {
            assert_eq!(counts[i][i], trials);
            continue;
        }
        // Fixed points survive only when every redraw fails.
        assert!(counts[i][i] * 100 < trials, "{i} kept itself {} times", counts[i][i]);
        let moved = (trials - counts[i][i]) as f64;
        let p = 1.0 / (group.len() - 1) as f64;
        let (mean, sd) = (moved * p, (moved * p * (1.0 - p)).sqrt());
        for j in 0..keys.len() {
            if j == i {
                continue;
            }
            if keys[j] != keys[i] {
                assert_eq!(counts[i][j], 0, "{i} -> {j}");
            } else {
                let c = counts[i][j] as f64;
                assert!((c - mean).abs() < 5.0 * sd, "{i} -> {j}: {c} vs {mean} ± {sd}");
            }
        }
    }
}

type Field = fn(&Style) -> f64;

/// Two-sided Kolmogorov–Smirnov statistic against U[lo, hi].
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn style_parameters_follow_domain_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::default();
    generate_dataset(&spec, dir.path()).unwrap();
    let mut entries = Dataset::load(dir.path().join(SOURCE_DIR)).unwrap().entries;
    entries.extend(Dataset::load(dir.path().join(TARGET_DIR)).unwrap().entries);
    for (d, profile) in spec.domains.iter().enumerate() {
        let rows: Vec<&Style> = entries.iter().filter(|e| e.domain_tag == d).map(|e| &e.style).collect();
        let critical = 1.628 / (rows.len() as f64).sqrt();
        let fields: [(&str, Field, _); 5] = [
            ("brightness", |s| s.brightness, profile.brightness),
            ("contrast", |s| s.contrast, profile.contrast),
            ("hue", |s| s.hue, profile.hue),
            ("blur", |s| s.blur, profile.blur),
            ("noise", |s| s.noise, profile.noise),
        ];
        for (name, get, range) in fields {
            let xs: Vec<f64> = rows.iter().map(|s| get(s)).collect();
            let stat = ks_uniform(xs, range.lo, range.hi);
            assert!(stat < critical, "domain {d} {name}: KS {stat} >= {critical}");
        }
    }
}

#[test]
fn grid_attack_peaks_at_the_lattice_frequency() {
    let size = 32;
    let pattern = IdentityPattern::new(9, 4);
    let render = |attack| {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let liveness = if attack == AttackType::None { Liveness::Live } else { Liveness::Spoof };
        let mut rec = generate_sample(&pattern, liveness, attack, Style::neutral(), 0, size, &mut rng).unwrap();
        rec.image.truncate(size * size);
        rec.image
    };
    let (live, spoof) = (render(AttackType::None), render(AttackType::Grid));
    let mut grid: Vec<Complex<f64>> = spoof.iter().zip(&live).map(|(s, l)| Complex::new(s - l, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(size);
    for row in grid.chunks_mut(size) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); size];
    for x in 0..size {
        for y in 0..size {
            col[y] = grid[y * size + x];
        }
        fft.process(&mut col);
        for y in 0..size {
            grid[y * size + x] = col[y];
        }
    }
    let (mut best, mut at) = (0.0, (0, 0));
    for fy in 0..size {
        for fx in 0..size {
            let m = grid[fy * size + fx].norm();
            if (fx, fy) != (0, 0) && m > best {
                best = m;
                at = (fx, fy);
            }
        }
    }
    // A period of 4 pixels puts the lattice at bin 8 (or its alias 24) on one axis.
    let lattice = [8, size - 8];
    let on_axis = (at.1 == 0 && lattice.contains(&at.0)) || (at.0 == 0 && lattice.contains(&at.1));
    assert!(on_axis, "dominant frequency {at:?}");
}
