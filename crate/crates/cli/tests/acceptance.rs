use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dlif_core::data::{
    generate_dataset, BatchSampler, Dataset, DatasetSpec, ManifestEntry, MANIFEST_FILE, SOURCE_DIR, TARGET_DIR,
};
use dlif_core::gradsuite::{run_encoder_check, run_suite, DEFAULT_STEP, DEFAULT_TOL, ENCODER_STEP};
use dlif_core::losses::{aaic_loss, orthogonality_loss, AaicForm, ContrastLabeling};
use dlif_core::metrics::{eer_threshold, export_embeddings, hter, read_embeddings, roc_auc, ScoreSet};
use dlif_core::nn::snapshot;
use dlif_core::stylecross::{style_cross, Level, LevelPairings};
use dlif_core::train::{
    ablation_cells, baseline_overrides, embeddings, probe, run_training, train_step_observed, Axis, Checkpoint, Models,
    Optimizers, RunOptions, Space, TrainConfig, BEST_DIR, RESOLVED_CONFIG,
};
use dlif_core::Tensor;

const ORACLE_TOL: f64 = 1e-12;
const DESK_EPOCHS: usize = 40;
const DESK_STEPS: usize = 15;
const DESK_SEEDS: [u64; 3] = [0, 1, 2];

type Check = fn() -> Result<Verdict>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_rows(r: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..rows * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    for row in v.chunks_mut(dim) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn pairs(kv: &[(&str, &str)]) -> Vec<(String, String)> {
    kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn small_spec() -> DatasetSpec {
    DatasetSpec::with_domains(3, vec![2], 4, 4, 16, 3)
}

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.apply(&pairs(&[
        ("epochs", "4"),
        ("steps_per_epoch", "2"),
        ("input_size", "16"),
        ("stage_channels", "4,8,8"),
        ("feature_dim", "8"),
        ("ids_per_domain", "2"),
        ("live_per_id", "2"),
        ("spoof_per_id", "2"),
        ("val_fraction", "0.25"),
        ("calibration_samples", "16"),
    ]))
    .unwrap();
    c
}

fn gradients() -> Result<Verdict> {
    let start = Instant::now();
    let mut reports = run_suite(0, DEFAULT_STEP, DEFAULT_TOL)?;
    reports.push(run_encoder_check(0, ENCODER_STEP, DEFAULT_TOL)?);
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.report.passed()).map(|r| r.name.as_str()).collect();
    let worst = reports.iter().map(|r| r.report.max_rel_error()).fold(0.0, f64::max);
    Ok(verdict(
        failed.is_empty() && secs < 60.0,
        format!("{} cases, worst rel err {worst:.2e}, {secs:.1} s, failed {failed:?}", reports.len()),
    ))
}

fn oracle_orthogonality(fu: &[f64], fv: &[f64], dim: usize) -> f64 {
    let (bu, bv) = (fu.len() / dim, fv.len() / dim);
    let mut s = 0.0;
    for i in 0..bu {
        for j in 0..bv {
            s += dot(&fu[i * dim..(i + 1) * dim], &fv[j * dim..(j + 1) * dim]).powi(2);
        }
    }
    s / (bu * bv) as f64
}

fn oracle_aaic(z: &[f64], dim: usize, labels: &[usize], tau: f64, form: AaicForm) -> f64 {
    let p = labels.len();
    let mut total = 0.0;
    for i in 0..p {
        let zi = &z[i * dim..(i + 1) * dim];
        let sims: Vec<f64> = (0..p).map(|k| dot(zi, &z[k * dim..(k + 1) * dim]) / tau).collect();
        let top = (0..p).filter(|&k| k != i).map(|k| sims[k]).fold(f64::NEG_INFINITY, f64::max);
        let log_denom = top + (0..p).filter(|&k| k != i).map(|k| (sims[k] - top).exp()).sum::<f64>().ln();
        let positives: Vec<usize> = (0..p).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        total += match form {
            AaicForm::AsWritten => positives.iter().map(|&j| (sims[j] - log_denom).exp()).sum::<f64>(),
            AaicForm::Log => positives.iter().map(|&j| sims[j] - log_denom).sum::<f64>() / positives.len() as f64,
        };
    }
    -total / p as f64
}

fn oracle_auc(scores: &[f64], live: &[bool]) -> f64 {
    let (mut wins, mut n) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if live[i] && !live[j] {
                n += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / n
}

fn oracle_rates(scores: &[f64], live: &[bool], t: f64) -> (f64, f64) {
    let nl = live.iter().filter(|&&l| l).count() as f64;
    let ns = live.len() as f64 - nl;
    let fa = scores.iter().zip(live).filter(|(&s, &l)| !l && s >= t).count() as f64;
    let fr = scores.iter().zip(live).filter(|(&s, &l)| l && s < t).count() as f64;
    (fa / ns, fr / nl)
}

/// Every achievable operating point: accept at each observed score, or reject all.
fn oracle_eer(scores: &[f64], live: &[bool]) -> f64 {
    let mut ts: Vec<f64> = scores.to_vec();
    ts.push(f64::INFINITY);
    let mut best = (f64::INFINITY, f64::INFINITY);
    for t in ts {
        let (far, frr) = oracle_rates(scores, live, t);
        let key = ((far - frr).abs(), (far + frr) / 2.0);
        if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1) {
            best = key;
        }
    }
    best.1
}

fn oracles() -> Result<Verdict> {
    let mut r = rng(2024);
    let instances = 200;
    let mut worst = [0.0f64; 5];
    for _ in 0..instances {
        let dim = r.gen_range(2..7);
        let (bu, bv) = (r.gen_range(1..9), r.gen_range(1..9));
        let (fu, fv) = (unit_rows(&mut r, bu, dim), unit_rows(&mut r, bv, dim));
        let got = orthogonality_loss(&Tensor::new(&[bu, dim], fu.clone())?, &Tensor::new(&[bv, dim], fv.clone())?)?;
        worst[0] = worst[0].max((got.item() - oracle_orthogonality(&fu, &fv, dim)).abs());

        let b = r.gen_range(2..7);
        let flows = r.gen_range(0..3);
        let labeling = if r.gen_bool(0.5) {
            let live: Vec<bool> = (0..b).map(|_| r.gen_bool(0.5)).collect();
            ContrastLabeling::fas(&live, flows)
        } else {
            let ids: Vec<usize> = (0..b).map(|_| r.gen_range(0..3)).collect();
            ContrastLabeling::fr(&ids, flows)
        };
        let p = labeling.len();
        let z = unit_rows(&mut r, p, dim);
        let tau = r.gen_range(0.05..1.0);
        for (k, form) in [(1, AaicForm::AsWritten), (2, AaicForm::Log)] {
            let got = aaic_loss(&Tensor::new(&[p, dim], z.clone())?, &labeling, tau, form)?.item();
            worst[k] = worst[k].max((got - oracle_aaic(&z, dim, &labeling.labels, tau, form)).abs());
        }

        let n = r.gen_range(4..30);
        let mut live: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        live[0] = true;
        live[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| (r.gen_range(0.0..1.0f64) * 8.0).round() / 8.0).collect();
        let set = ScoreSet::new(scores.clone(), live.clone())?;
        worst[3] = worst[3].max((roc_auc(&set) - oracle_auc(&scores, &live)).abs());
        let (t, eer) = eer_threshold(&set);
        let (far, frr) = oracle_rates(&scores, &live, t);
        let err = (eer - oracle_eer(&scores, &live)).abs().max((hter(&set, t) - (far + frr) / 2.0).abs());
        worst[4] = worst[4].max(err);
    }
    let names = ["orthogonality", "aaic as_written", "aaic log", "roc_auc", "eer/hter"];
    let detail: Vec<String> = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    Ok(verdict(
        worst.iter().all(|&w| w <= ORACLE_TOL),
        format!("{instances} instances, max |diff|: {}", detail.join(", ")),
    ))
}

fn channel_stats(x: &[f64], n: usize, c: usize, hw: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n * c);
    for m in x.chunks(hw).take(n * c) {
        let mean = m.iter().sum::<f64>() / hw as f64;
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw as f64;
        out.push((mean, var.sqrt()));
    }
    out
}

fn style_contracts() -> Result<Verdict> {
    let mut r = rng(77);
    let (mut transfer, mut identity) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (n, c, h) = (r.gen_range(1..4), r.gen_range(1..5), r.gen_range(2..7));
        let len = n * c * h * h;
        let draw = |r: &mut ChaCha8Rng| -> Vec<f64> {
            let (shift, scale) = (r.gen_range(-2.0..2.0), r.gen_range(0.5..3.0));
            (0..len).map(|_| shift + scale * r.gen_range(-1.0..1.0)).collect()
        };
        let (content, style) = (draw(&mut r), draw(&mut r));
        let shape = [n, c, h, h];
        let out = style_cross(&Tensor::new(&shape, content.clone())?, &Tensor::new(&shape, style.clone())?)?;
        for (a, b) in channel_stats(out.data(), n, c, h * h).iter().zip(channel_stats(&style, n, c, h * h)) {
            transfer = transfer.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
        }
        let same = Tensor::new(&shape, content.clone())?;
        let back = style_cross(&same, &same)?;
        identity = identity.max(back.data().iter().zip(&content).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }

    let data = tempfile::tempdir()?;
    generate_dataset(&small_spec(), data.path())?;
    let ds = Dataset::load(data.path().join(SOURCE_DIR))?;
    let cfg = small_config();
    let all = |p: &LevelPairings| -> Vec<Vec<usize>> {
        Level::ALL.iter().filter_map(|&l| p.get(l)).map(|q| q.perm().to_vec()).collect()
    };
    let sampler = BatchSampler::new(&ds, &(0..ds.len()).collect::<Vec<_>>(), cfg.sampler())?;
    let (plan_u, plan_v) = (cfg.plan_u.clone().unwrap(), cfg.plan_v.clone().unwrap());
    let (batches, mut checked, mut violations) = (10_000, 0usize, 0usize);
    let mut sr = rng(78);
    for _ in 0..batches {
        let b = sampler.sample(&mut sr)?;
        for perm in all(&LevelPairings::sample(&plan_u, &b.is_live, &mut sr)) {
            checked += perm.len();
            violations += (0..perm.len()).filter(|&i| b.is_live[perm[i]] != b.is_live[i]).count();
        }
        for perm in all(&LevelPairings::sample(&plan_v, &b.identities, &mut sr)) {
            checked += perm.len();
            violations += (0..perm.len()).filter(|&i| b.identities[perm[i]] != b.identities[i]).count();
        }
    }
    Ok(verdict(
        transfer <= 1e-4 && identity <= 1e-9 && violations == 0,
        format!(
            "stat transfer max err {transfer:.1e}, SC(a,a) max err {identity:.1e}, {violations} violations in {checked} pairings over {batches} batches"
        ),
    ))
}

fn isolation() -> Result<Verdict> {
    let data = tempfile::tempdir()?;
    generate_dataset(&small_spec(), data.path())?;
    let ds = Dataset::load(data.path().join(SOURCE_DIR))?;
    let cfg = small_config();
    let rows: Vec<usize> = (0..ds.len()).collect();
    let sampler = BatchSampler::new(&ds, &rows, cfg.sampler())?;
    let ids = ds.identities();
    let mut models = Models::new(&cfg, ids.len())?;
    let mut opts = Optimizers::new(&models, cfg.weight_decay);
    let mut r = rng(5);
    let steps = 100;
    let (mut violations, mut moved) = (0usize, 0usize);
    for _ in 0..steps {
        let batch = sampler.sample(&mut r)?;
        let classes: Vec<usize> = batch.identities.iter().map(|i| ids.binary_search(i).unwrap()).collect();
        let before = (snapshot(&models.u), snapshot(&models.c), snapshot(&models.v), snapshot(&models.d));
        let mut mid = None;
        train_step_observed(&mut models, &mut opts, &cfg, &batch, &classes, cfg.lr, &mut r, |m| {
            mid = Some((snapshot(&m.u), snapshot(&m.c), snapshot(&m.v), snapshot(&m.d)));
        })?;
        let mid = mid.unwrap();
        violations += usize::from(mid.2 != before.2) + usize::from(mid.3 != before.3);
        violations += usize::from(snapshot(&models.u) != mid.0) + usize::from(snapshot(&models.c) != mid.1);
        moved += usize::from(mid.0 != before.0 && snapshot(&models.v) != mid.2);
    }
    Ok(verdict(
        violations == 0 && moved == steps,
        format!("{steps} steps, {violations} violations, both phases updated their own modules in {moved} steps"),
    ))
}

struct DeskRun {
    auc: f64,
    secs: f64,
}

fn desk_config(seed: u64, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig { epochs: DESK_EPOCHS, steps_per_epoch: DESK_STEPS, seed, ..TrainConfig::default() };
    cfg.apply(overrides)?;
    Ok(cfg)
}

fn desk_run(data: &Path, out: &Path, cfg: &TrainConfig, label: &str) -> Result<DeskRun> {
    let start = Instant::now();
    let s = run_training(cfg, data, out, &RunOptions { final_target_eval: true, ..RunOptions::default() })?;
    let secs = start.elapsed().as_secs_f64();
    let auc = s.target.map(|t| t.auc).unwrap_or(f64::NAN);
    eprintln!("  desk run {label} seed {}: target AUC {auc:.4} in {secs:.0} s", cfg.seed);
    Ok(DeskRun { auc, secs })
}

fn disentanglement(data: &Path, run: &Path, cfg: &TrainConfig, secs: f64) -> Result<Verdict> {
    let target = Dataset::load(data.join(TARGET_DIR))?;
    let rows: Vec<usize> = (0..target.len()).collect();
    let ck = Checkpoint::load(run.join(BEST_DIR))?;
    let trained = probe(&ck.models, &target, &rows)?;
    let init = probe(&Models::new(cfg, ck.state.identities.len())?, &target, &rows)?;
    let amb = trained.liveness_ambiguity_v.unwrap_or(f64::NAN);
    let chance = trained.identity_chance;
    let a = trained.mean_abs_cos < 0.15 && trained.mean_abs_cos < 0.5 * init.mean_abs_cos;
    let b = amb < 0.1;
    let c = trained.identity_acc_u <= 2.0 * chance && trained.identity_acc_v >= 5.0 * chance;
    let mark = |ok: bool| if ok { "ok" } else { "fail" };
    Ok(verdict(
        a && b && c && secs <= 1800.0,
        format!(
            "(a) {} mean|cos| {:.3} vs init {:.3}; (b) {} ambiguity {amb:.3}; (c) {} id acc u {:.3} (max {:.3}) v {:.3} (min {:.3}); {secs:.0} s",
            mark(a),
            trained.mean_abs_cos,
            init.mean_abs_cos,
            mark(b),
            mark(c),
            trained.identity_acc_u,
            2.0 * chance,
            trained.identity_acc_v,
            5.0 * chance
        ),
    ))
}

fn round_trips() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    generate_dataset(&small_spec(), &data)?;
    let mut notes = Vec::new();

    for split in [SOURCE_DIR, TARGET_DIR] {
        let text = fs::read_to_string(data.join(split).join(MANIFEST_FILE))?;
        let entries = ManifestEntry::parse_manifest(&text)?;
        ensure!(ManifestEntry::write_manifest(&entries) == text, "{split} manifest does not re-render byte for byte");
        ensure!(Dataset::load(data.join(split))?.entries == entries, "{split} manifest reload differs");
    }
    notes.push("manifest");

    let run = dir.path().join("cli");
    let mut args: Vec<String> =
        ["train", "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()].map(String::from).to_vec();
    let mut expected = small_config();
    let extra = pairs(&[
        ("lr", "0.00125"),
        ("aaic_form", "log"),
        ("sc_levels", "L,H"),
        ("sc_mode", "cascaded"),
        ("epochs", "1"),
    ]);
    expected.apply(&extra)?;
    for (k, v) in small_config().to_pairs().into_iter().chain(extra) {
        args.push("--set".into());
        args.push(format!("{k}={v}"));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_dlif")).args(&args).env_remove("DLIF_SEED").output()?;
    ensure!(o.status.success(), "cli train failed: {}", String::from_utf8_lossy(&o.stderr));
    let echoed = fs::read_to_string(run.join(RESOLVED_CONFIG))?;
    ensure!(TrainConfig::from_text(&echoed)? == expected, "echoed config differs from the requested one");
    ensure!(expected.to_text() == echoed, "echoed config text is not canonical");
    notes.push("config echo");

    let cfg = small_config();
    let straight = dir.path().join("straight");
    run_training(&cfg, &data, &straight, &RunOptions::default())?;
    let split = dir.path().join("split");
    run_training(&cfg, &data, &split, &RunOptions { stop_after: Some(2), ..RunOptions::default() })?;
    run_training(&cfg, &data, &split, &RunOptions { resume: true, ..RunOptions::default() })?;
    ensure!(files(&straight) == files(&split), "resumed run differs from the straight run");
    notes.push("checkpoint resume");

    let ck = Checkpoint::load(straight.join(BEST_DIR))?;
    let target = Dataset::load(data.join(TARGET_DIR))?;
    let rows: Vec<usize> = (0..target.len()).collect();
    for space in [Space::Liveness, Space::Identity] {
        let e = embeddings(&ck.models, &target, &rows, space)?;
        let path = dir.path().join("emb.csv");
        export_embeddings(&e, &path)?;
        let back = read_embeddings(&path)?;
        ensure!(back == e, "embedding CSV changed the values");
        ensure!(back.to_csv()? == fs::read_to_string(&path)?, "embedding CSV does not re-render byte for byte");
    }
    notes.push("embedding CSV");
    Ok(verdict(true, format!("{} round-trip exactly", notes.join(", "))))
}

fn report(n: usize, name: &str, outcome: Result<Verdict>, failures: &mut usize) {
    let v = outcome.unwrap_or_else(|e| verdict(false, format!("error: {e:#}")));
    *failures += usize::from(!v.pass);
    println!("{} {n} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    let _ = std::io::stdout().flush();
}

fn desk(failures: &mut usize) -> Result<()> {
    let root = tempfile::tempdir()?;
    let data = root.path().join("data");
    generate_dataset(&DatasetSpec::default(), &data)?;
    let flow_l = ablation_cells(Axis::ScFlow).into_iter().find(|(n, _)| n == "L").map(|(_, o)| o).unwrap();
    let cells: [(&str, Vec<(String, String)>); 3] =
        [("full", Vec::new()), ("baseline", baseline_overrides()), ("L", flow_l)];

    let mut aucs: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    let mut first: Option<(TrainConfig, f64)> = None;
    for seed in DESK_SEEDS {
        for (k, (name, overrides)) in cells.iter().enumerate() {
            let cfg = desk_config(seed, overrides)?;
            let r = desk_run(&data, &root.path().join(format!("{name}{seed}")), &cfg, name)?;
            aucs[k].push(r.auc);
            if k == 0 && seed == DESK_SEEDS[0] {
                first = Some((cfg, r.secs));
            }
        }
    }
    let (cfg0, secs0) = first.unwrap();
    let run0 = root.path().join(format!("full{}", DESK_SEEDS[0]));
    report(5, "desk disentanglement", disentanglement(&data, &run0, &cfg0, secs0), failures);

    let (full, base, l) = (median(aucs[0].clone()), median(aucs[1].clone()), median(aucs[2].clone()));
    let gap = full - base;
    let ordering = verdict(
        gap >= 0.03 && l <= full,
        format!(
            "median target AUC full {full:.4} baseline {base:.4} (gap {gap:+.4}, need >= 0.03), L {l:.4} vs M+H {full:.4}; per seed full {:?} baseline {:?} L {:?}",
            aucs[0], aucs[1], aucs[2]
        ),
    );
    report(6, "generalization ordering", Ok(ordering), failures);

    let repeat = root.path().join("repeat");
    let determinism = desk_run(&data, &repeat, &cfg0, "full (repeat)").map(|_| {
        let (a, b) = (files(&run0), files(&repeat));
        let same = a == b;
        verdict(same, format!("{} files compared, {}", a.len(), if same { "bit-identical" } else { "outputs differ" }))
    });
    report(7, "determinism", determinism, failures);
    Ok(())
}

/// `DLIF_ACCEPTANCE_ONLY=1,2,8` restricts the run to those criteria.
fn selected() -> impl Fn(&usize) -> bool {
    let only: Option<Vec<usize>> = std::env::var("DLIF_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    move |n| only.as_ref().is_none_or(|o| o.contains(n))
}

fn main() {
    let on = selected();
    let mut failures = 0;
    let fast: [(usize, &str, Check); 5] = [
        (1, "gradient suite", gradients),
        (2, "oracle equivalence", oracles),
        (3, "style-cross contracts", style_contracts),
        (4, "stop-gradient isolation", isolation),
        (8, "round trips", round_trips),
    ];
    for (n, name, f) in fast {
        if on(&n) {
            report(n, name, f(), &mut failures);
        }
    }
    if (5..=7).any(|n| on(&n)) {
        if let Err(e) = desk(&mut failures) {
            failures += 1;
            println!("FAIL 5-7 desk runs: error: {e:#}");
        }
    }
    println!("{failures} criteria failed");
    if failures > 0 && std::env::var_os("DLIF_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
