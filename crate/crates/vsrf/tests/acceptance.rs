//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vsrf::model::{decode, encode, load_model, FORMAT_VERSION};
use vsrf::phantom::{make_phantom, PhantomKind};
use vsrf_core::forest::{fit_leaf, split_quality, SplitParams};
use vsrf_core::metrics::{psnr, ssim};
use vsrf_core::patch::{extract_patches, reconstruct};
use vsrf_core::pipeline::{evaluate_model, sweep_training_volumes, train_model, ExperimentReport};
use vsrf_core::{
    DegradationSpec, EnsembleMode, FeatureSet, LambdaPolicy, PatchGrid, SrConfig, SrModel, SsimMode,
    TrainingSet, Volume,
};

type Named = Vec<(String, Volume)>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Suite {
    failed: Vec<u32>,
}

impl Suite {
    /// `budget` is the allowed runtime in seconds.
    fn run(&mut self, id: u32, name: &str, budget: f64, f: impl FnOnce() -> Verdict) {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        let pass = v.pass && secs < budget;
        let status = if pass { "PASS" } else { "FAIL" };
        let limit = if budget.is_finite() { format!(" of {budget:.0}s") } else { String::new() };
        println!("{status} {id:>2} {name}: {} [{secs:.1}s{limit}]", v.detail);
        if !pass {
            self.failed.push(id);
        }
    }
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, d_l: usize, d_h: usize) -> TrainingSet {
    let x_l = (0..n * d_l).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let x_h = (0..n * d_h).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    TrainingSet::new(d_l, d_h, x_l, x_h).unwrap()
}

fn leaf_regression() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let d_l = rng.gen_range(1..=30);
        let d_h = rng.gen_range(1..=27);
        let n = rng.gen_range(1..=200);
        let ts = random_set(&mut rng, n, d_l, d_h);
        let idx: Vec<usize> = (0..n).collect();
        let policy = if case % 2 == 0 {
            LambdaPolicy::Auto { max_condition: 1e8 }
        } else if n > d_l {
            LambdaPolicy::Fixed([0.0, 0.01, 1.0][case % 3])
        } else {
            LambdaPolicy::Fixed(rng.gen_range(0.01..5.0))
        };
        let leaf = match fit_leaf(&ts, &idx, policy) {
            Ok(l) => l,
            Err(e) => return verdict(false, format!("case {case}: {e}")),
        };
        let l = DMatrix::from_fn(n, d_l, |r, c| ts.x_l(r)[c] as f64);
        let h = DMatrix::from_fn(n, d_h, |r, c| ts.x_h(r)[c] as f64);
        let gram = l.transpose() * &l + DMatrix::identity(d_l, d_l) * leaf.lambda;
        let Some(inv) = gram.try_inverse() else {
            return verdict(false, format!("case {case}: oracle system singular"));
        };
        let wt = inv * l.transpose() * h;
        let (mut err, mut norm) = (0.0, 0.0);
        for r in 0..d_h {
            for c in 0..d_l {
                err += (leaf.w[r * d_l + c] as f64 - wt[(c, r)]).powi(2);
                norm += wt[(c, r)].powi(2);
            }
        }
        let rel = if norm > 0.0 { (err / norm).sqrt() } else { err.sqrt() };
        worst = worst.max(rel);
    }
    verdict(worst <= 1e-6, format!("50 systems, max relative Frobenius error {worst:.2e} (<= 1e-6)"))
}

fn variance_oracle(ts: &TrainingSet, idx: &[usize], kappa: f64) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let n = idx.len() as f64;
    let spread = |rows: Vec<&[f32]>| -> f64 {
        (0..rows[0].len())
            .map(|c| {
                let m = rows.iter().map(|r| r[c] as f64).sum::<f64>() / n;
                rows.iter().map(|r| (r[c] as f64 - m).powi(2)).sum::<f64>()
            })
            .sum()
    };
    let h = spread(idx.iter().map(|&s| ts.x_h(s)).collect());
    let l = spread(idx.iter().map(|&s| ts.x_l(s)).collect());
    (h + kappa * l) / n
}

fn split_quality_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 100 {
        let n = rng.gen_range(4..80);
        let (d_l, d_h) = (rng.gen_range(2..12), rng.gen_range(1..10));
        let ts = random_set(&mut rng, n, d_l, d_h);
        let idx: Vec<usize> = (0..n).collect();
        let pivot = rng.gen_range(0..n);
        let theta = SplitParams {
            phi1: rng.gen_range(0..d_l),
            phi2: rng.gen_range(0..d_l),
            tau: 0.0,
        };
        let theta = SplitParams {
            tau: ts.x_l(pivot)[theta.phi1] - ts.x_l(pivot)[theta.phi2] + 1e-3,
            ..theta
        };
        let kappa = [0.0, 1.0, 5.0][cases % 3];
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&s| ts.x_l(s)[theta.phi1] - ts.x_l(s)[theta.phi2] < theta.tau);
        let got = split_quality(&ts, &idx, &theta, kappa);
        if left.is_empty() || right.is_empty() {
            if got.is_some() {
                return verdict(false, format!("case {cases}: empty child not reported"));
            }
            continue;
        }
        let Some(q) = got else {
            return verdict(false, format!("case {cases}: no quality for a proper split"));
        };
        let want = left.len() as f64 * variance_oracle(&ts, &left, kappa)
            + right.len() as f64 * variance_oracle(&ts, &right, kappa);
        worst = worst.max((q - want).abs());
        cases += 1;
    }
    verdict(worst <= 1e-9, format!("100 cases, kappa in {{0,1,5}}, max abs error {worst:.2e} (<= 1e-9)"))
}

fn reconstruction_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f32;
    for _ in 0..20 {
        let dims = [rng.gen_range(3..20), rng.gen_range(3..20), rng.gen_range(3..20)];
        let v = Volume::from_fn(dims, |_, _, _| rng.gen_range(-1.0f32..1.0)).unwrap();
        let grid = PatchGrid::new(dims, [3; 3], [1; 3]).unwrap();
        let patches = extract_patches(&v, &grid).unwrap();
        let rec = reconstruct(&patches, &grid, dims).unwrap();
        if rec.uncovered != 0 {
            return verdict(false, format!("{dims:?}: {} voxels uncovered", rec.uncovered));
        }
        for (a, b) in rec.volume.data().iter().zip(v.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-6, format!("20 volumes, max abs error {worst:.2e} (<= 1e-6)"))
}

fn naive_ssim(a: &Volume, b: &Volume) -> f64 {
    let [nx, ny, nz] = a.dims();
    let taps: Vec<f64> = (-5i64..=5).map(|i| (-(i * i) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let total_w: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total_w).collect();
    let at = |v: &Volume, x: i64, y: i64, z: i64| {
        let c = |p: i64, n: usize| p.clamp(0, n as i64 - 1) as usize;
        v.get(c(x, nx), c(y, ny), c(z, nz)) as f64
    };
    let mut sum = 0.0;
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let mut window = Vec::with_capacity(1331);
                for (k, wk) in taps.iter().enumerate() {
                    for (j, wj) in taps.iter().enumerate() {
                        for (i, wi) in taps.iter().enumerate() {
                            let (px, py, pz) = (x + i as i64 - 5, y + j as i64 - 5, z + k as i64 - 5);
                            window.push((wi * wj * wk, at(a, px, py, pz), at(b, px, py, pz)));
                        }
                    }
                }
                let mx: f64 = window.iter().map(|(w, p, _)| w * p).sum();
                let my: f64 = window.iter().map(|(w, _, q)| w * q).sum();
                let vx: f64 = window.iter().map(|(w, p, _)| w * (p - mx).powi(2)).sum();
                let vy: f64 = window.iter().map(|(w, _, q)| w * (q - my).powi(2)).sum();
                let cov: f64 = window.iter().map(|(w, p, q)| w * (p - mx) * (q - my)).sum();
                let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    sum / (nx * ny * nz) as f64
}

fn metric_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let (mut dp, mut ds, mut sym) = (0.0f64, 0.0f64, 0.0f64);
    let mut identity_ok = true;
    for amp in [0.02f32, 0.2, 1.0] {
        let a = Volume::from_fn([16; 3], |_, _, _| rng.gen()).unwrap();
        let b = Volume::from_fn([16; 3], |x, y, z| {
            (a.get(x, y, z) + amp * (rng.gen::<f32>() - 0.5)).clamp(0.0, 1.0)
        })
        .unwrap();
        let mse = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
            .sum::<f64>()
            / a.len() as f64;
        dp = dp.max((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs());
        let s = ssim(&a, &b, SsimMode::Volume).unwrap();
        ds = ds.max((s - naive_ssim(&a, &b)).abs());
        sym = sym.max((s - ssim(&b, &a, SsimMode::Volume).unwrap()).abs());
        identity_ok &= ssim(&a, &a, SsimMode::Volume).unwrap() == 1.0
            && ssim(&a, &a, SsimMode::Slice).unwrap() == 1.0
            && psnr(&a, &a).unwrap() == f64::INFINITY;
    }
    verdict(
        dp <= 1e-9 && ds <= 1e-6 && sym <= 1e-12 && identity_ok,
        format!(
            "psnr err {dp:.1e} dB (<= 1e-9), ssim err {ds:.1e} (<= 1e-6), asymmetry {sym:.1e} (<= 1e-12), identity {}",
            if identity_ok { "1.0" } else { "not 1.0" }
        ),
    )
}

fn vsrf(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vsrf"))
        .args(args)
        .env("VSRF_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cli_determinism(dir: &Path) -> Verdict {
    let run = || -> Result<(bool, bool), String> {
        let hr = dir.join("hr");
        std::fs::create_dir_all(&hr).map_err(|e| e.to_string())?;
        for seed in ["11", "12"] {
            let out = hr.join(format!("shell{seed}.nii"));
            vsrf(&["phantom", "--kind", "shells", "--dims", "32", "--seed", seed, "--out", s(&out)], "1")?;
        }
        let test = dir.join("test.nii");
        vsrf(&["phantom", "--kind", "shells", "--dims", "32", "--seed", "13", "--out", s(&test)], "1")?;
        let lr = dir.join("lr.nii");
        vsrf(&["degrade", "--in", s(&test), "--out", s(&lr)], "1")?;

        let (m1, m2) = (dir.join("a.vsrf"), dir.join("b.vsrf"));
        vsrf(&["train", "--hr", s(&hr), "--out", s(&m1), "--seed", "4"], "1")?;
        vsrf(&["train", "--hr", s(&hr), "--out", s(&m2), "--seed", "4"], "2")?;
        let (o1, o2) = (dir.join("sr1.nii"), dir.join("sr2.nii"));
        vsrf(&["sr", "--in", s(&lr), "--model", s(&m1), "--out", s(&o1)], "1")?;
        vsrf(&["sr", "--in", s(&lr), "--model", s(&m2), "--out", s(&o2)], "2")?;
        let same = |a: &Path, b: &Path| std::fs::read(a).ok() == std::fs::read(b).ok();
        Ok((same(&m1, &m2), same(&o1, &o2)))
    };
    match run() {
        Ok((models, outputs)) => verdict(
            models && outputs,
            format!(
                "train x2: models {}; sr x2: volumes {}",
                if models { "byte-identical" } else { "differ" },
                if outputs { "byte-identical" } else { "differ" }
            ),
        ),
        Err(e) => verdict(false, e),
    }
}

fn model_round_trip(dir: &Path) -> Verdict {
    let path = dir.join("a.vsrf");
    let model = match load_model(&path) {
        Ok(m) => m,
        Err(e) => return verdict(false, format!("loading the determinism model: {e}")),
    };
    let bytes = std::fs::read(&path).unwrap();
    let back = decode(&path, &encode(&model).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let d = model.forest.input_dim();
    let mut exact = back == model;
    for _ in 0..100 {
        let x: Vec<f32> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
        for mode in [EnsembleMode::Median, EnsembleMode::Average] {
            let a = model.forest.predict(&x, mode).unwrap();
            let b = back.forest.predict(&x, mode).unwrap();
            exact &= a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits());
        }
    }

    use vsrf::Error as E;
    let mut flipped = bytes.clone();
    let mid = bytes.len() - 9;
    flipped[mid] ^= 0x10;
    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"NOPE");
    let cut = &bytes[..bytes.len() / 2];
    let rejected = [
        ("checksum", matches!(decode(&path, &flipped), Err(E::ChecksumMismatch { .. }))),
        ("version", matches!(decode(&path, &newer), Err(E::VersionMismatch { .. }))),
        ("magic", matches!(decode(&path, &magic), Err(E::BadMagic { .. }))),
        ("truncated", matches!(decode(&path, cut), Err(E::Truncated { .. }))),
    ];
    let bad: Vec<&str> = rejected.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();

    let corrupt = dir.join("corrupt.vsrf");
    std::fs::write(&corrupt, &flipped).unwrap();
    let code = Command::new(env!("CARGO_BIN_EXE_vsrf"))
        .args(["model-info", s(&corrupt)])
        .output()
        .map(|o| o.status.code())
        .unwrap_or(None);
    let code_ok = code == Some(2);
    verdict(
        exact && bad.is_empty() && code_ok,
        format!(
            "100 vectors {}; corrupt files rejected: {}; cli exit code {:?} (want 2)",
            if exact { "bit-exact" } else { "differ" },
            if bad.is_empty() { "all".to_string() } else { format!("missed {bad:?}") },
            code
        ),
    )
}

fn shells(prefix: &str, seeds: impl Iterator<Item = u64>) -> Named {
    seeds
        .map(|s| {
            (
                format!("{prefix}{s}"),
                make_phantom(PhantomKind::Shells, [64; 3], s).unwrap(),
            )
        })
        .collect()
}

fn benchmark(seed: u64) -> (Named, Named) {
    let base = 1000 * (seed + 1);
    (shells("train", base..base + 4), shells("test", base + 4..base + 6))
}

fn fmt_report(r: &ExperimentReport) -> String {
    format!(
        "{:.2} dB / {:.4} vs tricubic {:.2} dB / {:.4}",
        r.mean.vsrf.psnr_db, r.mean.vsrf.ssim, r.mean.tricubic.psnr_db, r.mean.tricubic.ssim
    )
}

struct Trained {
    model: SrModel,
    test: Named,
    report: ExperimentReport,
}

fn synthetic_gain(runs: &[Trained]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        let m = &r.report.mean;
        let ok = m.vsrf.psnr_db >= m.tricubic.psnr_db + 0.5 && m.vsrf.ssim >= m.tricubic.ssim;
        pass &= ok;
        parts.push(format!("seed {seed}: {}", fmt_report(&r.report)));
    }
    verdict(pass, parts.join("; "))
}

/// Adds uniform noise of ten times the tree's largest weight to 5% of the
/// leaves of tree 0.
fn corrupt(model: &SrModel, seed: u64) -> SrModel {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = &mut m.forest.trees_mut()[0];
    let scale = 10.0
        * tree
            .leaves()
            .iter()
            .flat_map(|l| l.w.iter())
            .fold(0.0f32, |a, w| a.max(w.abs()));
    let n = tree.leaves().len();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    for &i in &ids[..n.div_ceil(20)] {
        for w in tree.leaves_mut()[i].w.iter_mut() {
            *w += rng.gen_range(-scale..scale);
        }
    }
    m
}

fn ablation(runs: &[Trained], dev: &Result<ExperimentReport, String>) -> Verdict {
    let cfg = SrConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        let bad = corrupt(&r.model, 500 + seed as u64);
        let score = |ensemble| {
            evaluate_model(&bad, &r.test, &SrConfig { ensemble, ..cfg }, SsimMode::Volume)
                .map(|rep| rep.mean.vsrf.psnr_db)
        };
        match (score(EnsembleMode::Median), score(EnsembleMode::Average)) {
            (Ok(med), Ok(avg)) => {
                pass &= med > avg;
                parts.push(format!("seed {seed}: median {med:.2} vs average {avg:.2} dB"));
            }
            (Err(e), _) | (_, Err(e)) => {
                pass = false;
                parts.push(format!("seed {seed}: {e}"));
            }
        }
    }
    match dev {
        Ok(dev) => {
            let devedge = runs[0].report.mean.vsrf.psnr_db;
            let d = dev.mean.vsrf.psnr_db;
            pass &= devedge >= d - 0.1;
            parts.push(format!("devedge {devedge:.3} vs dev {d:.3} dB (>= dev - 0.1)"));
        }
        Err(e) => {
            pass = false;
            parts.push(format!("dev model: {e}"));
        }
    }
    verdict(pass, parts.join("; "))
}

fn training_volume_trend() -> Verdict {
    let pool = shells("pool", 9000..9005);
    let test = shells("held", 9005..9007);
    let rows = match sweep_training_volumes(
        &pool,
        &test,
        &[1, 3, 5],
        &DegradationSpec::default(),
        &SrConfig::default(),
        0,
    ) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let psnr: Vec<f64> = rows.iter().map(|r| r.report.mean.vsrf.psnr_db).collect();
    let trend = psnr.windows(2).all(|w| w[1] >= w[0] - 0.1);
    let first = &rows[0].report.mean;
    let beats = first.vsrf.psnr_db > first.tricubic.psnr_db;
    verdict(
        trend && beats,
        format!(
            "1/3/5 volumes: {:.2} / {:.2} / {:.2} dB (non-decreasing within 0.1); 1 volume vs tricubic {:.2} dB",
            psnr[0], psnr[1], psnr[2], first.tricubic.psnr_db
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut suite = Suite { failed: Vec::new() };
    let dir = tempfile::tempdir().expect("temp dir");

    suite.run(1, "leaf regression vs dense normal equations", 10.0, leaf_regression);
    suite.run(2, "split quality vs partition oracle", 5.0, split_quality_oracle);
    suite.run(3, "patch reconstruction identity", 5.0, reconstruction_identity);
    suite.run(7, "metric correctness", 60.0, metric_correctness);
    suite.run(8, "cli determinism", 300.0, || cli_determinism(dir.path()));
    suite.run(9, "model round trip", 60.0, || model_round_trip(dir.path()));

    let spec = DegradationSpec::default();
    let cfg = SrConfig::default();
    // the models are reused by the ablation
    let mut runs: Vec<Trained> = Vec::new();
    suite.run(4, "synthetic gain over tricubic (shells 64^3, 3 seeds)", 600.0, || {
        for seed in 0..3u64 {
            let (train, test) = benchmark(seed);
            let trained = train_model(&train, &spec, &cfg, seed)
                .and_then(|model| {
                    let report = evaluate_model(&model, &test, &cfg, SsimMode::Volume)?;
                    Ok(Trained { model, test, report })
                });
            match trained {
                Ok(t) => runs.push(t),
                Err(e) => return verdict(false, format!("seed {seed}: {e}")),
            }
        }
        synthetic_gain(&runs)
    });
    suite.run(6, "median vs average with corrupted leaves; devedge vs dev", f64::INFINITY, || {
        let (train, test) = benchmark(0);
        let dev_cfg = SrConfig {
            feature_set: FeatureSet::Dev,
            ..cfg
        };
        let dev = train_model(&train, &spec, &dev_cfg, 0)
            .and_then(|m| evaluate_model(&m, &test, &dev_cfg, SsimMode::Volume))
            .map_err(|e| e.to_string());
        if runs.len() < 3 {
            return verdict(false, "benchmark models missing");
        }
        ablation(&runs, &dev)
    });
    suite.run(5, "training-volume sweep trend", 1200.0, training_volume_trend);
    println!("SKIP 10 public-dataset reproduction: manual, see README");

    println!(
        "acceptance: {} failed {:?} in {:.0}s",
        suite.failed.len(),
        suite.failed,
        started.elapsed().as_secs_f64()
    );
    if !suite.failed.is_empty() {
        std::process::exit(1);
    }
}
