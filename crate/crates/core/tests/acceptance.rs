//! Acceptance suite. Runs without the libtest harness so every criterion prints
//! exactly one PASS/FAIL line, captured or not; exits non-zero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use tactile_zsl::config::RunConfig;
use tactile_zsl::data::{gen_synthetic, Dataset, SyntheticConfig};
use tactile_zsl::format::{load_dataset, save_dataset};
use tactile_zsl::losses::{cross_entropy_loss, disc_loss, kl_loss};
use tactile_zsl::metrics::{harmonic_mean, sliced_wasserstein};
use tactile_zsl::networks::Modality;
use tactile_zsl::nn::Matrix;
use tactile_zsl::pipeline::{ablation_suite, run_gzsl, run_zsl, train_model};
use tactile_zsl::zsl::{fit_gaussian, tune_threshold};

const BIN: &str = env!("CARGO_BIN_EXE_tactile-zsl");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradients

fn gradients() -> Outcome {
    let start = Instant::now();
    let stats: Vec<_> = common::CHECKS
        .iter()
        .map(|&(name, f)| common::run_check(name, f, common::SEEDS))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let worst = stats.iter().map(|s| s.max_rel).fold(0.0, f64::max);
    let ok = stats.iter().all(|s| s.passed()) && secs < 30.0;
    let failing: Vec<_> = stats.iter().filter(|s| !s.passed()).map(|s| s.summary()).collect();
    let mut detail = format!(
        "{} networks/losses x {} seeds, max rel err {worst:.2e} (< 1e-4), {secs:.1} s (< 30 s)",
        stats.len(),
        common::SEEDS
    );
    if !failing.is_empty() {
        detail.push_str(&format!("; failing: {}", failing.join("; ")));
    }
    outcome(ok, detail)
}

// ---------------------------------------------------------------------------
// 2. Closed forms

fn closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut kl_err: f64 = 0.0;
    for _ in 0..1000 {
        let rows = rng.gen_range(1..6);
        let cols = rng.gen_range(1..9);
        let mu: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lv: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut oracle = 0.0;
        for (m, l) in mu.iter().zip(&lv) {
            oracle += 0.5 * (m * m + l.exp() - l - 1.0);
        }
        oracle /= rows as f64;
        let got = kl_loss(
            &Matrix::from_vec(rows, cols, mu).unwrap(),
            &Matrix::from_vec(rows, cols, lv).unwrap(),
        )
        .unwrap();
        kl_err = kl_err.max((got - oracle).abs());
    }

    let half = vec![0.5; 7];
    let d_err = (disc_loss(&half, &half, &half) - 3.0 * std::f64::consts::LN_2).abs();

    let mut ce_err: f64 = 0.0;
    for k in 2..=40usize {
        let rows = 5;
        let probs = Matrix::from_vec(rows, k, vec![1.0 / k as f64; rows * k]).unwrap();
        let labels: Vec<usize> = (0..rows).map(|i| (i * 7) % k).collect();
        let got = cross_entropy_loss(&probs, &labels).unwrap();
        ce_err = ce_err.max((got - (k as f64).ln()).abs());
    }
    outcome(
        kl_err < 1e-10 && d_err < 1e-12 && ce_err < 1e-12,
        format!("kl max err {kl_err:.1e} (< 1e-10), disc err {d_err:.1e}, ln k err {ce_err:.1e} (< 1e-12)"),
    )
}

// ---------------------------------------------------------------------------
// 3. Harmonic mean

fn harmonic() -> Outcome {
    let h = harmonic_mean(94.56, 76.00);
    outcome((h - 84.27).abs() < 0.01, format!("H(94.56, 76.00) = {h:.4}, target 84.27 +- 0.01"))
}

// ---------------------------------------------------------------------------
// 4. Sliced Wasserstein against exact 1-D transport

/// W1 between equal-size 1-D samples by sorted matching.
fn sorted_matching(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// W1 between arbitrary 1-D samples as the integral of |F_a − F_b|.
fn cdf_gap(a: &[f64], b: &[f64]) -> f64 {
    let mut pts: Vec<f64> = a.iter().chain(b).copied().collect();
    pts.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    pts.windows(2)
        .map(|w| (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

fn wasserstein() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut err: f64 = 0.0;
    let mut self_dist: f64 = 0.0;
    for trial in 0..200 {
        let n = rng.gen_range(1..40);
        let m = if trial % 2 == 0 { n } else { rng.gen_range(1..40) };
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..8.0)).collect();
        let oracle = if n == m { sorted_matching(&a, &b) } else { cdf_gap(&a, &b) };
        let ma = Matrix::from_vec(n, 1, a.clone()).unwrap();
        let mb = Matrix::from_vec(m, 1, b).unwrap();
        let got = sliced_wasserstein(&ma, &mb, rng.gen_range(1..8), trial).unwrap();
        err = err.max((got - oracle).abs());
        let same = sliced_wasserstein(&ma, &ma, 3, trial).unwrap();
        self_dist = self_dist.max(same.abs());
    }
    outcome(
        err < 1e-10 && self_dist == 0.0,
        format!("max |sliced - exact 1-D W1| = {err:.1e} (< 1e-10), identical inputs give {self_dist}"),
    )
}

// ---------------------------------------------------------------------------
// 5. Gaussian gate

fn gaussian_gate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut moment_err: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..30);
        let d = rng.gen_range(1..6);
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-3.0..3.0) * 2.0).collect();
        let gate = fit_gaussian(&Matrix::from_vec(n, d, data.clone()).unwrap()).unwrap();
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| data[i * d + j]).collect();
            let mu = mean(&col);
            let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
            moment_err = moment_err.max((gate.mean[j] - mu).abs()).max((gate.var[j] - var).abs());
        }
    }

    let mut mismatches = 0;
    for _ in 0..50 {
        let d = rng.gen_range(1..4);
        let nt = rng.gen_range(2..12);
        let nv = rng.gen_range(1..10);
        let shift = rng.gen_range(0.0..3.0);
        let touched: Vec<f64> = (0..nt * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let val: Vec<f64> = (0..nv * d).map(|_| rng.gen_range(-1.0..1.0) + shift).collect();
        let mt = Matrix::from_vec(nt, d, touched.clone()).unwrap();
        let mv = Matrix::from_vec(nv, d, val.clone()).unwrap();
        let gate = fit_gaussian(&mt).unwrap();
        let sweep = tune_threshold(&gate, &mt, &mv).unwrap();

        let log_density = |row: &[f64]| -> f64 {
            row.iter()
                .zip(gate.mean.iter().zip(&gate.var))
                .map(|(x, (m, v))| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v))
                .sum()
        };
        let lt: Vec<f64> = touched.chunks(d).map(log_density).collect();
        let lv: Vec<f64> = val.chunks(d).map(log_density).collect();
        let score = |beta: f64| {
            0.5 * lt.iter().filter(|&&t| t > beta).count() as f64 / nt as f64
                + 0.5 * lv.iter().filter(|&&v| v <= beta).count() as f64 / nv as f64
        };
        let mut candidates: Vec<f64> = lt.iter().chain(&lv).copied().collect();
        candidates.extend([f64::NEG_INFINITY, f64::INFINITY]);
        candidates.sort_by(f64::total_cmp);
        let mut best = (f64::NEG_INFINITY, -1.0);
        for &c in &candidates {
            let s = score(c);
            if s > best.1 {
                best = (c, s);
            }
        }
        let same_beta = best.0 == sweep.beta || (best.0 - sweep.beta).abs() <= 1e-9 * best.0.abs().max(1.0);
        if !same_beta || (best.1 - sweep.score).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    outcome(
        moment_err < 1e-12 && mismatches == 0,
        format!("moment max err {moment_err:.1e} (< 1e-12), beta mismatches {mismatches}/50"),
    )
}

// ---------------------------------------------------------------------------
// 6 and 7. End-to-end ZSL and GZSL

fn desk_data(seed: u64) -> Dataset {
    gen_synthetic(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn end_to_end() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut zsl = Vec::new();
    let mut models = Vec::new();
    for seed in 0..3 {
        let ds = desk_data(seed);
        let cfg = RunConfig::default().with_seed(seed);
        let (model, _) = train_model(&ds, &cfg).unwrap();
        zsl.push(run_zsl(&model, &ds, &cfg).unwrap().report.average_accuracy);
        models.push((model, ds, cfg));
    }
    let secs = start.elapsed().as_secs_f64();
    let acc = mean(&zsl);
    let c6 = outcome(
        acc >= 0.70 && secs < 300.0,
        format!("mean accuracy {acc:.4} (>= 0.70) over seeds [{}], {secs:.1} s (< 300 s)", fmt_list(&zsl)),
    );

    let (mut t, mut u, mut g, mut h) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (model, ds, cfg) in &models {
        let r = run_gzsl(model, ds, cfg).unwrap().report;
        t.push(r.acc_t.unwrap());
        u.push(r.acc_u.unwrap());
        g.push(r.gate_score.unwrap());
        h.push(r.h.unwrap());
    }
    let (mt, mg, mh) = (mean(&t), mean(&g), mean(&h));
    let c7 = outcome(
        mt >= 0.85 && mg >= 0.80 && mh >= 0.5,
        format!(
            "acc_t {mt:.4} (>= 0.85) [{}], gate {mg:.4} (>= 0.80) [{}], H {mh:.4} (>= 0.50) [{}], acc_u [{}]",
            fmt_list(&t),
            fmt_list(&g),
            fmt_list(&h),
            fmt_list(&u)
        ),
    );
    (c6, c7)
}

// ---------------------------------------------------------------------------
// 8. Ablation ordering

fn ablation() -> Outcome {
    let summary = ablation_suite(&RunConfig::default(), &[0, 1, 2, 3, 4], |s| Ok(desk_data(s))).unwrap();
    let acc = |name: &str| summary.mean_accuracy[name];
    let (full, no_fusion, no_encoder) = (acc("full"), acc("encoder_only"), acc("fusion_only"));
    let lowest = summary.full_lowest_wasserstein_seeds;
    let w: Vec<String> = summary
        .mean_wasserstein
        .iter()
        .map(|(k, v)| format!("{k} {v:.4}"))
        .collect();
    outcome(
        full >= no_fusion && full >= no_encoder && lowest >= 3,
        format!(
            "full {full:.4} >= no-fusion {no_fusion:.4} and no-encoder {no_encoder:.4} (baseline {:.4}); \
             full lowest Wasserstein on {lowest}/5 seeds (>= 3); mean Wasserstein: {}",
            acc("baseline"),
            w.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Modality ordering

fn modality() -> Outcome {
    let mut means = Vec::new();
    for m in [Modality::Multimodal, Modality::VisualOnly, Modality::SemanticOnly] {
        let mut accs = Vec::new();
        for seed in 0..5 {
            let ds = gen_synthetic(&SyntheticConfig {
                seed,
                shared_untouched_semantics: true,
                ..SyntheticConfig::default()
            })
            .unwrap();
            let mut cfg = RunConfig::default().with_seed(seed);
            cfg.model.modality = m;
            let (model, _) = train_model(&ds, &cfg).unwrap();
            accs.push(run_zsl(&model, &ds, &cfg).unwrap().report.average_accuracy);
        }
        means.push(mean(&accs));
    }
    outcome(
        means[0] >= means[1] && means[1] >= means[2],
        format!(
            "multimodal {:.4} >= visual {:.4} >= semantic {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

fn cli(args: &[&str], root: &Path) -> bool {
    Command::new(BIN)
        .args(args)
        .current_dir(root)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

const PIPELINE: [&[&str]; 7] = [
    &["gen-data", "--seed", "3", "--out", "data"],
    &["train", "--data", "data", "--iterations", "300", "--seed", "3", "--snapshot-every", "100", "--out", "run"],
    &["synth", "--model", "run/model.bin", "--data", "data", "--out", "synth"],
    &["eval-zsl", "--model", "run/model.bin", "--data", "data", "--out", "zsl"],
    &["eval-gzsl", "--model", "run/model.bin", "--data", "data", "--out", "gzsl"],
    &["diag", "--model", "run/model.bin", "--data", "data", "--out", "diag"],
    &["ablate-suite", "--seeds", "2", "--iterations", "100", "--samples", "20", "--out", "ablate"],
];

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect_files(&p, out);
        } else {
            out.push(p);
        }
    }
}

fn determinism() -> Outcome {
    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        for args in PIPELINE {
            if !cli(args, dir.path()) {
                return outcome(false, format!("`{}` failed", args[0]));
            }
        }
    }
    let mut files = Vec::new();
    collect_files(runs[0].path(), &mut files);
    files.sort();
    let mut differ = Vec::new();
    for f in &files {
        let rel = f.strip_prefix(runs[0].path()).unwrap();
        let other = std::fs::read(runs[1].path().join(rel)).ok();
        if other.as_deref() != Some(std::fs::read(f).unwrap().as_slice()) {
            differ.push(rel.display().to_string());
        }
    }
    let text = files
        .iter()
        .filter(|f| matches!(f.extension().and_then(|e| e.to_str()), Some("json" | "csv")))
        .count();
    outcome(
        differ.is_empty(),
        format!(
            "{} commands, {} output files ({text} JSON/CSV) byte-identical across two runs{}",
            PIPELINE.len(),
            files.len(),
            if differ.is_empty() { String::new() } else { format!("; differ: {}", differ.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. Format round trip and corruption

fn corrupted_exit(dir: &Path, file: &str, corrupt: impl Fn(&mut Vec<u8>)) -> Option<i32> {
    Command::new(BIN)
        .args(["gen-data", "--touched", "3", "--val", "1", "--untouched", "2", "--samples", "6", "--out"])
        .arg(dir)
        .output()
        .ok()?;
    Command::new(BIN)
        .args(["train", "--iterations", "2", "--data"])
        .arg(dir)
        .arg("--out")
        .arg(dir.join("m.bin"))
        .output()
        .ok()?;
    let path = dir.join(file);
    let mut bytes = std::fs::read(&path).ok()?;
    corrupt(&mut bytes);
    std::fs::write(&path, &bytes).ok()?;
    Command::new(BIN)
        .args(["eval-zsl", "--classifier-iterations", "1", "--model"])
        .arg(dir.join("m.bin"))
        .arg("--data")
        .arg(dir)
        .arg("--out")
        .arg(dir.join("eval"))
        .output()
        .ok()?
        .status
        .code()
}

fn formats() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut bad = 0;
    for seed in 0..1000 {
        let ds = common::random_dataset(seed);
        let dir = root.path().join(format!("ds{seed}"));
        save_dataset(&ds, &dir).unwrap();
        if !load_dataset(&dir).is_ok_and(|back| common::bit_identical(&ds, &back)) {
            bad += 1;
        }
    }

    type Case = (&'static str, &'static str, fn(&mut Vec<u8>));
    let cases: [Case; 9] = [
        ("matrix magic", "visual.vszt", |b| b[0] ^= 0xff),
        ("matrix version", "tactile.vszt", |b| b[4] = 9),
        ("matrix truncated", "semantic.vszt", |b| {
            b.pop();
        }),
        ("matrix trailing", "visual.vszt", |b| b.push(0)),
        ("matrix row count", "tactile.vszt", |b| b[8] = b[8].wrapping_add(1)),
        ("labels length", "labels.u32", |b| {
            b.pop();
        }),
        ("model magic", "m.bin", |b| b[0] ^= 0xff),
        ("model version", "m.bin", |b| b[4] = 7),
        ("model truncated", "m.bin", |b| {
            b.truncate(b.len() - 3);
        }),
    ];
    let mut wrong = Vec::new();
    for (i, (what, file, corrupt)) in cases.into_iter().enumerate() {
        let code = corrupted_exit(&root.path().join(format!("corrupt{i}")), file, corrupt);
        if code != Some(3) {
            wrong.push(format!("{what} -> {code:?}"));
        }
    }
    outcome(
        bad == 0 && wrong.is_empty(),
        format!(
            "{}/1000 datasets bit-exact; {}/{} corruptions exit 3{}",
            1000 - bad,
            cases.len() - wrong.len(),
            cases.len(),
            if wrong.is_empty() { String::new() } else { format!(" ({})", wrong.join(", ")) }
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient correctness", gradients()),
        (2, "closed-form oracles", closed_forms()),
        (3, "harmonic mean", harmonic()),
        (4, "Wasserstein oracle", wasserstein()),
        (5, "Gaussian gate oracle", gaussian_gate()),
    ];
    let (c6, c7) = end_to_end();
    results.push((6, "end-to-end ZSL", c6));
    results.push((7, "end-to-end GZSL", c7));
    results.push((8, "ablation ordering", ablation()));
    results.push((9, "modality ordering", modality()));
    results.push((10, "CLI determinism", determinism()));
    results.push((11, "format round trip", formats()));

    println!();
    for (n, name, o) in &results {
        println!("{} {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
