//! Acceptance criteria. Each test prints one `[PASS]` or `[FAIL]` line to
//! stderr (uncaptured), then asserts.
//!
//! C2 to C5 need the released ratings and the features computed from the
//! released images. Point `UAB_RELEASED_DATA` at a directory holding
//! `manifest.json`, `ratings.csv`, `features.csv` and `fr_scores.csv`, then
//! run `cargo test -p uab-cli --test acceptance -- --include-ignored`.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use uab_core::evalmetrics::{classification_report, kendall, pearson, read_scores, spearman};
use uab_core::features::{extract_features, read_feature_csv, FeatureName};
use uab_core::forest::{cross_validate, train, ForestConfig, MaxFeatures, Node, Targets};
use uab_core::frmetrics::{psnr, ssim};
use uab_core::imaging::{patch_count, resize_plane_lanczos, ImageBuffer, Plane};
use uab_core::subjective::{analyze, compute_mos, load_ratings, mos_map};
use uab_core::upscalers::{expected_entry_count, DatasetManifest};

fn line(id: &str, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "[{tag}] {id} {name}: {detail}");
}

/// Run `check`, print its line and fail the test if it failed.
fn criterion(id: &str, name: &str, check: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let res = check();
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok(detail) => line(id, name, true, &format!("{detail} ({secs:.1} s)")),
        Err(detail) => {
            line(id, name, false, &format!("{detail} ({secs:.1} s)"));
            panic!("{id} failed: {detail}");
        }
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

const RELEASED_ENV: &str = "UAB_RELEASED_DATA";

fn released_dir() -> Result<PathBuf, String> {
    let dir = std::env::var_os(RELEASED_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| format!("not verified: {RELEASED_ENV} is unset, released data absent"))?;
    for f in ["manifest.json", "ratings.csv"] {
        ensure(dir.join(f).is_file(), format!("not verified: {} missing", dir.join(f).display()))?;
    }
    Ok(dir)
}

fn released_mos(dir: &Path) -> Result<BTreeMap<String, f64>, String> {
    let ratings = load_ratings(dir.join("ratings.csv")).map_err(|e| e.to_string())?;
    Ok(mos_map(&compute_mos(&ratings)))
}

/// Feature rows joined with MOS, in feature-file order.
fn released_features(dir: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<f64>), String> {
    let path = dir.join("features.csv");
    ensure(path.is_file(), format!("not verified: {} missing", path.display()))?;
    let rows = read_feature_csv(&path).map_err(|e| e.to_string())?;
    let mos = released_mos(dir)?;
    let mut ids = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in rows {
        if let Some(&m) = mos.get(&r.stimulus_id) {
            x.push(r.to_row());
            y.push(m);
            ids.push(r.stimulus_id);
        }
    }
    ensure(!ids.is_empty(), "no feature rows match the rated stimuli")?;
    Ok((ids, x, y))
}

#[test]
fn c1_dataset_arithmetic() {
    criterion("C1", "dataset arithmetic", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = Run::new(
            dir.path(),
            json!({
                "upscalers": upscaler_specs(4),
                "pipeline": {"common_height": 32, "factors": [2, 4]},
                "jobs": 0
            }),
        );
        write_sources(&dir.path().join("input"), 136, 48, 32, 1);
        let o = run.uab(&["prepare"]);
        ensure(code(&o) == 0, format!("prepare exited {}: {}", code(&o), stderr(&o)))?;
        let m = DatasetManifest::load(run.out().join("manifest.json")).map_err(|e| e.to_string())?;
        let mut cells: BTreeMap<(String, u32), usize> = BTreeMap::new();
        for e in &m.entries {
            *cells.entry((e.method.clone(), e.factor)).or_default() += 1;
        }
        ensure(cells.len() == 11, format!("{} (method, factor) cells, expected 11", cells.len()))?;
        ensure(cells.values().all(|&c| c == 136), "a (method, factor) cell is not 136")?;
        ensure(m.missing.is_empty(), "manifest lists missing stimuli")?;
        ensure(expected_entry_count(136, 5) == 1496, "closed form")?;
        ensure(
            m.entries.len() == 1496,
            format!("{} manifest entries, expected 1496", m.entries.len()),
        )?;
        Ok("136 sources x (2 x 5 + 1) = 1496 manifest entries".into())
    });
}

#[test]
#[ignore = "needs the released ratings; set UAB_RELEASED_DATA"]
fn c2_subjective_reproduction() {
    criterion("C2", "subjective reproduction", || {
        let dir = released_dir()?;
        let manifest = DatasetManifest::load(dir.join("manifest.json")).map_err(|e| e.to_string())?;
        let ratings = load_ratings(dir.join("ratings.csv")).map_err(|e| e.to_string())?;
        let (_, report) = analyze(&ratings, &manifest);
        let sp = report.source_preference.as_ref().ok_or("no source preference table")?;
        let count = |f: u32| sp.best_of.iter().find(|c| c.factor == f).map(|c| (c.yes, c.no));
        ensure(count(2) == Some((35, 101)), format!("x2 yes/no {:?}, expected (35, 101)", count(2)))?;
        ensure(count(4) == Some((81, 55)), format!("x4 yes/no {:?}, expected (81, 55)", count(4)))?;
        let a = report.sos.as_ref().ok_or("no SOS fit")?.a;
        ensure((a - 0.275).abs() <= 0.02, format!("SOS a = {a:.4}, expected 0.275 +- 0.02"))?;
        let v = report.votes.ok_or("no vote summary")?;
        ensure(v.min == 4 && v.max == 25, format!("votes min {} max {}, expected 4 / 25", v.min, v.max))?;
        ensure((v.mean - 14.7).abs() <= 0.1, format!("mean votes {:.3}, expected 14.7 +- 0.1", v.mean))?;
        let lanczos = std::env::var("UAB_LANCZOS_METHOD").unwrap_or_else(|_| "lanczos".into());
        let counts = report.preference_counts.as_ref().ok_or("no preference counts")?;
        let wins: usize = counts.get(&lanczos).map_or(0, |m| m.values().sum());
        ensure(counts.contains_key(&lanczos), format!("method `{lanczos}` not in manifest"))?;
        ensure(wins == 0, format!("{lanczos} preferred for {wins} images, expected 0"))?;
        Ok(format!("x2 35/101, x4 81/55, a = {a:.4}, votes 4..25 mean {:.2}, {lanczos} never preferred", v.mean))
    });
}

#[test]
#[ignore = "needs released features and ratings; set UAB_RELEASED_DATA"]
fn c3_combined_forest() {
    criterion("C3", "combined random forest", || {
        let dir = released_dir()?;
        let (ids, x, y) = released_features(&dir)?;
        let names: Vec<String> = FeatureName::ALL.iter().map(|n| n.to_string()).collect();
        let cfg = ForestConfig::default();
        let cv = cross_validate(&ids, &x, &Targets::Regression(y), &names, &cfg, 10).map_err(|e| e.to_string())?;
        let r = cv.pearson().ok_or("out-of-fold Pearson undefined")?;
        ensure(r >= 0.60, format!("out-of-fold Pearson {r:.4} < 0.60"))?;
        Ok(format!("10-fold, 100 trees, seed 0: out-of-fold Pearson {r:.4} >= 0.60"))
    });
}

#[test]
#[ignore = "needs released features and ratings; set UAB_RELEASED_DATA"]
fn c4_feature_ordering() {
    criterion("C4", "feature sign and ordering", || {
        let dir = released_dir()?;
        let (_, x, y) = released_features(&dir)?;
        let mut r = BTreeMap::new();
        for (j, name) in FeatureName::ALL.iter().enumerate() {
            let (t, p): (Vec<f64>, Vec<f64>) = x
                .iter()
                .zip(&y)
                .filter(|(row, _)| row[j].is_finite())
                .map(|(row, &m)| (m, row[j]))
                .unzip();
            r.insert(*name, pearson(&t, &p).unwrap_or(f64::NAN));
        }
        let cpbd = r[&FeatureName::Cpbd];
        let bs = r[&FeatureName::BlurStrength];
        ensure(cpbd > 0.4, format!("Pearson(cpbd) = {cpbd:.4}, expected > 0.4"))?;
        let top = r.iter().filter(|(n, _)| **n != FeatureName::Cpbd).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        ensure(cpbd > top, format!("cpbd {cpbd:.4} is not above every other feature (max {top:.4})"))?;
        ensure(bs < -0.2, format!("Pearson(blur_strength) = {bs:.4}, expected < -0.2"))?;
        Ok(format!("cpbd {cpbd:.4} is the largest, blur_strength {bs:.4}"))
    });
}

#[test]
fn c5_full_reference_metric_units() {
    criterion("C5", "full-reference metric units", || {
        let a = Plane::from_fn(64, 48, |x, y| ((x * 7 + y * 13) % 200) as f64 + 20.0).map_err(|e| e.to_string())?;
        let b = a.map(|v| v + 16.0);
        let p = psnr(&a, &b).map_err(|e| e.to_string())?;
        let expect = 20.0 * (255.0f64 / 16.0).log10();
        ensure((p - expect).abs() < 1e-9, format!("PSNR {p} vs closed form {expect}"))?;
        ensure((p - 24.05).abs() <= 0.01, format!("PSNR {p:.4}, expected 24.05 +- 0.01"))?;
        let s = ssim(&a, &a).map_err(|e| e.to_string())?;
        ensure(s == 1.0, format!("SSIM(a, a) = {s}"))?;
        Ok(format!("PSNR(uniform diff 16) = {p:.4} dB, SSIM(a, a) = 1"))
    });
}

#[test]
#[ignore = "needs released full-reference scores and ratings; set UAB_RELEASED_DATA"]
fn c5_full_reference_weakness() {
    criterion("C5", "full-reference weakness on released data", || {
        let dir = released_dir()?;
        let path = dir.join("fr_scores.csv");
        ensure(path.is_file(), format!("not verified: {} missing", path.display()))?;
        let scores = read_scores(&path).map_err(|e| e.to_string())?;
        let mos = released_mos(&dir)?;
        let mut details = Vec::new();
        for metric in ["psnr", "ssim", "ms_ssim"] {
            let (t, p): (Vec<f64>, Vec<f64>) = scores
                .iter()
                .filter(|s| s.model == metric)
                .filter_map(|s| mos.get(&s.stimulus_id).map(|&m| (m, s.score)))
                .unzip();
            ensure(t.len() >= 2, format!("{metric}: no scores"))?;
            let r = pearson(&t, &p).map_err(|e| e.to_string())?;
            ensure(r < 0.5, format!("Pearson({metric}) = {r:.4}, expected < 0.5"))?;
            details.push(format!("{metric} {r:.3}"));
        }
        Ok(format!("Pearson vs MOS: {}", details.join(", ")))
    });
}

/// Lines for the criteria that cannot be checked here, so a default run
/// still shows their status.
#[test]
fn released_data_criteria_status() {
    if std::env::var_os(RELEASED_ENV).is_some() {
        return;
    }
    for (id, name) in [
        ("C2", "subjective reproduction"),
        ("C3", "combined random forest"),
        ("C4", "feature sign and ordering"),
        ("C5", "full-reference weakness on released data"),
    ] {
        line(id, name, false, &format!("not verified, {RELEASED_ENV} unset (released data absent)"));
    }
}

fn sse(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m).powi(2)).sum()
}

fn gini_weighted(labels: &[usize], k: usize) -> f64 {
    let mut c = vec![0.0; k];
    for &l in labels {
        c[l] += 1.0;
    }
    let n = labels.len() as f64;
    n * (1.0 - c.iter().map(|v| (v / n) * (v / n)).sum::<f64>())
}

/// Exhaustive best root split: (feature, midpoint threshold), first best kept.
fn brute_force_split(x: &[Vec<f64>], impurity: impl Fn(&[usize]) -> f64) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NAN, f64::INFINITY);
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<usize> = (0..x.len()).filter(|&i| x[i][f] <= t).collect();
            let right: Vec<usize> = (0..x.len()).filter(|&i| x[i][f] > t).collect();
            let cost = impurity(&left) + impurity(&right);
            if cost < best.2 - 1e-12 {
                best = (f, t, cost);
            }
        }
    }
    (best.0, best.1)
}

fn root_split(x: &[Vec<f64>], targets: &Targets) -> (usize, f64) {
    let names: Vec<String> = (0..x[0].len()).map(|i| format!("f{i}")).collect();
    let cfg = ForestConfig {
        n_trees: 1,
        max_depth: Some(1),
        max_features: Some(MaxFeatures::All),
        bootstrap: false,
        ..ForestConfig::default()
    };
    let model = train(x, targets, &names, &cfg).expect("trains");
    match model.trees[0].nodes[0] {
        Node::Split { feature, threshold, .. } => (feature, threshold),
        Node::Leaf { .. } => (usize::MAX, f64::NAN),
    }
}

fn oracle_kendall(x: &[f64], y: &[f64]) -> f64 {
    let (mut conc, mut disc, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = x[i].partial_cmp(&x[j]).unwrap() as i8;
            let b = y[i].partial_cmp(&y[j]).unwrap() as i8;
            if a == 0 && b == 0 {
                continue;
            } else if a == 0 {
                tx += 1.0;
            } else if b == 0 {
                ty += 1.0;
            } else if a == b {
                conc += 1.0;
            } else {
                disc += 1.0;
            }
        }
    }
    (conc - disc) / ((conc + disc + tx) * (conc + disc + ty)).sqrt()
}

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn lanczos3(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() < 3.0 {
        3.0 * (PI * x).sin() * (PI * x / 3.0).sin() / (PI * PI * x * x)
    } else {
        0.0
    }
}

#[test]
fn c6_oracle_equivalences() {
    criterion("C6", "oracle equivalences", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);

        // CART root split against exhaustive search, regression and Gini
        for trial in 0..25 {
            let x: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let y: Vec<f64> = x.iter().map(|r| r[trial % 4] * 0.5 + rng.random_range(-2.0..2.0)).collect();
            let got = root_split(&x, &Targets::Regression(y.clone()));
            let want = brute_force_split(&x, |idx| sse(&idx.iter().map(|&i| y[i]).collect::<Vec<_>>()));
            ensure(got == want, format!("regression split {got:?} vs brute force {want:?}"))?;

            let labels: Vec<usize> = x.iter().map(|r| ((r[(trial + 1) % 4] / 4.0) as usize).min(2)).collect();
            let classes = vec!["a".to_string(), "b".to_string(), "c".to_string()];
            let got = root_split(&x, &Targets::Classification { labels: labels.clone(), classes });
            let want = brute_force_split(&x, |idx| gini_weighted(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), 3));
            ensure(got == want, format!("gini split {got:?} vs brute force {want:?}"))?;
        }

        // correlations against definitional formulas, with ties
        for _ in 0..50 {
            let n = rng.random_range(3..40);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(0..5) as f64).collect();
            let checks = [
                ("pearson", pearson(&x, &y), oracle_pearson(&x, &y)),
                ("spearman", spearman(&x, &y), oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y))),
                ("kendall", kendall(&x, &y), oracle_kendall(&x, &y)),
            ];
            for (name, got, want) in checks {
                if !want.is_finite() {
                    continue;
                }
                let got = got.map_err(|e| e.to_string())?;
                ensure((got - want).abs() <= 1e-9, format!("{name} {got} vs {want}"))?;
            }
        }

        // binary MCC closed form
        for _ in 0..50 {
            let n = rng.random_range(4..60);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let count = |t: usize, p: usize| truth.iter().zip(&pred).filter(|(a, b)| **a == t && **b == p).count() as f64;
            let (tp, tn, fp, fn_) = (count(1, 1), count(0, 0), count(0, 1), count(1, 0));
            let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
            let want = if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den };
            let names = vec!["neg".to_string(), "pos".to_string()];
            let got = classification_report(&truth, &pred, &names).map_err(|e| e.to_string())?.mcc;
            ensure((got - want).abs() <= 1e-12, format!("MCC {got} vs closed form {want}"))?;
        }

        // Lanczos impulse response of a 2x enlargement
        let n = 20;
        let k = 10;
        let src = Plane::from_fn(n, 1, |x, _| if x == k { 1.0 } else { 0.0 }).map_err(|e| e.to_string())?;
        let out = resize_plane_lanczos(&src, 2 * n, 1).map_err(|e| e.to_string())?;
        for d in 0..2 * n {
            let center = (d as f64 + 0.5) / 2.0 - 0.5;
            let norm: f64 = (-4..n as i64 + 4).map(|i| lanczos3(i as f64 - center)).sum();
            // away from the borders no tap is clamped onto the impulse
            if (center - k as f64).abs() < 3.0 && center > 3.0 && center < n as f64 - 4.0 {
                let want = lanczos3(k as f64 - center) / norm;
                ensure((out.get(d, 0) - want).abs() <= 1e-6, format!("impulse sample {d}: {} vs {want}", out.get(d, 0)))?;
            } else if (center - k as f64).abs() >= 3.0 {
                ensure(out.get(d, 0).abs() <= 1e-6, format!("impulse leaks to sample {d}"))?;
            }
        }

        // constant images: every feature but tone is zero
        for v in [0u8, 37, 128, 255] {
            let img = ImageBuffer::filled_rgb(96, 80, [v, v, v]).map_err(|e| e.to_string())?;
            let fv = extract_features(&img, "flat");
            for name in FeatureName::ALL {
                let want = if name == FeatureName::Tone { v as f64 / 255.0 } else { 0.0 };
                let got = fv.get(name).ok_or(format!("{name} missing on constant image"))?;
                ensure((got - want).abs() <= 1e-9, format!("{name} = {got} on constant {v}, expected {want}"))?;
            }
        }

        ensure(patch_count(1920, 1080, 224) == 32, "1920x1080 does not give 32 patches")?;
        Ok("CART root split, Pearson/Spearman/Kendall, binary MCC, Lanczos impulse, constant features, 32 patches".into())
    });
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            files.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    files
}

fn full_run(run: &Run, ratings: &Path, jobs: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let out = run.out();
    let preds = out.join("cv_predictions.csv");
    let fr = out.join("fr_scores.csv");
    let mos = out.join("mos.csv");
    let steps: Vec<Vec<&str>> = vec![
        vec!["prepare"],
        vec!["features"],
        vec!["analyze", "--ratings", ratings.to_str().unwrap()],
        vec!["train"],
        vec!["detect"],
        vec!["eval", "--predictions", preds.to_str().unwrap()],
        vec!["eval", "--predictions", fr.to_str().unwrap(), "--mos", mos.to_str().unwrap()],
    ];
    for step in steps {
        let mut args = vec!["--jobs", jobs, "--seed", "17"];
        args.extend(step.iter().copied());
        let o = run.uab(&args);
        ensure(code(&o) == 0, format!("{step:?} exited {}: {}", code(&o), stderr(&o)))?;
    }
    Ok(snapshot(&out))
}

#[test]
fn c7_determinism() {
    criterion("C7", "byte-identical reruns", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = Run::new(dir.path(), json!({"upscalers": upscaler_specs(2)}));
        write_sources(&dir.path().join("input"), 6, 96, 64, 9);
        let ratings = dir.path().join("ratings.csv");
        // ratings need the manifest ids, so prepare once up front
        let o = run.uab(&["prepare"]);
        ensure(code(&o) == 0, format!("prepare exited {}: {}", code(&o), stderr(&o)))?;
        let ids = manifest_ids(&run.read("manifest.json"));
        write_ratings(&ratings, &ids, 10, |id| if id.contains("source") { 4.0 } else { 3.0 }, 3);
        let first = full_run(&run, &ratings, "1")?;
        let second = full_run(&run, &ratings, "4")?;
        ensure(first.len() >= 15, format!("only {} output files", first.len()))?;
        ensure(
            first.keys().eq(second.keys()),
            "the two runs wrote different file sets",
        )?;
        for (name, bytes) in &first {
            ensure(second[name] == *bytes, format!("{name} differs between runs"))?;
        }
        let n = first.len();
        Ok(format!("{n} CSV/JSON/SVG outputs identical with 1 and 4 workers, seed 17"))
    });
}
