//! Acceptance gate. One test per criterion; each prints a single
//! `criterion N: PASS|FAIL` line before asserting.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use noiseforge::corpus::{split_corpus, CorpusEntry, CorpusManifest, Split, TaskKind};
use noiseforge::image::{write_gray, NormalizedImage, QuantizedImage};
use noiseforge::ladder::{evaluate_sweep, EvalOptions, Metric, Pairing, SeverityLadder};
use noiseforge::metrics::{
    auprc, auroc, dice, f1, iou, BinaryMask, ConfusionCounts, ScoredSample,
};
use noiseforge::noise::{inject_electronic, inject_quantum, photon_budget, sigma_e, NoiseSpec};
use noiseforge::poisson::PoissonSampler;
use noiseforge::report::records_csv;
use noiseforge::rng::{Stage, StreamKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const BIN: &str = env!("CARGO_BIN_EXE_noiseforge");

fn verdict(n: u32, what: &str, failures: &[String], elapsed: Duration, budget: Duration) {
    let in_time = elapsed <= budget;
    let ok = failures.is_empty() && in_time;
    println!(
        "criterion {n}: {} {what} ({:.2}s of {:.0}s budget)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    for f in failures {
        println!("  {f}");
    }
    assert!(failures.is_empty(), "criterion {n} failed: {failures:?}");
    assert!(in_time, "criterion {n} exceeded its runtime budget");
}

fn check(failures: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        failures.push(msg());
    }
}

const MILLION: usize = 1_000_000;

fn constant_field(value: f64) -> NormalizedImage {
    NormalizedImage::constant(1000, 1000, value).unwrap()
}

#[test]
fn criterion_01_photon_budget_ladder() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let exact = [
        (1.0, 1000.0, "1000.0"),
        (2.0, 250.0, "250.0"),
        (4.0, 62.5, "62.5"),
        (6.0, 1000.0 / 36.0, "27.8"),
        (8.0, 15.625, "15.6"),
        (10.0, 10.0, "10.0"),
    ];
    for (s_q, want, printed) in exact {
        let got = photon_budget(s_q, 1000.0).unwrap();
        check(&mut fails, got == want, || format!("s_q={s_q}: {got} != {want}"));
        let shown = format!("{got:.1}");
        check(&mut fails, shown == printed, || format!("s_q={s_q}: prints {shown}, table shows {printed}"));
    }
    verdict(1, "photon budgets 1000/250/62.5/27.8/15.6/10", &fails, start.elapsed(), Duration::from_secs(1));
}

#[test]
fn criterion_02_electronic_ladder() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let want = [(0.0, 0.0), (1.0, 0.1), (2.0, 0.2), (4.0, 0.4), (6.0, 0.6), (8.0, 0.8), (10.0, 1.0)];
    for (s_e, w) in want {
        let got = sigma_e(s_e, 0.1).unwrap();
        check(&mut fails, got == w, || format!("s_e={s_e}: {got:?} != {w:?}"));
    }
    verdict(2, "sigma_e ladder 0..1.0 exact", &fails, start.elapsed(), Duration::from_secs(1));
}

#[test]
fn criterion_03_quantum_moments() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let img = constant_field(0.5);
    for (k, s_q) in [1.0, 2.0, 4.0].into_iter().enumerate() {
        let spec = NoiseSpec::new(s_q, 0.0, 0);
        let q = inject_quantum(&img, &spec, StreamKey::new(11 + k as u64, Stage::Quantum)).unwrap();
        let (mean, var) = mean_var(&q);
        let theory = 0.5 * s_q * s_q / 1000.0;
        let bound = 3.0 * (theory / MILLION as f64).sqrt();
        check(&mut fails, (mean - 0.5).abs() <= bound, || {
            format!("s_q={s_q}: mean {mean} outside 0.5 +/- {bound}")
        });
        let rel = (var - theory).abs() / theory;
        check(&mut fails, rel <= 0.02, || {
            format!("s_q={s_q}: variance {var} vs {theory} ({:.3}% off)", rel * 100.0)
        });
    }
    verdict(3, "quantum mean and variance at s_q 1,2,4", &fails, start.elapsed(), Duration::from_secs(30));
}

#[test]
fn criterion_04_snr_scaling() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let img = constant_field(0.5);
    let snr = |v: &[f64]| {
        let (m, var) = mean_var(v);
        m / var.sqrt()
    };
    let q1 = inject_quantum(&img, &NoiseSpec::new(1.0, 0.0, 0), StreamKey::new(21, Stage::Quantum)).unwrap();
    let q2 = inject_quantum(&img, &NoiseSpec::new(2.0, 0.0, 0), StreamKey::new(22, Stage::Quantum)).unwrap();
    let ratio_q = snr(&q2) / snr(&q1);
    check(&mut fails, (ratio_q - 0.5).abs() <= 0.5 * 0.03, || format!("quantum SNR ratio {ratio_q}"));

    let e2 = inject_electronic(&img, &NoiseSpec::new(0.0, 2.0, 0), StreamKey::new(23, Stage::Electronic)).unwrap();
    let e4 = inject_electronic(&img, &NoiseSpec::new(0.0, 4.0, 0), StreamKey::new(24, Stage::Electronic)).unwrap();
    let ratio_e = snr(&e4) / snr(&e2);
    check(&mut fails, (ratio_e - 0.5).abs() <= 0.5 * 0.03, || format!("electronic SNR ratio {ratio_e}"));
    println!("  quantum ratio {ratio_q:.5}, electronic ratio {ratio_e:.5}");
    verdict(4, "SNR halves when severity doubles", &fails, start.elapsed(), Duration::from_secs(20));
}

#[test]
fn criterion_05_electronic_moments() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let img = constant_field(0.5);
    let e = inject_electronic(&img, &NoiseSpec::new(0.0, 2.0, 0), StreamKey::new(31, Stage::Electronic)).unwrap();
    let dev: Vec<f64> = e.iter().map(|v| v - 0.5).collect();
    let (mean, var) = mean_var(&dev);
    let std = var.sqrt();
    check(&mut fails, (std - 0.2).abs() <= 0.01 * 0.2, || format!("std {std} vs 0.2"));
    let bound = 3.0 * 0.2 / (MILLION as f64).sqrt();
    check(&mut fails, mean.abs() <= bound, || format!("mean {mean} outside +/- {bound}"));
    verdict(5, "electronic std 0.2 within 1%, mean within CLT bound", &fails, start.elapsed(), Duration::from_secs(5));
}

#[test]
fn criterion_06_poisson_chi_square() {
    let start = Instant::now();
    let mut fails = Vec::new();
    for (k, lambda) in [0.5, 5.0, 50.0, 500.0].into_iter().enumerate() {
        let sampler = PoissonSampler::new(lambda).unwrap();
        let key = StreamKey::new(6_000 + k as u64, Stage::Quantum);
        let draws: Vec<u64> = (0..100_000u64).map(|i| sampler.sample(&mut key.pixel(i))).collect();
        let (stat, dof, p) = poisson_chi_square(&draws, lambda);
        println!("  lambda={lambda}: chi2={stat:.2}, dof={dof}, p={p:.4}");
        check(&mut fails, p > 0.001, || format!("lambda={lambda}: p={p}"));
    }
    verdict(6, "Poisson goodness of fit at 0.5/5/50/500", &fails, start.elapsed(), Duration::from_secs(10));
}

#[test]
fn criterion_07_metric_oracles() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        // varying densities, including empty and full masks
        let pa: f64 = if trial % 50 == 0 { 0.0 } else { rng.random() };
        let pb: f64 = if trial % 75 == 0 { 0.0 } else if trial % 90 == 0 { 1.0 } else { rng.random() };
        let a: Vec<bool> = (0..256).map(|_| rng.random_bool(pa)).collect();
        let b: Vec<bool> = (0..256).map(|_| rng.random_bool(pb)).collect();
        let (od, oi) = count_dice_iou(&a, &b);
        let ma = BinaryMask::new(16, 16, a).unwrap();
        let mb = BinaryMask::new(16, 16, b).unwrap();
        let d = dice(&ma, &mb).unwrap();
        let j = iou(&ma, &mb).unwrap();
        check(&mut fails, d == od && j == oi, || format!("trial {trial}: ({d}, {j}) vs ({od}, {oi})"));
        check(&mut fails, (j - d / (2.0 - d)).abs() <= 1e-12, || format!("trial {trial}: J != D/(2-D)"));
    }
    for trial in 0..1000 {
        let n = rng.random_range(2..=100);
        // coarse score grid forces ties
        let grid = [5, 10, 20, 1000][trial % 4];
        let mut samples: Vec<ScoredSample> = (0..n)
            .map(|_| ScoredSample::new(rng.random_range(0..=grid) as f64 / grid as f64, rng.random_bool(0.4)).unwrap())
            .collect();
        samples[0].label = true;
        samples[1].label = false;
        let got = auroc(&samples).unwrap();
        let want = pairwise_auroc(&samples);
        check(&mut fails, got == want, || format!("score set {trial}: {got} vs pairwise {want}"));
    }
    verdict(7, "Dice/IoU/AUROC equal their counting oracles", &fails, start.elapsed(), Duration::from_secs(10));
}

#[test]
fn criterion_08_worked_metric_fixtures() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let s = |v: &[(f64, bool)]| v.iter().map(|&(x, l)| ScoredSample::new(x, l).unwrap()).collect::<Vec<_>>();
    let a = auroc(&s(&[(0.1, false), (0.4, false), (0.35, true), (0.8, true)])).unwrap();
    check(&mut fails, a == 0.75, || format!("AUROC {a}"));
    let ap = auprc(&s(&[(0.9, true), (0.8, false), (0.7, true)])).unwrap();
    check(&mut fails, ap == 5.0 / 6.0, || format!("AUPRC {ap}"));
    let f = f1(&ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 }).unwrap();
    check(&mut fails, f == 2.0 / 3.0, || format!("F1 {f}"));
    verdict(8, "AUROC 0.75, AUPRC 5/6, F1 2/3", &fails, start.elapsed(), Duration::from_secs(1));
}

// 20x20 masks with 100 foreground pixels each, overlapping in `inter` pixels.
fn overlap_pair(inter: usize) -> (QuantizedImage, QuantizedImage) {
    let truth: Vec<u8> = (0..400).map(|i| if i < 100 { 255 } else { 0 }).collect();
    let pred: Vec<u8> = (0..400)
        .map(|i| if i < inter || (100..200 - inter).contains(&i) { 255 } else { 0 })
        .collect();
    (
        QuantizedImage::new(20, 20, truth).unwrap(),
        QuantizedImage::new(20, 20, pred).unwrap(),
    )
}

#[test]
fn criterion_09_delta_fixture() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (truth, base_pred) = overlap_pair(86);
    let (_, noisy_pred) = overlap_pair(59);
    fs::create_dir_all(root.join("preds/sq0.00_se0.00")).unwrap();
    fs::create_dir_all(root.join("preds/sq0.00_se10.00")).unwrap();
    write_gray(&truth, &root.join("mask.png")).unwrap();
    write_gray(&truth, &root.join("image.png")).unwrap();
    write_gray(&base_pred, &root.join("preds/sq0.00_se0.00/heart.png")).unwrap();
    write_gray(&noisy_pred, &root.join("preds/sq0.00_se10.00/heart.png")).unwrap();
    let manifest = CorpusManifest::new(
        vec![CorpusEntry {
            image_id: "heart".into(),
            patient_id: "p".into(),
            image_path: root.join("image.png"),
            mask_path: Some(root.join("mask.png")),
            label: None,
            source_tag: "fixture".into(),
        }],
        TaskKind::Segmentation,
    )
    .unwrap();
    let ladder = SeverityLadder::new(vec![0.0], vec![0.0, 10.0], Pairing::Axis, false).unwrap();
    let opts = EvalOptions { task_id: "heart".into(), ..Default::default() };
    let eval = evaluate_sweep(&manifest, &ladder, &root.join("preds"), &opts).unwrap();
    let csv = records_csv(&eval.records);
    let noisy = eval
        .records
        .iter()
        .find(|r| r.s_e == 10.0 && r.metric == Metric::Dice)
        .expect("dice record at (0, 10)");
    check(&mut fails, noisy.value == 0.59, || format!("value {}", noisy.value));
    check(&mut fails, format!("{:.6}", noisy.delta) == "-0.270000", || format!("delta {:.6}", noisy.delta));
    check(&mut fails, csv.contains("heart,0.00,10.00,dice,0.590000,-0.270000,1,"), || csv.clone());
    verdict(9, "Dice 0.86 -> 0.59 gives delta -0.270000", &fails, start.elapsed(), Duration::from_secs(5));
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn sweep_cli(manifest: &Path, out: &Path, jobs: &str) -> (i32, String) {
    run_cli(&[
        "sweep",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "42",
        "--jobs",
        jobs,
    ])
}

#[test]
fn criterion_10_parallel_determinism() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_seg_corpus(&dir.path().join("corpus"), 10, 128, 128);
    let one = dir.path().join("jobs1");
    let eight = dir.path().join("jobs8");
    let (c1, _) = sweep_cli(&manifest, &one, "1");
    let (c8, _) = sweep_cli(&manifest, &eight, "8");
    check(&mut fails, c1 == 0 && c8 == 0, || format!("exit codes {c1}, {c8}"));
    let t1 = tree_bytes(&one);
    let t8 = tree_bytes(&eight);
    check(&mut fails, t1.len() == 14 * 10 + 2, || format!("{} files in tree", t1.len()));
    check(&mut fails, t1 == t8, || "jobs 1 and jobs 8 trees differ".into());
    let (c_again, log) = sweep_cli(&manifest, &one, "8");
    check(&mut fails, c_again == 0, || format!("rerun exit {c_again}"));
    check(&mut fails, tree_bytes(&one) == t1, || "rerun changed bytes".into());
    check(&mut fails, log.contains(" 0 files rewritten"), || format!("rerun log: {log}"));
    verdict(10, "sweep trees identical across --jobs and reruns", &fails, start.elapsed(), Duration::from_secs(30));
}

fn random_manifest(rng: &mut ChaCha8Rng, patients: usize) -> CorpusManifest {
    let prevalence: f64 = rng.random_range(0.05..0.6);
    let mut entries = Vec::new();
    for p in 0..patients {
        let positive = rng.random_bool(prevalence);
        for k in 0..rng.random_range(1..=4) {
            entries.push(CorpusEntry {
                image_id: format!("p{p}_{k}"),
                patient_id: format!("p{p}"),
                image_path: format!("p{p}_{k}.png").into(),
                mask_path: None,
                // only some of a positive patient's images carry the finding
                label: Some(positive && (k == 0 || rng.random_bool(0.5))),
                source_tag: "synthetic".into(),
            });
        }
    }
    CorpusManifest::new(entries, TaskKind::Classification).unwrap()
}

#[test]
fn criterion_11_split_contract() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sizes = vec![10usize, 11, 13, 100, 999, 10_000];
    sizes.extend((0..30).map(|_| rng.random_range(10..=10_000)));
    let fractions = [0.7, 0.15, 0.15];
    for (t, &n) in sizes.iter().enumerate() {
        let manifest = random_manifest(&mut rng, n);
        let mut positive = std::collections::BTreeMap::new();
        for e in &manifest.entries {
            *positive.entry(e.patient_id.clone()).or_insert(false) |= e.label == Some(true);
        }
        let n_pos = positive.values().filter(|p| **p).count();
        for stratify in [false, true] {
            let split = split_corpus(&manifest, fractions, t as u64, stratify).unwrap();
            // every image of a patient lands in that patient's split
            let mut seen = std::collections::BTreeMap::new();
            for s in Split::ALL {
                for e in split.entries_in(&manifest, s) {
                    if let Some(prev) = seen.insert(e.patient_id.clone(), s) {
                        check(&mut fails, prev == s, || format!("n={n}: patient {} in two splits", e.patient_id));
                    }
                }
            }
            check(&mut fails, seen.len() == n, || format!("n={n}: {} patients assigned", seen.len()));
            for (s, f) in Split::ALL.into_iter().zip(fractions) {
                let count = split.count(s) as f64;
                check(&mut fails, (count - f * n as f64).abs() <= 1.0, || {
                    format!("n={n} stratify={stratify}: {} has {count}, target {}", s.as_str(), f * n as f64)
                });
                if stratify {
                    let pos = positive
                        .iter()
                        .filter(|(id, p)| **p && split.split_of(id) == Some(s))
                        .count() as f64;
                    let target = n_pos as f64 / n as f64 * count;
                    check(&mut fails, (pos - target).abs() <= 1.0, || {
                        format!("n={n}: {} has {pos} positives, target {target:.2}", s.as_str())
                    });
                }
            }
        }
    }
    verdict(11, "patient-level split, sizes and prevalence", &fails, start.elapsed(), Duration::from_secs(10));
}

#[test]
fn criterion_12_end_to_end_reference_pipeline() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let manifest = write_seg_corpus(&root.join("corpus"), 10, 128, 128);
    let m = manifest.to_str().unwrap();
    let sweep = root.join("sweep");
    let preds = root.join("preds");
    let report = root.join("report");
    let steps: [Vec<&str>; 3] = [
        vec!["sweep", "--manifest", m, "--out", sweep.to_str().unwrap()],
        vec!["predict-reference", "--manifest", m, "--sweep", sweep.to_str().unwrap(), "--out", preds.to_str().unwrap()],
        vec![
            "eval", "--manifest", m, "--predictions", preds.to_str().unwrap(), "--out", report.to_str().unwrap(),
            "--task-id", "lungs", "--reference-predictor",
        ],
    ];
    for step in &steps {
        let (code, log) = run_cli(step);
        check(&mut fails, code == 0, || format!("{} exited {code}: {log}", step[0]));
    }
    let records = fs::read_to_string(report.join("records.csv")).unwrap_or_default();
    let rows: Vec<Vec<&str>> = records.lines().skip(1).map(|l| l.split(',').collect()).collect();
    check(&mut fails, rows.len() == 28, || format!("{} records", rows.len()));
    let points: std::collections::BTreeSet<(&str, &str)> = rows.iter().map(|r| (r[1], r[2])).collect();
    check(&mut fails, points.len() == 14, || format!("{} ladder points", points.len()));
    for r in rows.iter().filter(|r| r[1] == "0.00" && r[2] == "0.00") {
        check(&mut fails, r[5] == "0.000000", || format!("baseline delta {}", r[5]));
    }
    let metrics: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[3]).collect();
    check(&mut fails, metrics == ["dice", "iou"].into(), || format!("metrics {metrics:?}"));
    check(&mut fails, report.join("curves_lungs.json").is_file(), || "no curve export".into());
    check(&mut fails, report.join("summary_lungs.txt").is_file(), || "no summary".into());
    verdict(12, "reference segmenter over the default ladder, 14 points x 2 metrics", &fails, start.elapsed(), Duration::from_secs(60));
}
