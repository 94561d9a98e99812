#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use noiseforge::image::{write_gray, QuantizedImage};
use noiseforge::metrics::ScoredSample;

/// Chest-like phantom: bright field with a gentle gradient and two dark
/// elliptical "lungs". Returns the image and its lung mask (255 = lung).
pub fn phantom(h: usize, w: usize, variant: u64) -> (QuantizedImage, QuantizedImage) {
    let shift = (variant % 5) as f64 - 2.0;
    let lungs = [
        (0.5 * h as f64 + shift, 0.3 * w as f64, 0.32 * h as f64, 0.13 * w as f64),
        (0.5 * h as f64 - shift, 0.7 * w as f64, 0.30 * h as f64, 0.12 * w as f64),
    ];
    let mut img = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let inside = lungs.iter().any(|&(cy, cx, ry, rx)| {
                let dy = (r as f64 - cy) / ry;
                let dx = (c as f64 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            });
            let background = 170.0 + 40.0 * r as f64 / h as f64 + (variant % 7) as f64;
            img.push(if inside { 55 + (variant % 11) as u8 } else { background as u8 });
            mask.push(if inside { 255 } else { 0 });
        }
    }
    (
        QuantizedImage::new(h, w, img).unwrap(),
        QuantizedImage::new(h, w, mask).unwrap(),
    )
}

/// Writes `n` phantoms with masks and a segmentation manifest; returns the manifest path.
pub fn write_seg_corpus(dir: &Path, n: usize, h: usize, w: usize) -> PathBuf {
    fs::create_dir_all(dir.join("images")).unwrap();
    fs::create_dir_all(dir.join("masks")).unwrap();
    let mut manifest = String::from("image_id,patient_id,image_path,mask_path,label,source_tag\n");
    for i in 0..n {
        let (img, mask) = phantom(h, w, i as u64);
        let id = format!("img{i:03}");
        write_gray(&img, &dir.join("images").join(format!("{id}.png"))).unwrap();
        write_gray(&mask, &dir.join("masks").join(format!("{id}.png"))).unwrap();
        manifest.push_str(&format!(
            "{id},p{:03},images/{id}.png,masks/{id}.png,,synthetic\n",
            i / 2
        ));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).unwrap();
    path
}

/// Every regular file under `root`, keyed by forward-slash relative path.
pub fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap();
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Pairwise AUROC: each (positive, negative) pair scores 1, 0.5 on a tie.
pub fn pairwise_auroc(samples: &[ScoredSample]) -> f64 {
    let pos: Vec<f64> = samples.iter().filter(|s| s.label).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.label).map(|s| s.score).collect();
    let mut credit = 0.0;
    for p in &pos {
        for n in &neg {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

/// Pixel-count Dice and IoU; two empty masks score 1.
pub fn count_dice_iou(a: &[bool], b: &[bool]) -> (f64, f64) {
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (x, y) in a.iter().zip(b) {
        na += usize::from(*x);
        nb += usize::from(*y);
        inter += usize::from(*x && *y);
    }
    if na + nb == 0 {
        return (1.0, 1.0);
    }
    let union = na + nb - inter;
    (
        2.0 * inter as f64 / (na + nb) as f64,
        inter as f64 / union as f64,
    )
}

// ln Gamma via Lanczos (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let front = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + 1.0 {
        // series for P(a, x)
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        1.0 - front * sum
    } else {
        // Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-15 {
                break;
            }
        }
        front * h
    }
}

/// Chi-square goodness of fit of integer draws against Poisson(lambda).
/// Bins are merged until each expects at least 5 counts. Returns (statistic, dof, p).
pub fn poisson_chi_square(draws: &[u64], lambda: f64) -> (f64, usize, f64) {
    let n = draws.len() as f64;
    let k_max = (lambda + 12.0 * lambda.sqrt() + 30.0) as u64;
    let mut pmf = Vec::with_capacity(k_max as usize + 1);
    let mut p = (-lambda).exp();
    for k in 0..=k_max {
        pmf.push(p);
        p *= lambda / (k + 1) as f64;
    }
    let mut observed = vec![0u64; k_max as usize + 2];
    for &d in draws {
        observed[(d.min(k_max + 1)) as usize] += 1;
    }
    let tail_p = (1.0 - pmf.iter().sum::<f64>()).max(0.0);

    // (expected, observed) per merged bin
    let mut bins: Vec<(f64, u64)> = Vec::new();
    let (mut e_acc, mut o_acc) = (0.0, 0u64);
    for k in 0..=k_max as usize {
        e_acc += n * pmf[k];
        o_acc += observed[k];
        if e_acc >= 5.0 {
            bins.push((e_acc, o_acc));
            e_acc = 0.0;
            o_acc = 0;
        }
    }
    e_acc += n * tail_p;
    o_acc += observed[k_max as usize + 1];
    match bins.last_mut() {
        Some(last) if e_acc < 5.0 => {
            last.0 += e_acc;
            last.1 += o_acc;
        }
        _ => bins.push((e_acc, o_acc)),
    }
    let stat: f64 = bins
        .iter()
        .map(|&(e, o)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = bins.len() - 1;
    (stat, dof, gamma_q(dof as f64 / 2.0, stat / 2.0))
}

#[test]
fn gamma_q_reference_values() {
    // chi-square survival: dof 1 at 3.841458820694124 is 0.05; dof 10 at 18.307038053275146 is 0.05
    assert!((gamma_q(0.5, 3.841_458_820_694_124 / 2.0) - 0.05).abs() < 1e-9);
    assert!((gamma_q(5.0, 18.307_038_053_275_146 / 2.0) - 0.05).abs() < 1e-9);
    // Q(1, x) = exp(-x)
    assert!((gamma_q(1.0, 2.5) - (-2.5f64).exp()).abs() < 1e-12);
}
