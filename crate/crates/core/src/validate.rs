//! Monte Carlo checks of the sampled noise fields against their closed forms.
//!
//! All checks run on unclamped fields over a constant image.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::NormalizedImage;
use crate::noise::{
    inject_electronic, inject_quantum, photon_budget, sigma_e, theoretical_snr_electronic,
    theoretical_snr_quantum, NoiseSpec,
};
use crate::rng::{Stage, StreamKey};

/// Deliberate sampler defects, used as negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Replaces the Poisson draw by a rounded Gaussian with twice the variance.
    InflatedPoissonVariance,
}

#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub intensity: f64,
    pub samples: usize,
    pub n0: f64,
    pub sigma0: f64,
    pub quantum_levels: Vec<f64>,
    pub electronic_levels: Vec<f64>,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            intensity: 0.5,
            samples: 1_000_000,
            n0: crate::noise::DEFAULT_N0,
            sigma0: crate::noise::DEFAULT_SIGMA0,
            quantum_levels: vec![1.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            electronic_levels: vec![1.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            seed: 0,
            fault: None,
        }
    }
}

pub const MIN_SAMPLES: usize = 100_000;
pub const VARIANCE_REL_TOL: f64 = 0.02;
pub const STD_REL_TOL: f64 = 0.01;
pub const SNR_REL_TOL: f64 = 0.03;
pub const CLT_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn absolute(name: String, measured: f64, expected: f64, tolerance: f64) -> Self {
        let passed = (measured - expected).abs() <= tolerance;
        CheckResult {
            name,
            measured,
            expected,
            tolerance,
            passed,
        }
    }

    fn relative(name: String, measured: f64, expected: f64, rel: f64) -> Self {
        Self::absolute(name, measured, expected, rel * expected.abs())
    }
}

/// Sample mean and unbiased variance, summed in index order.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn constant(samples: usize, intensity: f64) -> Result<NormalizedImage> {
    NormalizedImage::constant(1, samples, intensity)
}

fn quantum_samples(cfg: &ValidationConfig, intensity: f64, s_q: f64, tag: u64) -> Result<Vec<f64>> {
    let spec = NoiseSpec::new(s_q, 0.0, cfg.seed).with_calibration(cfg.n0, cfg.sigma0);
    let key = StreamKey::new(cfg.seed, Stage::Custom(tag));
    match cfg.fault {
        None => inject_quantum(&constant(cfg.samples, intensity)?, &spec, key),
        Some(Fault::InflatedPoissonVariance) => {
            let n_ph = photon_budget(s_q, cfg.n0)?;
            let lambda = intensity * n_ph;
            Ok((0..cfg.samples)
                .into_par_iter()
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut key.pixel(i as u64));
                    (lambda + (2.0 * lambda).sqrt() * z).round().max(0.0) / n_ph
                })
                .collect())
        }
    }
}

fn electronic_deviation(cfg: &ValidationConfig, intensity: f64, s_e: f64, tag: u64) -> Result<Vec<f64>> {
    let spec = NoiseSpec::new(0.0, s_e, cfg.seed).with_calibration(cfg.n0, cfg.sigma0);
    let key = StreamKey::new(cfg.seed, Stage::Custom(tag));
    let e = inject_electronic(&constant(cfg.samples, intensity)?, &spec, key)?;
    Ok(e.into_iter().map(|v| v - intensity).collect())
}

/// Runs every check; the returned list is in a fixed order.
pub fn run_validation(cfg: &ValidationConfig) -> Result<Vec<CheckResult>> {
    if cfg.samples < MIN_SAMPLES {
        return Err(Error::Domain(format!(
            "validation needs at least {MIN_SAMPLES} samples, got {}",
            cfg.samples
        )));
    }
    if !(cfg.intensity > 0.0 && cfg.intensity <= 1.0) {
        return Err(Error::Domain(format!(
            "validation intensity must be in (0, 1], got {}",
            cfg.intensity
        )));
    }
    let n = cfg.samples as f64;
    let i0 = cfg.intensity;
    let mut checks = Vec::new();

    let mut quantum_snr = Vec::new();
    for (k, &s_q) in cfg.quantum_levels.iter().filter(|&&s| s > 0.0).enumerate() {
        let spec = NoiseSpec::new(s_q, 0.0, cfg.seed).with_calibration(cfg.n0, cfg.sigma0);
        spec.validate()?;
        let field = quantum_samples(cfg, i0, s_q, 100 + k as u64)?;
        let (mean, var) = mean_var(&field);
        let expected_var = i0 * s_q * s_q / cfg.n0;
        checks.push(CheckResult::absolute(
            format!("quantum s_q={s_q}: mean"),
            mean,
            i0,
            CLT_SIGMAS * (expected_var / n).sqrt(),
        ));
        checks.push(CheckResult::relative(
            format!("quantum s_q={s_q}: variance"),
            var,
            expected_var,
            VARIANCE_REL_TOL,
        ));
        let snr = mean / var.sqrt();
        checks.push(CheckResult::relative(
            format!("quantum s_q={s_q}: SNR"),
            snr,
            theoretical_snr_quantum(i0, &spec)?,
            SNR_REL_TOL,
        ));
        quantum_snr.push((s_q, snr));
    }
    for &(a, snr_a) in &quantum_snr {
        if let Some(&(b, snr_b)) = quantum_snr.iter().find(|(b, _)| *b == 2.0 * a) {
            checks.push(CheckResult::relative(
                format!("quantum SNR ratio s_q={b} / s_q={a}"),
                snr_b / snr_a,
                0.5,
                SNR_REL_TOL,
            ));
        }
    }

    let mut electronic_snr = Vec::new();
    for (k, &s_e) in cfg.electronic_levels.iter().filter(|&&s| s > 0.0).enumerate() {
        let spec = NoiseSpec::new(0.0, s_e, cfg.seed).with_calibration(cfg.n0, cfg.sigma0);
        spec.validate()?;
        let sigma = sigma_e(s_e, cfg.sigma0)?;
        let dev = electronic_deviation(cfg, i0, s_e, 200 + k as u64)?;
        let (mean, var) = mean_var(&dev);
        checks.push(CheckResult::absolute(
            format!("electronic s_e={s_e}: mean"),
            mean,
            0.0,
            CLT_SIGMAS * sigma / n.sqrt(),
        ));
        checks.push(CheckResult::relative(
            format!("electronic s_e={s_e}: std"),
            var.sqrt(),
            sigma,
            STD_REL_TOL,
        ));
        let snr = (i0 + mean) / var.sqrt();
        checks.push(CheckResult::relative(
            format!("electronic s_e={s_e}: SNR"),
            snr,
            theoretical_snr_electronic(i0, &spec)?,
            SNR_REL_TOL,
        ));
        electronic_snr.push((s_e, snr));
    }
    for &(a, snr_a) in &electronic_snr {
        if let Some(&(b, snr_b)) = electronic_snr.iter().find(|(b, _)| *b == 2.0 * a) {
            checks.push(CheckResult::relative(
                format!("electronic SNR ratio s_e={b} / s_e={a}"),
                snr_b / snr_a,
                0.5,
                SNR_REL_TOL,
            ));
        }
    }

    // signal dependence: quantum std grows with I, electronic std does not
    if let Some(&s_q) = cfg.quantum_levels.iter().find(|&&s| s >= 1.0) {
        let lo = mean_var(&quantum_samples(cfg, 0.2, s_q, 300)?).1.sqrt();
        let hi = mean_var(&quantum_samples(cfg, 0.8, s_q, 301)?).1.sqrt();
        checks.push(CheckResult {
            name: format!("quantum s_q={s_q}: std(I=0.8) / std(I=0.2) > 1"),
            measured: hi / lo,
            expected: 2.0,
            tolerance: 1.0,
            passed: hi > lo,
        });
    }
    if let Some(&s_e) = cfg.electronic_levels.iter().find(|&&s| s > 0.0) {
        let lo = mean_var(&electronic_deviation(cfg, 0.2, s_e, 400)?).1.sqrt();
        let hi = mean_var(&electronic_deviation(cfg, 0.8, s_e, 401)?).1.sqrt();
        checks.push(CheckResult::relative(
            format!("electronic s_e={s_e}: std(I=0.8) / std(I=0.2) = 1"),
            hi / lo,
            1.0,
            2.0 * STD_REL_TOL,
        ));
    }
    Ok(checks)
}
