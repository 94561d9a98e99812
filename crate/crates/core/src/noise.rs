//! Severity-parametrized quantum (Poisson) and electronic (Gaussian) noise.
//!
//! Quantum severity `s_q` scales the photon budget as `N0 / s_q²`, so the
//! per-pixel SNR `sqrt(I * N0) / s_q` halves whenever `s_q` doubles.
//! Electronic severity `s_e` scales the readout standard deviation linearly,
//! `sigma0 * s_e`. A severity of zero omits that source entirely.
//!
//! Composition follows the detection chain: photon counting first, then
//! additive readout noise on the counted estimate, then a single clamp to
//! `[0, 1]`. Clamping never happens inside a stage, so the raw fields keep
//! their textbook moments.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::NormalizedImage;
use crate::poisson::PoissonSampler;
use crate::rng::{Stage, StreamKey};

pub const DEFAULT_N0: f64 = 1000.0;
pub const DEFAULT_SIGMA0: f64 = 0.1;

/// One point of the noise parameter space plus its calibration constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub s_q: f64,
    pub s_e: f64,
    /// Photons per pixel at `s_q = 1`.
    pub n0: f64,
    /// Readout std at `s_e = 1`, in normalized intensity units.
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            s_q: 0.0,
            s_e: 0.0,
            n0: DEFAULT_N0,
            sigma0: DEFAULT_SIGMA0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn new(s_q: f64, s_e: f64, seed: u64) -> Self {
        NoiseSpec {
            s_q,
            s_e,
            seed,
            ..Default::default()
        }
    }

    pub fn with_calibration(mut self, n0: f64, sigma0: f64) -> Self {
        self.n0 = n0;
        self.sigma0 = sigma0;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.s_q.is_finite() || self.s_q < 0.0 {
            return Err(Error::Domain(format!("s_q must be >= 0, got {}", self.s_q)));
        }
        if self.s_q > 0.0 && self.s_q < 1.0 {
            return Err(Error::Domain(format!(
                "s_q = {} is below the calibration anchor; use 0 (omitted) or >= 1",
                self.s_q
            )));
        }
        if !self.s_e.is_finite() || self.s_e < 0.0 {
            return Err(Error::Domain(format!("s_e must be >= 0, got {}", self.s_e)));
        }
        if !self.n0.is_finite() || self.n0 <= 0.0 {
            return Err(Error::Domain(format!("n0 must be > 0, got {}", self.n0)));
        }
        if !self.sigma0.is_finite() || self.sigma0 < 0.0 {
            return Err(Error::Domain(format!(
                "sigma0 must be >= 0, got {}",
                self.sigma0
            )));
        }
        Ok(())
    }

    pub fn quantum_active(&self) -> bool {
        self.s_q >= 1.0
    }

    pub fn electronic_active(&self) -> bool {
        self.s_e > 0.0 && self.sigma0 > 0.0
    }
}

/// Plain-text `key = value` block with keys `s_q`, `s_e`, `n0`, `sigma0`, `seed`.
impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "s_q = {}", self.s_q)?;
        writeln!(f, "s_e = {}", self.s_e)?;
        writeln!(f, "n0 = {}", self.n0)?;
        writeln!(f, "sigma0 = {}", self.sigma0)?;
        writeln!(f, "seed = {}", self.seed)
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = NoiseSpec::default();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::Parse {
                path: "<noise spec>".into(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || {
                value
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{key}: {e}")))
            };
            match key {
                "s_q" => spec.s_q = real()?,
                "s_e" => spec.s_e = real()?,
                "n0" => spec.n0 = real()?,
                "sigma0" => spec.sigma0 = real()?,
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|e| bad(format!("seed: {e}")))?
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Effective photons per pixel, `n0 / s_q²`.
pub fn photon_budget(s_q: f64, n0: f64) -> Result<f64> {
    if !(s_q >= 1.0) || !s_q.is_finite() {
        return Err(Error::Domain(format!(
            "photon budget needs s_q >= 1, got {s_q}"
        )));
    }
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(Error::Domain(format!("n0 must be > 0, got {n0}")));
    }
    Ok(n0 / (s_q * s_q))
}

/// Readout standard deviation, `sigma0 * s_e`.
///
/// Evaluated as `s_e / (1 / sigma0)`: for sigma0 = 0.1 the reciprocal is
/// exactly 10, so the ladder lands on the decimal values (0.1 * 6 would not).
pub fn sigma_e(s_e: f64, sigma0: f64) -> Result<f64> {
    if !(s_e >= 0.0) || !s_e.is_finite() {
        return Err(Error::Domain(format!("s_e must be >= 0, got {s_e}")));
    }
    if !(sigma0 >= 0.0) || !sigma0.is_finite() {
        return Err(Error::Domain(format!("sigma0 must be >= 0, got {sigma0}")));
    }
    if sigma0 == 0.0 || s_e == 0.0 {
        return Ok(0.0);
    }
    Ok(s_e / sigma0.recip())
}

pub fn theoretical_snr_quantum(intensity: f64, spec: &NoiseSpec) -> Result<f64> {
    if !(intensity > 0.0) {
        return Err(Error::UndefinedSnr(format!(
            "quantum SNR needs intensity > 0, got {intensity}"
        )));
    }
    photon_budget(spec.s_q, spec.n0)?;
    Ok((intensity * spec.n0).sqrt() / spec.s_q)
}

pub fn theoretical_snr_electronic(intensity: f64, spec: &NoiseSpec) -> Result<f64> {
    if !(spec.s_e > 0.0) || !(spec.sigma0 > 0.0) {
        return Err(Error::UndefinedSnr(format!(
            "electronic SNR needs s_e > 0 and sigma0 > 0, got s_e = {}, sigma0 = {}",
            spec.s_e, spec.sigma0
        )));
    }
    Ok(intensity / sigma_e(spec.s_e, spec.sigma0)?)
}

/// Quantum estimate field `Q = P / N_ph` with `P ~ Poisson(I * N_ph)`, unclamped.
pub fn inject_quantum(img: &NormalizedImage, spec: &NoiseSpec, stream: StreamKey) -> Result<Vec<f64>> {
    quantum_field(img.pixels(), spec, stream)
}

pub(crate) fn quantum_field(values: &[f64], spec: &NoiseSpec, stream: StreamKey) -> Result<Vec<f64>> {
    let n_ph = photon_budget(spec.s_q, spec.n0)?;
    values
        .par_iter()
        .enumerate()
        .map(|(i, &intensity)| {
            let sampler = PoissonSampler::new(intensity * n_ph)?;
            Ok(sampler.sample(&mut stream.pixel(i as u64)) as f64 / n_ph)
        })
        .collect()
}

/// Zero-mean Gaussian readout field `eps ~ N(0, (sigma0 * s_e)²)`.
pub(crate) fn readout_field(len: usize, spec: &NoiseSpec, stream: StreamKey) -> Result<Vec<f64>> {
    let sigma = sigma_e(spec.s_e, spec.sigma0)?;
    Ok((0..len)
        .into_par_iter()
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut stream.pixel(i as u64));
            sigma * z
        })
        .collect())
}

/// `E = I + eps`, unclamped. With `s_e = 0` the input comes back untouched.
pub fn inject_electronic(img: &NormalizedImage, spec: &NoiseSpec, stream: StreamKey) -> Result<Vec<f64>> {
    if !spec.electronic_active() {
        sigma_e(spec.s_e, spec.sigma0)?;
        return Ok(img.pixels().to_vec());
    }
    let eps = readout_field(img.len(), spec, stream)?;
    Ok(img.pixels().iter().zip(&eps).map(|(i, e)| i + e).collect())
}

/// Result of one injection: the clamped image plus the raw fields behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub corrupted: NormalizedImage,
    /// Per-pixel `Q`, present when the quantum stage ran.
    pub quantum_field: Option<Vec<f64>>,
    /// Per-pixel readout perturbation `eps`, present when the electronic stage ran.
    pub electronic_field: Option<Vec<f64>>,
}

/// Full pipeline: quantum stage, electronic stage, clamp.
pub fn inject(img: &NormalizedImage, spec: &NoiseSpec) -> Result<NoiseRealization> {
    spec.validate()?;
    if !spec.quantum_active() && !spec.electronic_active() {
        return Ok(NoiseRealization {
            corrupted: img.clone(),
            quantum_field: None,
            electronic_field: None,
        });
    }

    let quantum = if spec.quantum_active() {
        Some(quantum_field(
            img.pixels(),
            spec,
            StreamKey::new(spec.seed, Stage::Quantum),
        )?)
    } else {
        None
    };
    let electronic = if spec.electronic_active() {
        Some(readout_field(
            img.len(),
            spec,
            StreamKey::new(spec.seed, Stage::Electronic),
        )?)
    } else {
        None
    };

    let base = quantum.as_deref().unwrap_or(img.pixels());
    let combined: Vec<f64> = match &electronic {
        Some(eps) => base.iter().zip(eps).map(|(q, e)| q + e).collect(),
        None => base.to_vec(),
    };
    let corrupted = NormalizedImage::from_clamped(img.height(), img.width(), &combined)?;

    Ok(NoiseRealization {
        corrupted,
        quantum_field: quantum,
        electronic_field: electronic,
    })
}
