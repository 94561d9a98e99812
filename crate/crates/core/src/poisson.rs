//! Exact Poisson sampling.
//!
//! Small means use inversion by sequential search; means of 10 and above use
//! Hörmann's transformed rejection with squeeze (PTRS). Neither path
//! approximates the distribution, which matters in the few-photon regime.

use rand::Rng;

use crate::error::{Error, Result};

/// Mean at which sampling switches from inversion to rejection.
pub const INVERSION_LIMIT: f64 = 10.0;

// ln(k!) for k = 0..=9
const LN_FACT: [f64; 10] = [
    0.0,
    0.0,
    std::f64::consts::LN_2,
    1.791_759_469_228_055,
    3.178_053_830_347_945_6,
    4.787_491_742_782_046,
    6.579_251_212_010_101,
    8.525_161_361_065_415,
    10.604_602_902_745_25,
    12.801_827_480_081_469,
];

/// `ln(k!)`, exact table below 10 and a Stirling series above.
pub fn ln_factorial(k: u64) -> f64 {
    if (k as usize) < LN_FACT.len() {
        return LN_FACT[k as usize];
    }
    let x = k as f64 + 1.0;
    let inv2 = 1.0 / (x * x);
    let series = (1.0 / 12.0
        + inv2 * (-1.0 / 360.0 + inv2 * (1.0 / 1260.0 + inv2 * (-1.0 / 1680.0 + inv2 / 1188.0))))
        / x;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

#[derive(Debug, Clone, Copy)]
enum Method {
    Zero,
    Inversion { exp_neg_lambda: f64, lambda: f64 },
    Ptrs(Ptrs),
}

#[derive(Debug, Clone, Copy)]
struct Ptrs {
    lambda: f64,
    ln_lambda: f64,
    a: f64,
    b: f64,
    ln_inv_alpha: f64,
    v_r: f64,
}

/// A Poisson distribution with fixed mean.
#[derive(Debug, Clone, Copy)]
pub struct PoissonSampler(Method);

impl PoissonSampler {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Domain(format!(
                "Poisson mean must be finite and non-negative, got {lambda}"
            )));
        }
        let method = if lambda == 0.0 {
            Method::Zero
        } else if lambda < INVERSION_LIMIT {
            Method::Inversion {
                exp_neg_lambda: (-lambda).exp(),
                lambda,
            }
        } else {
            let b = 0.931 + 2.53 * lambda.sqrt();
            let a = -0.059 + 0.024_83 * b;
            Method::Ptrs(Ptrs {
                lambda,
                ln_lambda: lambda.ln(),
                a,
                b,
                ln_inv_alpha: (1.1239 + 1.1328 / (b - 3.4)).ln(),
                v_r: 0.9277 - 3.6224 / (b - 2.0),
            })
        };
        Ok(PoissonSampler(method))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self.0 {
            Method::Zero => 0,
            Method::Inversion {
                exp_neg_lambda,
                lambda,
            } => {
                let u: f64 = rng.random();
                let mut k = 0u64;
                let mut p = exp_neg_lambda;
                let mut cdf = p;
                // the cap only matters if rounding leaves cdf below u
                while u > cdf && k < 1_000 {
                    k += 1;
                    p *= lambda / k as f64;
                    cdf += p;
                }
                k
            }
            Method::Ptrs(ref m) => m.sample(rng),
        }
    }
}

impl Ptrs {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        loop {
            let u = rng.random::<f64>() - 0.5;
            let v: f64 = rng.random();
            let us = 0.5 - u.abs();
            let k = ((2.0 * self.a / us + self.b) * u + self.lambda + 0.43).floor();
            if us >= 0.07 && v <= self.v_r {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + self.ln_inv_alpha - (self.a / (us * us) + self.b).ln();
            let rhs = -self.lambda + k * self.ln_lambda - ln_factorial(k as u64);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

/// One Poisson draw with mean `lambda`.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    Ok(PoissonSampler::new(lambda)?.sample(rng))
}
