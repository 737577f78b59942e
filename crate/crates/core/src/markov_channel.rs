//! Temporal correlation of block fading between consecutive packets.
//!
//! Two adjacent blocks see complex gains with correlation ρ = J0(2π f_d T_s).
//! Thresholding the exponential SNR at the level that gives the marginal
//! failure probability p turns the pair into a two-state Markov chain whose
//! failure-to-failure transition probability follows from the first-order
//! Marcum Q function.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::specfun::{bessel_j0, marcum_q1_pair};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest correlation handed to the Markov model, which needs ρ < 1.
pub const MAX_CORRELATION: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopplerSpec {
    /// m/s
    pub velocity: f64,
    /// Hz
    pub carrier_frequency: f64,
    /// s
    pub sampling_time: f64,
}

impl DopplerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.velocity.is_finite() && self.velocity >= 0.0) {
            return Err(domain("velocity", self.velocity, "finite and >= 0"));
        }
        if !(self.carrier_frequency.is_finite() && self.carrier_frequency > 0.0) {
            return Err(domain(
                "carrier frequency",
                self.carrier_frequency,
                "finite and > 0",
            ));
        }
        if !(self.sampling_time.is_finite() && self.sampling_time > 0.0) {
            return Err(domain(
                "sampling time",
                self.sampling_time,
                "finite and > 0",
            ));
        }
        Ok(())
    }

    /// Maximum Doppler shift ν f_c / c in Hz.
    pub fn doppler_frequency(&self) -> f64 {
        self.velocity * self.carrier_frequency / SPEED_OF_LIGHT
    }
}

/// Block-to-block gain correlation after clamping into [0, MAX_CORRELATION].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    /// J0(2π f_d T_s) before clamping.
    pub raw: f64,
    pub clamped: bool,
}

pub fn correlation_coefficient(spec: &DopplerSpec) -> Result<Correlation> {
    spec.validate()?;
    let raw = bessel_j0(2.0 * PI * spec.doppler_frequency() * spec.sampling_time)?;
    let rho = raw.clamp(0.0, MAX_CORRELATION);
    if raw < 0.0 {
        log::warn!(
            "negative block correlation {raw:.4} (f_d = {:.2} Hz, T_s = {} s) clamped to 0",
            spec.doppler_frequency(),
            spec.sampling_time
        );
    }
    Ok(Correlation {
        rho,
        raw,
        clamped: rho != raw,
    })
}

/// Which expression is used for the back-to-back failure probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PbbForm {
    /// 1 - ((1-p)/p)[Q1(θ,ρθ) - Q1(ρθ,θ)]: failure given a previous failure.
    #[default]
    Corrected,
    /// ((1-p)/p)[Q1(θ,ρθ) - Q1(ρθ,θ)] as printed, which is the recovery
    /// probability and equals 1-p for uncorrelated blocks.
    Paper,
}

/// θ = sqrt(-2 ln(1-p) / (1-ρ²)), the normalised fade threshold.
pub fn fade_threshold(p: f64, rho: f64) -> f64 {
    (-2.0 * (-p).ln_1p() / (1.0 - rho * rho)).sqrt()
}

/// Probability that a packet fails given that the previous one failed.
pub fn back_to_back_failure(p: f64, rho: f64, form: PbbForm) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain("marginal failure probability", p, "in (0, 1)"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(domain("correlation", rho, "in [0, 1)"));
    }
    let theta = fade_threshold(p, rho);
    let ahead = marcum_q1_pair(theta, rho * theta)?;
    let behind = marcum_q1_pair(rho * theta, theta)?;
    // Same difference two ways; take the one built from smaller numbers.
    let bracket = if ahead.q < behind.complement {
        ahead.q - behind.q
    } else {
        behind.complement - ahead.complement
    };
    let recovery = ((1.0 - p) / p * bracket).clamp(0.0, 1.0);
    Ok(match form {
        PbbForm::Corrected => 1.0 - recovery,
        PbbForm::Paper => recovery,
    })
}

/// Two-state summary of one link: marginal and conditional failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkovLink {
    pub p_marginal: f64,
    pub rho: f64,
    pub theta: f64,
    pub p_bb: f64,
}

impl MarkovLink {
    pub fn new(p_marginal: f64, rho: f64, form: PbbForm) -> Result<Self> {
        let p_bb = back_to_back_failure(p_marginal, rho, form)?;
        Ok(Self {
            p_marginal,
            rho,
            theta: fade_threshold(p_marginal, rho),
            p_bb,
        })
    }

    pub fn consecutive_failures(&self, n: u32) -> Result<RunProbability> {
        consecutive_failure_prob(n, self.p_marginal, self.p_bb)
    }
}

/// Probability of a run of failures, with its base-10 logarithm kept
/// separately so that values far below f64 range still order correctly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunProbability {
    pub probability: f64,
    pub log10: f64,
}

/// P(n consecutive failures) = p q^(n-1).
pub fn consecutive_failure_prob(n: u32, p: f64, q: f64) -> Result<RunProbability> {
    if n == 0 {
        return Err(Error::Config("run length must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(domain("failure probability", p, "in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(domain("conditional failure probability", q, "in [0, 1]"));
    }
    let log10 = if n == 1 {
        p.log10()
    } else {
        p.log10() + (n - 1) as f64 * q.log10()
    };
    Ok(RunProbability {
        probability: 10f64.powf(log10),
        log10,
    })
}

/// AR(1) complex Gaussian gain with unit power.
#[derive(Debug, Clone)]
pub struct CorrelatedFading {
    rho: f64,
    innovation: f64,
    mean_snr: f64,
    gain: (f64, f64),
    rng: ChaCha8Rng,
}

impl CorrelatedFading {
    pub fn new(rho: f64, mean_snr: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(domain("correlation", rho, "in [0, 1]"));
        }
        if !(mean_snr > 0.0) {
            return Err(domain("mean snr", mean_snr, "> 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = complex_normal(&mut rng);
        Ok(Self {
            rho,
            innovation: (1.0 - rho * rho).sqrt(),
            mean_snr,
            gain,
            rng,
        })
    }

    /// Current complex gain g_k.
    pub fn gain(&self) -> (f64, f64) {
        self.gain
    }

    /// SNR of the current block, mean_snr · |g_k|².
    pub fn snr(&self) -> f64 {
        self.mean_snr * (self.gain.0 * self.gain.0 + self.gain.1 * self.gain.1)
    }

    pub fn advance(&mut self) {
        let w = complex_normal(&mut self.rng);
        self.gain = (
            self.rho * self.gain.0 + self.innovation * w.0,
            self.rho * self.gain.1 + self.innovation * w.1,
        );
    }
}

impl Iterator for CorrelatedFading {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let snr = self.snr();
        self.advance();
        Some(snr)
    }
}

fn complex_normal(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    (
        re * std::f64::consts::FRAC_1_SQRT_2,
        im * std::f64::consts::FRAC_1_SQRT_2,
    )
}

/// Per-block SNR realisation of `steps` consecutive blocks.
pub fn sample_path(spec: &DopplerSpec, mean_snr: f64, steps: usize, seed: u64) -> Result<Vec<f64>> {
    let rho = correlation_coefficient(spec)?.rho;
    Ok(CorrelatedFading::new(rho, mean_snr, seed)?
        .take(steps)
        .collect())
}
