//! Block error probability of a short packet.
//!
//! The single-shot error probability is the three-term saddlepoint expansion
//! of the random-coding union bound around the outage probability
//!
//! ```text
//! Pe(1) = Po(R) + (ln L / L) φ ln R + φ0(R) / L
//! Po(R) = 1 - exp(z),                    z = -(e^R - 1)/γ
//! φ     = -(e^R / 2γ) exp(z)
//! φ0    = (e^R / γ) exp(z) (2 - z + ln(1 / sqrt(2πe (1 - e^{-2R}))))
//! ```
//!
//! evaluated verbatim. For R < 1 the factor ln R is negative, so the middle
//! term adds to the outage probability; nothing in the expansion keeps it
//! inside [0, 1], which is why every evaluation reports whether it had to be
//! clamped.

use std::f64::consts::{E, LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::specfun::{ExponentialNodes, QuadratureSpec};

/// How the rate of a [`CodingPoint`] is fed to the formulas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateUnits {
    /// Use D/L as is.
    #[default]
    AsIs,
    /// Treat D/L as bits per channel use and convert to nats.
    Bits,
}

impl RateUnits {
    pub fn formula_rate(self, rate: f64) -> f64 {
        match self {
            RateUnits::AsIs => rate,
            RateUnits::Bits => rate * LN_2,
        }
    }
}

/// Payload, blocklength and the rate parameter of one packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingPoint {
    pub payload_bits: u64,
    pub blocklength: u64,
    pub rate: f64,
}

impl CodingPoint {
    pub fn new(payload_bits: u64, blocklength: u64, rate: f64) -> Result<Self> {
        if payload_bits == 0 {
            return Err(Error::Config("payload must carry at least one bit".into()));
        }
        if blocklength == 0 {
            return Err(Error::Config("blocklength must be positive".into()));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(domain("coding rate", rate, "finite and > 0"));
        }
        Ok(Self {
            payload_bits,
            blocklength,
            rate,
        })
    }

    /// Rate D/L of `payload_bits` spread over `blocklength` channel uses.
    /// Rates above one are rejected unless `allow_above_one` is set.
    pub fn from_grid(payload_bits: u64, blocklength: u64, allow_above_one: bool) -> Result<Self> {
        if blocklength < payload_bits && !allow_above_one {
            return Err(Error::RateAboveOne {
                payload_bits,
                blocklength,
            });
        }
        Self::new(
            payload_bits,
            blocklength,
            payload_bits as f64 / blocklength as f64,
        )
    }

    /// The point as the formulas see it under `units`.
    pub fn in_units(self, units: RateUnits) -> Self {
        Self {
            rate: units.formula_rate(self.rate),
            ..self
        }
    }
}

/// 1 - exp(-(e^R - 1)/γ).
pub fn outage_term(rate: f64, gamma: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(domain("outage rate", rate, "finite and > 0"));
    }
    if !(gamma > 0.0) {
        return Err(domain("outage snr", gamma, "> 0"));
    }
    Ok(-(-rate.exp_m1() / gamma).exp_m1())
}

/// A probability produced by an expansion that may leave [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockError {
    /// Clamped into [floor, 1].
    pub probability: f64,
    /// Value of the expansion before clamping.
    pub raw: f64,
    /// Set when `raw` was outside [0, 1].
    pub clamped: bool,
}

/// Single-packet error probability at instantaneous SNR `gamma`.
pub fn block_error_instantaneous(
    point: &CodingPoint,
    gamma: f64,
    floor: f64,
) -> Result<BlockError> {
    if !(gamma > 0.0) {
        return Err(domain("instantaneous snr", gamma, "> 0"));
    }
    if point.blocklength < 2 {
        return Err(Error::Config(format!(
            "blocklength {} below 2",
            point.blocklength
        )));
    }
    if !(point.rate > 0.0) {
        return Err(domain("coding rate", point.rate, "> 0"));
    }
    let raw = expansion(point.rate, point.blocklength as f64, gamma);
    Ok(clamp(raw, floor))
}

fn expansion(rate: f64, blocklength: f64, gamma: f64) -> f64 {
    let growth = rate.exp();
    let z = -rate.exp_m1() / gamma;
    let survive = z.exp();
    let outage = -z.exp_m1();
    let phi = -growth / (2.0 * gamma) * survive;
    let dispersion = -0.5 * (2.0 * PI * E * -(-2.0 * rate).exp_m1()).ln();
    let phi0 = growth / gamma * survive * (2.0 - z + dispersion);
    outage + blocklength.ln() / blocklength * phi * rate.ln() + phi0 / blocklength
}

fn clamp(raw: f64, floor: f64) -> BlockError {
    BlockError {
        probability: raw.clamp(floor, 1.0),
        raw,
        clamped: !(0.0..=1.0).contains(&raw),
    }
}

/// Fading-averaged error probability together with clamping diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageBlockError {
    pub probability: f64,
    /// Quadrature nodes at which the expansion had to be clamped.
    pub clamped_nodes: usize,
    /// Largest |raw - clamped| over those nodes.
    pub max_clamp_gap: f64,
}

/// E_γ[Pe(1)] for γ exponentially distributed with mean `mean_snr`.
pub fn block_error_avg(
    point: &CodingPoint,
    mean_snr: f64,
    spec: &QuadratureSpec,
) -> Result<AverageBlockError> {
    let nodes = ExponentialNodes::new(spec)?;
    block_error_avg_with(point, mean_snr, &nodes, spec.absolute_floor)
}

/// As [`block_error_avg`], reusing precomputed quadrature nodes.
pub fn block_error_avg_with(
    point: &CodingPoint,
    mean_snr: f64,
    nodes: &ExponentialNodes,
    floor: f64,
) -> Result<AverageBlockError> {
    if !(mean_snr > 0.0 && mean_snr.is_finite()) {
        return Err(domain("mean snr", mean_snr, "finite and > 0"));
    }
    // Validate once instead of at every node.
    block_error_instantaneous(point, mean_snr, floor)?;

    let blocklength = point.blocklength as f64;
    let mut clamped_nodes = 0;
    let mut max_clamp_gap = 0.0_f64;
    let value = nodes.expect(
        |gamma| {
            if gamma <= 0.0 {
                return 1.0;
            }
            let e = clamp(expansion(point.rate, blocklength, gamma), 0.0);
            if e.clamped {
                clamped_nodes += 1;
                max_clamp_gap = max_clamp_gap.max((e.raw - e.probability).abs());
            }
            e.probability
        },
        mean_snr,
    );
    let value = value?;
    if clamped_nodes > 0 {
        log::debug!(
            "expansion clamped at {clamped_nodes} nodes (R={}, L={}, mean snr {mean_snr}), max gap {max_clamp_gap:e}",
            point.rate,
            point.blocklength
        );
    }
    Ok(AverageBlockError {
        probability: value.clamp(floor, 1.0),
        clamped_nodes,
        max_clamp_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn outage_limits() {
        assert!(outage_term(1e-12, 1.0).unwrap() < 1e-11);
        assert!(outage_term(0.5, 1e12).unwrap() < 1e-12);
        assert!(outage_term(0.5, 0.0).is_err());
        assert!(outage_term(0.0, 1.0).is_err());
    }

    #[test]
    fn outage_matches_high_precision_oracle() {
        // 50-digit evaluation of 1 - exp(-(e^0.5 - 1)/10)
        assert!(rel(outage_term(0.5, 10.0).unwrap(), 0.06281270339890942) < 1e-14);
    }

    #[test]
    fn expansion_matches_high_precision_oracle() {
        let p = CodingPoint::from_grid(600, 1500, false).unwrap();
        let e = block_error_instantaneous(&p, 20.0, 1e-300).unwrap();
        assert!(rel(e.probability, 0.02449775921155229) < 1e-13);
        assert!(!e.clamped);

        let p = CodingPoint::from_grid(600, 4900, false).unwrap();
        let e = block_error_instantaneous(&p, 20.0, 1e-300).unwrap();
        assert!(rel(e.probability, 0.0066096219499086695) < 1e-13);
    }

    #[test]
    fn long_blocks_approach_outage() {
        let p = CodingPoint::new(600, 1 << 40, 0.4).unwrap();
        let e = block_error_instantaneous(&p, 5.0, 0.0).unwrap();
        assert!(rel(e.probability, outage_term(0.4, 5.0).unwrap()) < 1e-9);
    }

    #[test]
    fn clamp_is_flagged() {
        // Very short block in a deep fade: φ0/L pushes the expansion past one.
        let p = CodingPoint::new(2, 2, 1.0).unwrap();
        let e = block_error_instantaneous(&p, 0.3, 1e-300).unwrap();
        assert!(e.raw > 1.0);
        assert!(e.clamped);
        assert_eq!(e.probability, 1.0);
        let fine = block_error_instantaneous(&p, 50.0, 1e-300).unwrap();
        assert!(!fine.clamped);
        assert_eq!(fine.probability, fine.raw);
    }

    #[test]
    fn instantaneous_rejects_bad_input() {
        let p = CodingPoint::new(600, 1, 0.5).unwrap();
        assert!(block_error_instantaneous(&p, 1.0, 0.0).is_err());
        let p = CodingPoint::new(600, 1000, 0.5).unwrap();
        assert!(block_error_instantaneous(&p, -1.0, 0.0).is_err());
        assert!(CodingPoint::new(600, 1000, 0.0).is_err());
        assert!(CodingPoint::new(0, 1000, 0.5).is_err());
    }

    #[test]
    fn grid_points() {
        let p = CodingPoint::from_grid(600, 1500, false).unwrap();
        assert_eq!(p.rate, 0.4);
        assert!(matches!(
            CodingPoint::from_grid(600, 599, false),
            Err(Error::RateAboveOne { .. })
        ));
        assert!(CodingPoint::from_grid(600, 599, true).is_ok());
        let bits = p.in_units(RateUnits::Bits);
        assert!(rel(bits.rate, 0.4 * LN_2) < 1e-15);
    }

    #[test]
    fn average_matches_adaptive_quadrature_oracle() {
        // 30-digit adaptive quadrature of the clamped expansion.
        let spec = QuadratureSpec::default();
        let p = CodingPoint::from_grid(600, 600, false).unwrap();
        let avg = block_error_avg(&p, 100.0, &spec).unwrap();
        assert!(rel(avg.probability, 0.06810686630058677) < 1e-10, "{avg:?}");

        let p = CodingPoint::from_grid(600, 1500, false).unwrap();
        let avg = block_error_avg(&p, 10.0, &spec).unwrap();
        assert!(rel(avg.probability, 0.14682281554589324) < 1e-10, "{avg:?}");
    }

    #[test]
    fn deep_fade_average_tends_to_one() {
        let spec = QuadratureSpec::default();
        let p = CodingPoint::from_grid(600, 1500, false).unwrap();
        let avg = block_error_avg(&p, 1e-6, &spec).unwrap();
        assert!(avg.probability > 1.0 - 1e-5);
    }

    #[test]
    fn average_monotone_in_rate_and_snr() {
        let spec = QuadratureSpec::default();
        let mut last = 0.0;
        for k in 1..=20 {
            let rate = 0.05 * k as f64;
            let p = CodingPoint::new(600, 1500, rate).unwrap();
            let v = block_error_avg(&p, 20.0, &spec).unwrap().probability;
            assert!(v > last, "rate {rate}: {v} <= {last}");
            last = v;
        }
        let p = CodingPoint::from_grid(600, 1500, false).unwrap();
        let mut last = 1.0;
        for db in 0..40 {
            let snr = 10f64.powf(db as f64 / 10.0);
            let v = block_error_avg(&p, snr, &spec).unwrap().probability;
            assert!(v < last, "{db} dB");
            last = v;
        }
    }

    #[test]
    fn doubling_nodes_changes_little() {
        let spec = QuadratureSpec::default();
        for k in 1..=28 {
            let rate = k as f64 / 28.0;
            let blocklength = (600.0 / rate).round() as u64;
            let p = CodingPoint::new(600, blocklength, rate).unwrap();
            for snr in [1.0, 10.0, 1e3, 1e5] {
                let a = block_error_avg(&p, snr, &spec).unwrap().probability;
                let b = block_error_avg(&p, snr, &spec.doubled())
                    .unwrap()
                    .probability;
                assert!(rel(a, b) < 1e-8, "R={rate} snr={snr}: {a} vs {b}");
            }
        }
    }
}
