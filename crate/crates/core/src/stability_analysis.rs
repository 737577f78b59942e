//! Probability that the control loop loses more packets in a row than it
//! tolerates, and the searches built on it: the largest admissible coding
//! rate for one vehicle and the largest fleet a cell can carry.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fbl::{block_error_avg_with, CodingPoint, RateUnits};
use crate::gv_control::{
    estimate_outage_tolerance, reference_track, simulate_trace, Controller, Gains, OutageTolerance,
    OutageToleranceSpec, Saturation, TraceRow, TrackSpec,
};
use crate::markov_channel::{
    back_to_back_failure, consecutive_failure_prob, correlation_coefficient, CorrelatedFading,
    Correlation, DopplerSpec, PbbForm,
};
use crate::specfun::{ExponentialNodes, QuadratureSpec};

pub use crate::report::{config_hash, format_float, Cell, Column, SweepResult};

/// Downlink resources of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WirelessConfig {
    /// Hz
    pub bandwidth: f64,
    /// Hz
    pub subcarrier_spacing: f64,
    /// s
    pub tti: f64,
    pub symbols_per_tti: u64,
    pub bits_per_symbol: u64,
    /// Linear ratio.
    pub mean_snr: f64,
    /// Hz
    pub carrier_frequency: f64,
}

impl Default for WirelessConfig {
    fn default() -> Self {
        Self {
            bandwidth: 10e6,
            subcarrier_spacing: 15e3,
            tti: 1e-3,
            symbols_per_tti: 14,
            bits_per_symbol: 2,
            mean_snr: DEFAULT_MEAN_SNR,
            carrier_frequency: 3.75e9,
        }
    }
}

/// Mean SNR fitted so that R_req(2 m/s, 1 ms, 1e-9) = 0.4 with the default
/// controller and track.
pub const DEFAULT_MEAN_SNR: f64 = 2.042600355282462;

impl WirelessConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, value) in [
            ("bandwidth", self.bandwidth),
            ("subcarrier spacing", self.subcarrier_spacing),
            ("tti", self.tti),
            ("mean snr", self.mean_snr),
            ("carrier frequency", self.carrier_frequency),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(domain(what, value, "finite and > 0"));
            }
        }
        if self.symbols_per_tti == 0 || self.bits_per_symbol == 0 {
            return Err(Error::Config(
                "symbols_per_tti and bits_per_symbol must be positive".into(),
            ));
        }
        if self.resource_elements_per_tti() == 0 {
            return Err(Error::Config("bandwidth holds no subcarrier".into()));
        }
        Ok(())
    }

    /// N_RB = floor(bandwidth / spacing) · symbols per TTI.
    pub fn resource_elements_per_tti(&self) -> u64 {
        (self.bandwidth / self.subcarrier_spacing).floor() as u64 * self.symbols_per_tti
    }

    pub fn mean_snr_db(&self) -> f64 {
        10.0 * self.mean_snr.log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackGeometry {
    pub straight_length: f64,
    pub arc_radius: f64,
}

impl Default for TrackGeometry {
    fn default() -> Self {
        Self {
            straight_length: 2.0 * std::f64::consts::PI,
            arc_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// s, a multiple of the TTI.
    pub sampling_time: f64,
    /// m/s
    pub velocity: f64,
    pub payload_bits: u64,
    pub gains: Gains,
    pub saturation: Option<Saturation>,
    pub track: TrackGeometry,
    pub tolerance: OutageToleranceSpec,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            sampling_time: 1e-3,
            velocity: 2.0,
            payload_bits: 600,
            gains: Gains::default(),
            saturation: None,
            track: TrackGeometry::default(),
            tolerance: OutageToleranceSpec::default(),
        }
    }
}

impl ControlConfig {
    pub fn validate(&self, wireless: &WirelessConfig) -> Result<()> {
        self.track_spec().validate()?;
        self.controller().validate()?;
        self.tolerance.validate()?;
        if self.payload_bits == 0 {
            return Err(Error::Config("payload_bits must be at least 1".into()));
        }
        self.ttis_per_sample(wireless)?;
        Ok(())
    }

    /// floor(T_s / TTI), checked to be a positive whole number.
    pub fn ttis_per_sample(&self, wireless: &WirelessConfig) -> Result<u64> {
        let ratio = self.sampling_time / wireless.tti;
        let whole = ratio.round();
        if !(whole >= 1.0 && (ratio - whole).abs() <= 1e-9 * whole) {
            return Err(Error::Config(format!(
                "sampling time {} s is not a multiple of the {} s TTI",
                self.sampling_time, wireless.tti
            )));
        }
        Ok(whole as u64)
    }

    pub fn track_spec(&self) -> TrackSpec {
        TrackSpec {
            straight_length: self.track.straight_length,
            arc_radius: self.track.arc_radius,
            reference_speed: self.velocity,
            sample_time: self.sampling_time,
        }
    }

    pub fn controller(&self) -> Controller {
        Controller {
            gains: self.gains,
            saturation: self.saturation,
        }
    }

    pub fn doppler(&self, wireless: &WirelessConfig) -> DopplerSpec {
        DopplerSpec {
            velocity: self.velocity,
            carrier_frequency: wireless.carrier_frequency,
            sampling_time: self.sampling_time,
        }
    }
}

/// Which run length counts as instability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PusForm {
    /// n_max + 1 consecutive failures: the loop survives n_max.
    #[default]
    NmaxPlusOne,
    /// n_max consecutive failures.
    Paper,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modes {
    pub rate_units: RateUnits,
    pub pbb_form: PbbForm,
    pub pus_form: PusForm,
}

/// n_rb = floor(N_RB · floor(T_s/TTI) / N).
pub fn resources_per_gv(wireless: &WirelessConfig, sampling_time: f64, users: u64) -> Result<u64> {
    if users == 0 {
        return Err(Error::Config("at least one vehicle is needed".into()));
    }
    let ttis = ControlConfig {
        sampling_time,
        ..ControlConfig::default()
    }
    .ttis_per_sample(wireless)?;
    let pool = wireless.resource_elements_per_tti() * ttis;
    match pool / users {
        0 => Err(Error::InsufficientResources { pool, users }),
        n => Ok(n),
    }
}

/// Packet of `payload_bits` sent over `n_rb` resource elements.
pub fn link_point(
    wireless: &WirelessConfig,
    payload_bits: u64,
    n_rb: u64,
    allow_above_one: bool,
) -> Result<CodingPoint> {
    if n_rb == 0 {
        return Err(Error::Config("no resource elements assigned".into()));
    }
    CodingPoint::from_grid(
        payload_bits,
        n_rb * wireless.bits_per_symbol,
        allow_above_one,
    )
}

type ToleranceSlot = Arc<OnceLock<Result<OutageTolerance>>>;

static TOLERANCES: OnceLock<Mutex<HashMap<String, ToleranceSlot>>> = OnceLock::new();

/// Outage tolerance of the configured loop, memoised per process because
/// every sweep point at the same (ν, T_s) needs the same value.
pub fn outage_tolerance(control: &ControlConfig) -> Result<OutageTolerance> {
    let key = serde_json::to_string(&(
        control.track_spec(),
        control.controller(),
        control.tolerance,
    ))
    .map_err(|e| Error::Config(e.to_string()))?;
    let slot = {
        let mut map = TOLERANCES
            .get_or_init(Default::default)
            .lock()
            .unwrap_or_else(|p| p.into_inner());
        map.entry(key).or_default().clone()
    };
    slot.get_or_init(|| {
        estimate_outage_tolerance(
            &control.track_spec(),
            &control.controller(),
            &control.tolerance,
        )
    })
    .clone()
}

/// P_us and the intermediate quantities it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Instability {
    pub probability: f64,
    pub log10: f64,
    pub p_marginal: f64,
    pub p_bb: f64,
    /// Consecutive failures that count as instability; 0 when the loop
    /// tolerates no loss at all.
    pub run_length: u32,
}

/// Everything about one (vehicle, cell) pair that does not depend on the
/// coding point, computed once.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub control: ControlConfig,
    pub wireless: WirelessConfig,
    pub modes: Modes,
    pub tolerance: OutageTolerance,
    pub correlation: Correlation,
    nodes: ExponentialNodes,
    floor: f64,
}

impl Analysis {
    pub fn new(
        control: &ControlConfig,
        wireless: &WirelessConfig,
        modes: Modes,
        quadrature: &QuadratureSpec,
    ) -> Result<Self> {
        control.validate(wireless)?;
        let tolerance = outage_tolerance(control)?;
        Self::with_tolerance(control, wireless, modes, quadrature, tolerance)
    }

    /// As [`Analysis::new`] with a given outage tolerance instead of the
    /// simulated one.
    pub fn with_tolerance(
        control: &ControlConfig,
        wireless: &WirelessConfig,
        modes: Modes,
        quadrature: &QuadratureSpec,
        tolerance: OutageTolerance,
    ) -> Result<Self> {
        wireless.validate()?;
        control.ttis_per_sample(wireless)?;
        if control.payload_bits == 0 {
            return Err(Error::Config("payload_bits must be at least 1".into()));
        }
        let correlation = correlation_coefficient(&control.doppler(wireless))?;
        Ok(Self {
            control: *control,
            wireless: *wireless,
            modes,
            tolerance,
            correlation,
            nodes: ExponentialNodes::new(quadrature)?,
            floor: quadrature.absolute_floor,
        })
    }

    /// Overrides the block correlation.
    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(domain("correlation", rho, "in [0, 1)"));
        }
        self.correlation = Correlation {
            rho,
            raw: rho,
            clamped: false,
        };
        Ok(self)
    }

    pub fn n_max(&self) -> u32 {
        self.tolerance.n_max
    }

    /// Resource elements in one sampling period.
    pub fn pool(&self) -> u64 {
        let ttis = self
            .control
            .ttis_per_sample(&self.wireless)
            .expect("validated on construction");
        self.wireless.resource_elements_per_tti() * ttis
    }

    /// Fewest resource elements that still give a rate of at most one.
    pub fn min_resources(&self) -> u64 {
        self.control
            .payload_bits
            .div_ceil(self.wireless.bits_per_symbol)
    }

    pub fn point(&self, n_rb: u64) -> Result<CodingPoint> {
        link_point(
            &self.wireless,
            self.control.payload_bits,
            n_rb,
            self.modes.rate_units == RateUnits::Bits,
        )
    }

    /// Fading-averaged single-packet error probability.
    pub fn marginal_failure(&self, point: &CodingPoint) -> Result<f64> {
        let point = point.in_units(self.modes.rate_units);
        Ok(
            block_error_avg_with(&point, self.wireless.mean_snr, &self.nodes, self.floor)?
                .probability,
        )
    }

    pub fn instability(&self, point: &CodingPoint) -> Result<Instability> {
        let p = self.marginal_failure(point)?;
        let q = back_to_back_failure(
            p.min(1.0 - 1e-16),
            self.correlation.rho,
            self.modes.pbb_form,
        )?;
        let run_length = match self.modes.pus_form {
            PusForm::NmaxPlusOne => self.n_max() + 1,
            PusForm::Paper => self.n_max(),
        };
        if run_length == 0 {
            return Ok(Instability {
                probability: 1.0,
                log10: 0.0,
                p_marginal: p,
                p_bb: q,
                run_length,
            });
        }
        let run = consecutive_failure_prob(run_length, p, q)?;
        Ok(Instability {
            probability: run.probability,
            log10: run.log10,
            p_marginal: p,
            p_bb: q,
            run_length,
        })
    }

    pub fn instability_at(&self, n_rb: u64) -> Result<Instability> {
        self.instability(&self.point(n_rb)?)
    }

    /// Whether P_us ≤ p_th, compared in the log domain.
    fn meets(&self, n_rb: u64, p_th: f64) -> Result<bool> {
        Ok(self.instability_at(n_rb)?.log10 <= p_th.log10())
    }

    /// Largest rate on the resource-element grid with P_us ≤ p_th.
    pub fn admissible_rate(&self, p_th: f64) -> Result<Admissible> {
        check_threshold(p_th)?;
        let (lo, hi) = (self.min_resources(), self.pool());
        if lo > hi {
            return Ok(Admissible::Infeasible);
        }
        if !self.monotone() {
            for n_rb in lo..=hi {
                if self.meets(n_rb, p_th)? {
                    return self.feasible(n_rb);
                }
            }
            return Ok(Admissible::Infeasible);
        }
        if !self.meets(hi, p_th)? {
            return Ok(Admissible::Infeasible);
        }
        // Smallest n_rb that meets the threshold; P_us falls with n_rb.
        let (mut fail, mut pass) = (lo, hi);
        if self.meets(lo, p_th)? {
            pass = lo;
        } else {
            while pass - fail > 1 {
                let mid = fail + (pass - fail) / 2;
                if self.meets(mid, p_th)? {
                    pass = mid;
                } else {
                    fail = mid;
                }
            }
        }
        self.feasible(pass)
    }

    fn feasible(&self, n_rb: u64) -> Result<Admissible> {
        Ok(Admissible::Feasible {
            n_rb,
            point: self.point(n_rb)?,
            instability: self.instability_at(n_rb)?,
        })
    }

    /// Whether P_us is known to fall as resources grow. The literal P_bb
    /// form can rise with them, and the searches then scan every candidate.
    pub fn monotone(&self) -> bool {
        self.modes.pbb_form == PbbForm::Corrected
    }

    /// Largest number of vehicles sharing the cell equally with P_us < p_th,
    /// or 0 if a single vehicle already fails.
    pub fn max_supported_gvs(&self, p_th: f64) -> Result<u64> {
        check_threshold(p_th)?;
        let pool = self.pool();
        let most = pool / self.min_resources();
        let ok = |users: u64| -> Result<bool> {
            Ok(self.instability_at(pool / users)?.log10 < p_th.log10())
        };
        if most > 0 && !self.monotone() {
            for users in (1..=most).rev() {
                if ok(users)? {
                    return Ok(users);
                }
            }
            return Ok(0);
        }
        if most == 0 || !ok(1)? {
            return Ok(0);
        }
        if ok(most)? {
            return Ok(most);
        }
        let (mut pass, mut fail) = (1u64, most);
        while fail - pass > 1 {
            let mid = pass + (fail - pass) / 2;
            if ok(mid)? {
                pass = mid;
            } else {
                fail = mid;
            }
        }
        Ok(pass)
    }
}

fn check_threshold(p_th: f64) -> Result<()> {
    if !(p_th > 0.0 && p_th <= 1.0) {
        return Err(domain("instability threshold", p_th, "in (0, 1]"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Admissible {
    Feasible {
        n_rb: u64,
        point: CodingPoint,
        instability: Instability,
    },
    Infeasible,
}

impl Admissible {
    pub fn rate(&self) -> Option<f64> {
        match self {
            Admissible::Feasible { point, .. } => Some(point.rate),
            Admissible::Infeasible => None,
        }
    }
}

/// Target of a mean-SNR fit: the admissible rate of one vehicle at one
/// threshold must be exactly `payload / (n_rb · bits_per_symbol)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationTarget {
    pub velocity: f64,
    pub sampling_time: f64,
    pub p_th: f64,
    pub n_rb: u64,
    /// Search interval for the mean SNR, dB.
    pub snr_db_range: (f64, f64),
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        Self {
            velocity: 2.0,
            sampling_time: 1e-3,
            p_th: 1e-9,
            n_rb: 750,
            snr_db_range: (-10.0, 40.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub mean_snr: f64,
    pub mean_snr_db: f64,
    pub n_max: u32,
    pub rate: f64,
    pub log10_p_us: f64,
}

/// Smallest mean SNR (to 1e-9 dB) at which the target resource count meets
/// the threshold, so that it becomes the admissible rate.
pub fn calibrate(
    control: &ControlConfig,
    wireless: &WirelessConfig,
    modes: Modes,
    quadrature: &QuadratureSpec,
    target: &CalibrationTarget,
) -> Result<Calibration> {
    check_threshold(target.p_th)?;
    let control = ControlConfig {
        velocity: target.velocity,
        sampling_time: target.sampling_time,
        ..*control
    };
    let base = Analysis::new(&control, wireless, modes, quadrature)?;
    let at = |db: f64| -> Result<Analysis> {
        let mut a = base.clone();
        a.wireless.mean_snr = 10f64.powf(db / 10.0);
        Ok(a)
    };
    let (mut lo, mut hi) = target.snr_db_range;
    if !(lo < hi) {
        return Err(Error::Config("calibration SNR range is empty".into()));
    }
    if !at(hi)?.meets(target.n_rb, target.p_th)? {
        return Err(Error::Infeasible(format!(
            "target not reachable below {hi} dB"
        )));
    }
    if at(lo)?.meets(target.n_rb, target.p_th)? {
        return Err(Error::Infeasible(format!("target already met at {lo} dB")));
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if at(mid)?.meets(target.n_rb, target.p_th)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let fitted = at(hi)?;
    let instability = fitted.instability_at(target.n_rb)?;
    Ok(Calibration {
        mean_snr: fitted.wireless.mean_snr,
        mean_snr_db: hi,
        n_max: fitted.n_max(),
        rate: fitted.point(target.n_rb)?.rate,
        log10_p_us: instability.log10,
    })
}

/// Loss statistics and tracking outcome of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloStats {
    pub steps: u64,
    pub losses: u64,
    /// Losses that followed a loss.
    pub repeat_losses: u64,
    pub empirical_p: f64,
    pub empirical_q: f64,
    /// `run_lengths[n - 1]` counts maximal loss bursts of length n; the last
    /// entry collects everything longer.
    pub run_lengths: Vec<u64>,
    /// `window_frequency[n - 1]` is the fraction of steps that end a run
    /// of at least n losses, an estimate of p q^(n-1).
    pub window_frequency: Vec<f64>,
    /// Standard error of `window_frequency` from batch means, which allows
    /// for the correlation between neighbouring steps.
    pub window_std_error: Vec<f64>,
    pub max_error: f64,
    /// Times the error crossed above the threshold.
    pub instability_events: u64,
}

const HISTOGRAM_LEN: usize = 16;
const BATCHES: usize = 32;

impl Analysis {
    /// Closed loop over `laps` laps with packet losses from a correlated
    /// fading path thresholded at the level whose marginal failure
    /// probability is the one at `point`.
    pub fn monte_carlo(
        &self,
        point: &CodingPoint,
        laps: u32,
        seed: u64,
    ) -> Result<MonteCarloStats> {
        let p = self.marginal_failure(point)?;
        self.monte_carlo_with(p, laps, seed)
    }

    /// As [`Analysis::monte_carlo`] with the marginal loss probability given.
    pub fn monte_carlo_with(&self, p_loss: f64, laps: u32, seed: u64) -> Result<MonteCarloStats> {
        let trace = self.loss_trace(p_loss, laps, seed)?;
        Ok(MonteCarloStats::from_trace(
            &trace,
            self.control.tolerance.error_threshold,
        ))
    }

    /// The closed-loop run behind [`Analysis::monte_carlo_with`].
    pub fn loss_trace(&self, p_loss: f64, laps: u32, seed: u64) -> Result<Vec<TraceRow>> {
        if !(0.0..=1.0).contains(&p_loss) {
            return Err(domain("loss probability", p_loss, "in [0, 1]"));
        }
        let track = self.control.track_spec();
        let steps = (track.lap_steps() * f64::from(laps)).ceil() as u64;
        let mean = self.wireless.mean_snr;
        // P(γ < g) = p for γ ~ Exp(mean).
        let cutoff = -mean * (-p_loss).ln_1p();
        let mut fading = CorrelatedFading::new(self.correlation.rho, mean, seed)?;
        let mut lost = vec![false; steps as usize];
        for flag in lost.iter_mut().skip(1) {
            *flag = fading.snr() < cutoff;
            fading.advance();
        }
        let start = reference_track(&track, 0).0;
        Ok(simulate_trace(
            &track,
            &self.control.controller(),
            start,
            steps,
            |k| lost[k as usize],
        ))
    }
}

impl MonteCarloStats {
    /// Loss and error statistics of a trace. Step 0 carries no packet and
    /// is only used for the tracking error.
    pub fn from_trace(trace: &[TraceRow], threshold: f64) -> Self {
        let mut stats = MonteCarloStats {
            steps: trace.len().saturating_sub(1) as u64,
            losses: 0,
            repeat_losses: 0,
            empirical_p: 0.0,
            empirical_q: 0.0,
            run_lengths: vec![0; HISTOGRAM_LEN],
            window_frequency: vec![0.0; HISTOGRAM_LEN],
            window_std_error: vec![0.0; HISTOGRAM_LEN],
            max_error: 0.0,
            instability_events: 0,
        };
        let mut windows = [0u64; HISTOGRAM_LEN];
        let batch_len = (stats.steps as usize).div_ceil(BATCHES).max(1);
        let mut batches = vec![[0u64; HISTOGRAM_LEN]; BATCHES];
        let mut run = 0usize;
        let mut above = false;
        for row in trace {
            let d = row.error.distance();
            stats.max_error = stats.max_error.max(d);
            if d > threshold && !above {
                stats.instability_events += 1;
            }
            above = d > threshold;
            if row.k == 0 {
                continue;
            }
            if row.lost {
                stats.losses += 1;
                if run > 0 {
                    stats.repeat_losses += 1;
                }
                run += 1;
                let batch = &mut batches[((row.k as usize - 1) / batch_len).min(BATCHES - 1)];
                for n in 0..run.min(HISTOGRAM_LEN) {
                    windows[n] += 1;
                    batch[n] += 1;
                }
            } else if run > 0 {
                stats.run_lengths[run.min(HISTOGRAM_LEN) - 1] += 1;
                run = 0;
            }
        }
        if run > 0 {
            stats.run_lengths[run.min(HISTOGRAM_LEN) - 1] += 1;
        }
        let n = stats.steps.max(1) as f64;
        stats.empirical_p = stats.losses as f64 / n;
        let last_lost = trace.last().is_some_and(|r| r.lost);
        let prior_losses = stats.losses - u64::from(last_lost);
        stats.empirical_q = if prior_losses > 0 {
            stats.repeat_losses as f64 / prior_losses as f64
        } else {
            0.0
        };
        for (f, &w) in stats.window_frequency.iter_mut().zip(&windows) {
            *f = w as f64 / n;
        }
        let full = (stats.steps as usize) / batch_len;
        if full >= 2 {
            for i in 0..HISTOGRAM_LEN {
                let means: Vec<f64> = batches[..full]
                    .iter()
                    .map(|b| b[i] as f64 / batch_len as f64)
                    .collect();
                let m = means.iter().sum::<f64>() / full as f64;
                let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (full - 1) as f64;
                stats.window_std_error[i] = (var / full as f64).sqrt();
            }
        }
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analysis(n_max: u32, velocity: f64, modes: Modes) -> Analysis {
        let control = ControlConfig {
            velocity,
            ..ControlConfig::default()
        };
        Analysis::with_tolerance(
            &control,
            &WirelessConfig::default(),
            modes,
            &QuadratureSpec::default(),
            OutageTolerance {
                n_max,
                capped: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn resource_examples() {
        let w = WirelessConfig::default();
        assert_eq!(w.resource_elements_per_tti(), 9324);
        assert_eq!(resources_per_gv(&w, 1e-3, 1).unwrap(), 9324);
        assert_eq!(resources_per_gv(&w, 1e-3, 100).unwrap(), 93);
        assert_eq!(resources_per_gv(&w, 5e-3, 100).unwrap(), 466);
        assert!(matches!(
            resources_per_gv(&w, 1e-3, 10_000),
            Err(Error::InsufficientResources {
                pool: 9324,
                users: 10_000
            })
        ));
        assert!(resources_per_gv(&w, 1.5e-3, 1).is_err());
        assert!(resources_per_gv(&w, 0.5e-3, 1).is_err());
    }

    #[test]
    fn link_point_examples() {
        let w = WirelessConfig::default();
        let p = link_point(&w, 600, 750, false).unwrap();
        assert_eq!((p.blocklength, p.rate), (1500, 0.4));
        let p = link_point(&w, 600, 2450, false).unwrap();
        assert_eq!(p.blocklength, 4900);
        assert!((p.rate - 0.12245).abs() < 1e-5);
        assert_eq!(link_point(&w, 600, 300, false).unwrap().rate, 1.0);
        assert!(matches!(
            link_point(&w, 600, 299, false),
            Err(Error::RateAboveOne { .. })
        ));
        assert!(link_point(&w, 600, 299, true).unwrap().rate > 1.0);
    }

    #[test]
    fn single_loss_intolerance_gives_marginal() {
        let modes = Modes {
            pus_form: PusForm::Paper,
            ..Modes::default()
        };
        let a = analysis(1, 2.0, modes);
        let point = a.point(750).unwrap();
        let us = a.instability(&point).unwrap();
        assert_eq!(us.run_length, 1);
        assert!((us.probability - a.marginal_failure(&point).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn no_tolerance_is_unstable() {
        let us = analysis(0, 2.0, Modes::default())
            .instability_at(750)
            .unwrap();
        assert_eq!(us.run_length, 1);
        let paper = Modes {
            pus_form: PusForm::Paper,
            ..Modes::default()
        };
        let us = analysis(0, 2.0, paper).instability_at(750).unwrap();
        assert_eq!((us.probability, us.run_length), (1.0, 0));
    }

    #[test]
    fn default_counts_one_more_failure() {
        let a = analysis(10, 2.0, Modes::default());
        let us = a.instability_at(750).unwrap();
        assert_eq!(us.run_length, 11);
        let expect = us.p_marginal.log10() + 10.0 * us.p_bb.log10();
        assert!((us.log10 - expect).abs() < 1e-12);
    }

    #[test]
    fn instability_rises_with_rate() {
        let a = analysis(50, 3.0, Modes::default());
        let mut last = f64::INFINITY;
        for n_rb in (300..9324).step_by(97) {
            let l = a.instability_at(n_rb).unwrap().log10;
            assert!(l < last, "{n_rb}");
            last = l;
        }
    }

    fn linear_rate(a: &Analysis, p_th: f64) -> Option<u64> {
        (a.min_resources()..=a.pool()).find(|&n| a.instability_at(n).unwrap().log10 <= p_th.log10())
    }

    fn linear_users(a: &Analysis, p_th: f64) -> u64 {
        let pool = a.pool();
        (1..=pool / a.min_resources())
            .rev()
            .find(|&u| a.instability_at(pool / u).unwrap().log10 < p_th.log10())
            .unwrap_or(0)
    }

    #[test]
    fn searches_match_linear_scans() {
        let literal = Modes {
            pbb_form: PbbForm::Paper,
            ..Modes::default()
        };
        let cases = [
            (100, 2.0, 1e-9),
            (20, 5.0, 1e-6),
            (3, 1.0, 1e-3),
            (400, 4.0, 1e-12),
        ];
        for ((n_max, v, p_th), modes) in cases
            .into_iter()
            .flat_map(|c| [(c, Modes::default()), (c, literal)])
        {
            let a = analysis(n_max, v, modes);
            let r = a.admissible_rate(p_th).unwrap();
            match (r, linear_rate(&a, p_th)) {
                (Admissible::Feasible { n_rb, .. }, Some(n)) => assert_eq!(n_rb, n),
                (Admissible::Infeasible, None) => {}
                other => panic!("{other:?}"),
            }
            assert_eq!(a.max_supported_gvs(p_th).unwrap(), linear_users(&a, p_th));
        }
    }

    #[test]
    fn vacuous_threshold() {
        let a = analysis(5, 2.0, Modes::default());
        assert_eq!(a.admissible_rate(1.0).unwrap().rate(), Some(1.0));
        assert_eq!(a.max_supported_gvs(1.0).unwrap(), 9324 / 300);
        assert!(a.admissible_rate(0.0).is_err());
    }

    #[test]
    fn impossible_threshold_is_infeasible() {
        let a = analysis(0, 2.0, Modes::default());
        assert_eq!(a.admissible_rate(1e-300).unwrap(), Admissible::Infeasible);
        assert_eq!(a.max_supported_gvs(1e-300).unwrap(), 0);
    }

    #[test]
    fn monte_carlo_without_losses() {
        let a = analysis(10, 2.0, Modes::default());
        let s = a.monte_carlo_with(0.0, 1, 3).unwrap();
        assert_eq!(s.losses, 0);
        assert_eq!(s.instability_events, 0);
        assert!(s.max_error < a.control.tolerance.error_threshold);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let a = analysis(10, 2.0, Modes::default());
        assert_eq!(
            a.monte_carlo_with(0.2, 1, 9).unwrap(),
            a.monte_carlo_with(0.2, 1, 9).unwrap()
        );
        assert_ne!(
            a.monte_carlo_with(0.2, 1, 9).unwrap(),
            a.monte_carlo_with(0.2, 1, 10).unwrap()
        );
    }

    #[test]
    fn uncorrelated_losses_do_not_cluster() {
        let a = analysis(10, 2.0, Modes::default()).with_rho(0.0).unwrap();
        let s = a.monte_carlo_with(0.2, 8, 1).unwrap();
        let sigma = (0.2 * 0.8 / s.losses as f64).sqrt();
        assert!((s.empirical_q - s.empirical_p).abs() < 3.0 * sigma, "{s:?}");
    }

    #[test]
    fn csv_layout() {
        let mut r = SweepResult::new(
            "demo",
            &WirelessConfig::default(),
            Modes::default(),
            vec![Column::new("rate", "bpcu"), Column::new("n_rb", "")],
        )
        .unwrap();
        r.push(vec![0.5.into(), 4u64.into()]);
        r.push(vec![0.25.into(), 1e-300.into()]);
        r.sort_by_columns(1);
        let text = r.to_csv_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "rate [bpcu],n_rb,rate_units,pbb_form,pus_form,config_hash"
        );
        assert!(lines[1].starts_with("0.25,1e-300,as-is,corrected,nmax-plus-one,"));
        assert!(lines[2].starts_with("0.5,4,"));
        assert_eq!(r.config_hash.len(), 64);
        assert!(!text.contains('\r'));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["config"]["bandwidth"], 10e6);
    }
}
