//! Unicycle guided vehicle following a closed stadium track, and the
//! simulation-based estimate of how many consecutive lost control packets
//! the loop can ride out.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::report::format_float;

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI);
    if r == 0.0 {
        PI
    } else {
        r - PI
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// m/s
    pub v: f64,
    /// rad/s
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingError {
    pub x_e: f64,
    pub y_e: f64,
    pub theta_e: f64,
}

impl TrackingError {
    /// Position error magnitude sqrt(x_e² + y_e²).
    pub fn distance(&self) -> f64 {
        self.x_e.hypot(self.y_e)
    }
}

pub fn step_kinematics(pose: Pose, u: ControlInput, sample_time: f64) -> Pose {
    let (sin, cos) = pose.theta.sin_cos();
    Pose {
        x: pose.x + sample_time * u.v * cos,
        y: pose.y + sample_time * u.v * sin,
        theta: normalize_angle(pose.theta + sample_time * u.w),
    }
}

/// Pose difference expressed in the vehicle frame.
pub fn tracking_error(current: Pose, reference: Pose) -> TrackingError {
    let dx = reference.x - current.x;
    let dy = reference.y - current.y;
    let (sin, cos) = current.theta.sin_cos();
    TrackingError {
        x_e: cos * dx + sin * dy,
        y_e: -sin * dx + cos * dy,
        theta_e: normalize_angle(reference.theta - current.theta),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    pub k_x: f64,
    pub k_y: f64,
    pub k_theta: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            k_x: 3.0,
            k_y: 12.0,
            k_theta: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Saturation {
    pub max_v: f64,
    pub max_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Controller {
    #[serde(default)]
    pub gains: Gains,
    #[serde(default)]
    pub saturation: Option<Saturation>,
}

impl Controller {
    pub fn validate(&self) -> Result<()> {
        let g = self.gains;
        for (what, value) in [("k_x", g.k_x), ("k_y", g.k_y), ("k_theta", g.k_theta)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(domain(what, value, "finite and > 0"));
            }
        }
        if let Some(s) = self.saturation {
            if !(s.max_v > 0.0) {
                return Err(domain("max_v", s.max_v, "> 0"));
            }
            if !(s.max_w > 0.0) {
                return Err(domain("max_w", s.max_w, "> 0"));
            }
        }
        Ok(())
    }

    pub fn input(&self, err: TrackingError, reference: ControlInput) -> ControlInput {
        let u = control_law(err, reference, self.gains);
        match self.saturation {
            Some(s) => ControlInput {
                v: u.v.clamp(-s.max_v, s.max_v),
                w: u.w.clamp(-s.max_w, s.max_w),
            },
            None => u,
        }
    }
}

/// v = v_r cos θ_e + K_x x_e, w = w_r + v_r (K_y y_e + K_θ sin θ_e).
pub fn control_law(err: TrackingError, reference: ControlInput, gains: Gains) -> ControlInput {
    ControlInput {
        v: reference.v * err.theta_e.cos() + gains.k_x * err.x_e,
        w: reference.w + reference.v * (gains.k_y * err.y_e + gains.k_theta * err.theta_e.sin()),
    }
}

/// Two straights joined by two semicircles, driven counter-clockwise.
///
/// The lap starts at (0, -r) heading along +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub straight_length: f64,
    pub arc_radius: f64,
    pub reference_speed: f64,
    pub sample_time: f64,
}

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        for (what, value) in [
            ("straight length", self.straight_length),
            ("arc radius", self.arc_radius),
            ("reference speed", self.reference_speed),
            ("sample time", self.sample_time),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(domain(what, value, "finite and > 0"));
            }
        }
        Ok(())
    }

    pub fn lap_length(&self) -> f64 {
        2.0 * self.straight_length + 2.0 * PI * self.arc_radius
    }

    /// Steps per lap, generally fractional.
    pub fn lap_steps(&self) -> f64 {
        self.lap_length() / (self.reference_speed * self.sample_time)
    }

    pub fn at_distance(&self, distance: f64) -> (Pose, ControlInput) {
        let (l, r, v) = (self.straight_length, self.arc_radius, self.reference_speed);
        let straight = ControlInput { v, w: 0.0 };
        let turning = ControlInput { v, w: v / r };
        let mut d = distance.rem_euclid(self.lap_length());
        if d < l {
            return (Pose::new(d, -r, 0.0), straight);
        }
        d -= l;
        if d < PI * r {
            let a = d / r;
            return (Pose::new(l + r * a.sin(), -r * a.cos(), a), turning);
        }
        d -= PI * r;
        if d < l {
            return (Pose::new(l - d, r, PI), straight);
        }
        d -= l;
        let a = d / r;
        (Pose::new(-r * a.sin(), r * a.cos(), PI + a), turning)
    }
}

/// Reference pose and feedforward input at step k.
pub fn reference_track(spec: &TrackSpec, k: u64) -> (Pose, ControlInput) {
    spec.at_distance(spec.reference_speed * k as f64 * spec.sample_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutageToleranceSpec {
    /// Bound on the position error, meters.
    pub error_threshold: f64,
    /// Steps allowed after the outage for the error to fall below a tenth
    /// of the threshold.
    pub recovery_horizon: u64,
    pub probe_positions: u32,
    /// Largest outage length tried before giving up.
    pub search_cap: u32,
}

impl Default for OutageToleranceSpec {
    fn default() -> Self {
        Self {
            error_threshold: 0.1,
            recovery_horizon: 2000,
            probe_positions: 16,
            search_cap: 5000,
        }
    }
}

impl OutageToleranceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.error_threshold > 0.0) {
            return Err(domain("error threshold", self.error_threshold, "> 0"));
        }
        if self.probe_positions < 4 {
            return Err(domain(
                "probe positions",
                self.probe_positions as f64,
                ">= 4",
            ));
        }
        if self.search_cap == 0 {
            return Err(domain("search cap", 0.0, ">= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutageTolerance {
    pub n_max: u32,
    /// The search stopped at the cap rather than at a failing outage.
    pub capped: bool,
}

/// Closed-loop run with zero losses, kept so that outage probes can start
/// from any step without replaying the lap.
struct NominalRun {
    poses: Vec<Pose>,
    inputs: Vec<ControlInput>,
    max_error: f64,
}

impl NominalRun {
    fn simulate(track: &TrackSpec, controller: &Controller, steps: u64, from: u64) -> Self {
        let mut pose = reference_track(track, 0).0;
        let mut poses = Vec::with_capacity(steps as usize);
        let mut inputs = Vec::with_capacity(steps as usize);
        let mut max_error: f64 = 0.0;
        for k in 0..steps {
            let (reference, feedforward) = reference_track(track, k);
            let err = tracking_error(pose, reference);
            if k >= from {
                max_error = max_error.max(err.distance());
            }
            let u = controller.input(err, feedforward);
            poses.push(pose);
            inputs.push(u);
            pose = step_kinematics(pose, u, track.sample_time);
        }
        Self {
            poses,
            inputs,
            max_error,
        }
    }
}

/// Step indices of the probes: equally spaced phases over the second lap,
/// so the loop has settled from its start-up transient.
pub fn probe_steps(track: &TrackSpec, probes: u32) -> Vec<u64> {
    let lap = track.lap_steps();
    (0..probes)
        .map(|i| (lap * (1.0 + i as f64 / probes as f64)).round() as u64)
        .collect()
}

/// Whether the loop survives `outage` lost packets starting at step k0.
fn survives(
    track: &TrackSpec,
    controller: &Controller,
    tol: &OutageToleranceSpec,
    nominal: &NominalRun,
    k0: u64,
    outage: u64,
) -> bool {
    let mut pose = nominal.poses[k0 as usize];
    let mut u = nominal.inputs[k0 as usize - 1];
    let end = k0 + outage + tol.recovery_horizon;
    for k in k0..end {
        let (reference, feedforward) = reference_track(track, k);
        let err = tracking_error(pose, reference);
        if !(err.distance() <= tol.error_threshold) {
            return false;
        }
        if k >= k0 + outage {
            u = controller.input(err, feedforward);
        }
        pose = step_kinematics(pose, u, track.sample_time);
    }
    let (reference, _) = reference_track(track, end);
    tracking_error(pose, reference).distance() < 0.1 * tol.error_threshold
}

/// Largest number of consecutive lost packets that every probed track
/// phase survives, with the actuator holding the last received input.
pub fn estimate_outage_tolerance(
    track: &TrackSpec,
    controller: &Controller,
    tol: &OutageToleranceSpec,
) -> Result<OutageTolerance> {
    track.validate()?;
    controller.validate()?;
    tol.validate()?;
    let probes = probe_steps(track, tol.probe_positions);
    let first = *probes.iter().min().unwrap_or(&1);
    let last = *probes.iter().max().unwrap_or(&1);
    let nominal = NominalRun::simulate(track, controller, last + 1, first);
    if !(nominal.max_error <= tol.error_threshold) {
        return Err(Error::UnstableLoop {
            max_error: nominal.max_error,
            threshold: tol.error_threshold,
        });
    }
    let mut n = 0u32;
    while n < tol.search_cap {
        let next = u64::from(n) + 1;
        let ok = probes
            .par_iter()
            .all(|&k0| survives(track, controller, tol, &nominal, k0, next));
        if !ok {
            log::debug!(
                "outage tolerance {n} at v = {} m/s, T_s = {} s",
                track.reference_speed,
                track.sample_time
            );
            return Ok(OutageTolerance {
                n_max: n,
                capped: false,
            });
        }
        n += 1;
    }
    log::warn!("outage tolerance search hit its cap of {}", tol.search_cap);
    Ok(OutageTolerance {
        n_max: n,
        capped: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: u64,
    pub pose: Pose,
    pub error: TrackingError,
    pub lost: bool,
}

/// Runs the loop from the start of the track. `lost(k)` says whether the
/// packet for step k is dropped, in which case the previous input is held.
pub fn simulate_trace(
    track: &TrackSpec,
    controller: &Controller,
    start: Pose,
    steps: u64,
    mut lost: impl FnMut(u64) -> bool,
) -> Vec<TraceRow> {
    let mut pose = start;
    let mut u = ControlInput::default();
    let mut rows = Vec::with_capacity(steps as usize);
    for k in 0..steps {
        let (reference, feedforward) = reference_track(track, k);
        let error = tracking_error(pose, reference);
        let dropped = k > 0 && lost(k);
        if !dropped {
            u = controller.input(error, feedforward);
        }
        rows.push(TraceRow {
            k,
            pose,
            error,
            lost: dropped,
        });
        pose = step_kinematics(pose, u, track.sample_time);
    }
    rows
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow], config_hash: &str) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io = |e: csv::Error| Error::Config(format!("writing trace: {e}"));
    w.write_record([
        "k",
        "x_m",
        "y_m",
        "theta_rad",
        "x_e_m",
        "y_e_m",
        "theta_e_rad",
        "loss_flag",
        "config_hash",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            format_float(r.pose.x),
            format_float(r.pose.y),
            format_float(r.pose.theta),
            format_float(r.error.x_e),
            format_float(r.error.y_e),
            format_float(r.error.theta_e),
            u8::from(r.lost).to_string(),
            config_hash.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Config(format!("writing trace: {e}")))
}
