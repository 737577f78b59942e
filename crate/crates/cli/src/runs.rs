use gvstab::fbl::CodingPoint;
use gvstab::gv_control::TraceRow;
use gvstab::markov_channel::consecutive_failure_prob;
use gvstab::stability_analysis::{
    calibrate, Admissible, Analysis, Calibration, Cell, Column, MonteCarloStats, SweepResult,
};
use gvstab::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;

fn analysis(cfg: &ExperimentConfig, velocity: f64, sampling_time: f64) -> Result<Analysis> {
    let control = cfg.with_timing(velocity, sampling_time)?;
    Analysis::new(&control, &cfg.wireless, cfg.modes, &cfg.quadrature)
}

/// P_us over the rate grid for each velocity.
pub fn run_instability_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let s = &cfg.instability_sweep;
    let mut out = SweepResult::new(
        "instability-sweep",
        cfg,
        cfg.modes,
        vec![
            Column::new("velocity", "m/s"),
            Column::new("rate", "bpcu"),
            Column::new("blocklength", "channel uses"),
            Column::new("n_max", "packets"),
            Column::new("rho", ""),
            Column::new("p_marginal", ""),
            Column::new("p_bb", ""),
            Column::new("p_us", ""),
            Column::new("log10_p_us", ""),
        ],
    )?;
    let d = cfg.control.payload_bits;
    let analyses: Vec<Analysis> = s
        .velocities
        .par_iter()
        .map(|&v| analysis(cfg, v, s.sampling_time))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<Cell>> = analyses
        .par_iter()
        .flat_map_iter(|a| s.rates.iter().map(move |&r| (a, r)))
        .map(|(a, rate)| {
            let blocklength = ((d as f64 / rate).round() as u64).max(2);
            let point = CodingPoint::new(d, blocklength, rate)?;
            let us = a.instability(&point)?;
            Ok(vec![
                a.control.velocity.into(),
                rate.into(),
                blocklength.into(),
                a.n_max().into(),
                a.correlation.rho.into(),
                us.p_marginal.into(),
                us.p_bb.into(),
                us.probability.into(),
                us.log10.into(),
            ])
        })
        .collect::<Result<_>>()?;
    for row in rows {
        out.push(row);
    }
    out.sort_by_columns(2);
    Ok(out)
}

/// Admissible rate for each sampling time and velocity.
pub fn run_rate_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let s = &cfg.rate_sweep;
    let mut out = SweepResult::new(
        "rate-sweep",
        cfg,
        cfg.modes,
        vec![
            Column::new("sampling_time", "s"),
            Column::new("velocity", "m/s"),
            Column::new("n_max", "packets"),
            Column::new("rho", ""),
            Column::new("n_rb", "resource elements"),
            Column::new("blocklength", "channel uses"),
            Column::new("rate_req", "bpcu"),
            Column::new("log10_p_us", ""),
        ],
    )?;
    let grid: Vec<(f64, f64)> = s
        .sampling_times
        .iter()
        .flat_map(|&ts| s.velocities.iter().map(move |&v| (ts, v)))
        .collect();
    let rows: Vec<Vec<Cell>> = grid
        .par_iter()
        .map(|&(ts, v)| {
            let a = analysis(cfg, v, ts)?;
            let head = vec![
                ts.into(),
                v.into(),
                a.n_max().into(),
                a.correlation.rho.into(),
            ];
            let tail = match a.admissible_rate(s.p_th)? {
                Admissible::Feasible {
                    n_rb,
                    point,
                    instability,
                } => vec![
                    n_rb.into(),
                    point.blocklength.into(),
                    point.rate.into(),
                    instability.log10.into(),
                ],
                Admissible::Infeasible => vec!["infeasible".into(); 4],
            };
            Ok(head.into_iter().chain(tail).collect())
        })
        .collect::<Result<_>>()?;
    for row in rows {
        out.push(row);
    }
    out.sort_by_columns(2);
    Ok(out)
}

/// Largest fleet for each sampling time and threshold.
pub fn run_admission_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let s = &cfg.admission_sweep;
    let mut out = SweepResult::new(
        "admission-sweep",
        cfg,
        cfg.modes,
        vec![
            Column::new("sampling_time", "s"),
            Column::new("log10_p_th", ""),
            Column::new("velocity", "m/s"),
            Column::new("n_max", "packets"),
            Column::new("max_gvs", "vehicles"),
            Column::new("n_rb", "resource elements"),
            Column::new("rate", "bpcu"),
        ],
    )?;
    let analyses: Vec<Analysis> = s
        .sampling_times
        .par_iter()
        .map(|&ts| analysis(cfg, s.velocity, ts))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<Cell>> = analyses
        .par_iter()
        .flat_map_iter(|a| s.log10_p_th.iter().map(move |&l| (a, l)))
        .map(|(a, log10_p_th)| {
            let users = a.max_supported_gvs(10f64.powf(log10_p_th))?;
            let mut row: Vec<Cell> = vec![
                a.control.sampling_time.into(),
                log10_p_th.into(),
                s.velocity.into(),
                a.n_max().into(),
                users.into(),
            ];
            match a.pool().checked_div(users) {
                Some(n_rb) => row.extend([n_rb.into(), a.point(n_rb)?.rate.into()]),
                None => row.extend(["none".into(), "none".into()]),
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    for row in rows {
        out.push(row);
    }
    out.sort_by_columns(2);
    Ok(out)
}

/// Outcome of a closed-loop Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub point: CodingPoint,
    pub rho: f64,
    pub p_marginal: f64,
    pub p_bb: f64,
    pub stats: MonteCarloStats,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    /// Simulated window frequencies next to p q^(n-1).
    #[serde(skip)]
    pub bursts: SweepResult,
}

pub fn run_simulation(cfg: &ExperimentConfig) -> Result<Simulation> {
    let s = &cfg.simulation;
    let a = analysis(cfg, s.velocity, s.sampling_time)?;
    let point = a.point(s.n_rb)?;
    let us = a.instability(&point)?;
    let trace = a.loss_trace(us.p_marginal, s.laps, cfg.seed)?;
    let stats = MonteCarloStats::from_trace(&trace, a.control.tolerance.error_threshold);

    let mut bursts = SweepResult::new(
        "simulate",
        cfg,
        cfg.modes,
        vec![
            Column::new("run_length", "packets"),
            Column::new("simulated", ""),
            Column::new("std_error", ""),
            Column::new("analytic", ""),
            Column::new("bursts_of_exact_length", ""),
        ],
    )?;
    for (i, ((&freq, &se), &count)) in stats
        .window_frequency
        .iter()
        .zip(&stats.window_std_error)
        .zip(&stats.run_lengths)
        .enumerate()
    {
        let n = i as u32 + 1;
        let analytic = consecutive_failure_prob(n, us.p_marginal, us.p_bb)?.probability;
        bursts.push(vec![
            n.into(),
            freq.into(),
            se.into(),
            analytic.into(),
            count.into(),
        ]);
    }
    Ok(Simulation {
        point,
        rho: a.correlation.rho,
        p_marginal: us.p_marginal,
        p_bb: us.p_bb,
        stats,
        trace,
        bursts,
    })
}

/// Mean-SNR fit as a one-row table.
pub fn run_calibration(cfg: &ExperimentConfig) -> Result<(Calibration, SweepResult)> {
    let cal = calibrate(
        &cfg.control,
        &cfg.wireless,
        cfg.modes,
        &cfg.quadrature,
        &cfg.calibration,
    )?;
    let mut out = SweepResult::new(
        "calibrate",
        cfg,
        cfg.modes,
        vec![
            Column::new("velocity", "m/s"),
            Column::new("sampling_time", "s"),
            Column::new("p_th", ""),
            Column::new("mean_snr", "linear"),
            Column::new("mean_snr_db", "dB"),
            Column::new("n_max", "packets"),
            Column::new("rate", "bpcu"),
            Column::new("log10_p_us", ""),
        ],
    )?;
    let t = &cfg.calibration;
    out.push(vec![
        t.velocity.into(),
        t.sampling_time.into(),
        t.p_th.into(),
        cal.mean_snr.into(),
        cal.mean_snr_db.into(),
        cal.n_max.into(),
        cal.rate.into(),
        cal.log10_p_us.into(),
    ]);
    Ok((cal, out))
}

/// Exit status for an error: 2 for bad input, 3 for an empty search, 1
/// otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Domain { .. }
        | Error::UnstableLoop { .. }
        | Error::InsufficientResources { .. }
        | Error::RateAboveOne { .. } => 2,
        Error::Infeasible(_) => 3,
        Error::Numerical { .. } => 1,
    }
}
