use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gvstab::fbl::RateUnits;
use gvstab::gv_control::write_trace_csv;
use gvstab::markov_channel::PbbForm;
use gvstab::stability_analysis::{PusForm, SweepResult};
use gvstab::Error;
use gvstab_cli::runs;
use gvstab_cli::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "gvstab",
    version,
    about = "Instability analysis of wirelessly controlled guided vehicles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output CSV. A JSON copy with the resolved config is written next to
    /// it. Without this the CSV goes to stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Seed for the simulated fading path, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// How D/L enters the error formulas: unchanged, or as bits converted
    /// to nats.
    #[arg(long, global = true)]
    rate_units: Option<RateUnitsArg>,

    /// Conditional failure probability: the corrected expression or the
    /// literal one.
    #[arg(long, global = true)]
    pbb_form: Option<PbbFormArg>,

    /// Run length counted as unstable: n_max + 1 losses, or n_max.
    #[arg(long, global = true)]
    pus_form: Option<PusFormArg>,

    /// Worker threads; all cores by default.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Probability of instability against coding rate per velocity.
    InstabilitySweep,
    /// Admissible coding rate against velocity per sampling time.
    RateSweep,
    /// Maximum number of vehicles against the instability threshold.
    AdmissionSweep,
    /// Closed-loop Monte Carlo run with correlated packet losses.
    Simulate,
    /// Fit the mean SNR to the calibration target.
    Calibrate,
}

#[derive(ValueEnum, Clone, Copy)]
enum RateUnitsArg {
    AsIs,
    Bits,
}

#[derive(ValueEnum, Clone, Copy)]
enum PbbFormArg {
    Corrected,
    Paper,
}

#[derive(ValueEnum, Clone, Copy)]
enum PusFormArg {
    NmaxPlusOne,
    Paper,
}

fn resolve(cli: &Cli) -> gvstab::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(u) = cli.rate_units {
        cfg.modes.rate_units = match u {
            RateUnitsArg::AsIs => RateUnits::AsIs,
            RateUnitsArg::Bits => RateUnits::Bits,
        };
    }
    if let Some(f) = cli.pbb_form {
        cfg.modes.pbb_form = match f {
            PbbFormArg::Corrected => PbbForm::Corrected,
            PbbFormArg::Paper => PbbForm::Paper,
        };
    }
    if let Some(f) = cli.pus_form {
        cfg.modes.pus_form = match f {
            PusFormArg::NmaxPlusOne => PusForm::NmaxPlusOne,
            PusFormArg::Paper => PusForm::Paper,
        };
    }
    if cli.out.is_some() {
        cfg.output = cli.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> gvstab::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn emit(result: &SweepResult, out: Option<&Path>) -> gvstab::Result<()> {
    let csv = result.to_csv_string()?;
    match out {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            write_file(&sibling(path, ".json"), result.to_json()?.as_bytes())?;
            log::info!("wrote {}", path.display());
        }
        None => io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Error::Config(format!("stdout: {e}")))?,
    }
    Ok(())
}

fn run(cli: &Cli) -> gvstab::Result<()> {
    let cfg = resolve(cli)?;
    let out = cfg.output.as_deref();
    match cli.command {
        Command::InstabilitySweep => emit(&runs::run_instability_sweep(&cfg)?, out),
        Command::RateSweep => emit(&runs::run_rate_sweep(&cfg)?, out),
        Command::AdmissionSweep => emit(&runs::run_admission_sweep(&cfg)?, out),
        Command::Calibrate => {
            let (cal, table) = runs::run_calibration(&cfg)?;
            log::info!(
                "mean snr {:.6} ({:.4} dB), n_max {}",
                cal.mean_snr,
                cal.mean_snr_db,
                cal.n_max
            );
            emit(&table, out)
        }
        Command::Simulate => {
            let sim = runs::run_simulation(&cfg)?;
            let hash = &sim.bursts.config_hash;
            let mut trace = Vec::new();
            write_trace_csv(&mut trace, &sim.trace, hash)?;
            match out {
                Some(path) => {
                    write_file(path, &trace)?;
                    let bursts = sibling(path, ".bursts.csv");
                    write_file(&bursts, sim.bursts.to_csv_string()?.as_bytes())?;
                    let summary = serde_json::json!({
                        "config_hash": hash,
                        "summary": sim,
                        "config": sim.bursts.config,
                    });
                    let text = serde_json::to_string_pretty(&summary)
                        .map_err(|e| Error::Config(e.to_string()))?;
                    write_file(&sibling(path, ".json"), text.as_bytes())?;
                }
                None => emit(&sim.bursts, None)?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("gvstab: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gvstab: {e}");
            ExitCode::from(runs::exit_code(&e))
        }
    }
}
