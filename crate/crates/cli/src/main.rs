//! `gdf`: checks, spectra, simulations and AEG experiments from JSON configs.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use gdf_core::aeg::{figure_dataset_with, run_experiment, AegError, AegResult, DecayFit, ErrorMethod};
use gdf_core::conditions::{full_report_with, Verdict, Window};
use gdf_core::config::{ConfigError, ExperimentConfig};
use gdf_core::dynamics::{integrate, mass_balance_residual, SolverStats};
use gdf_core::operators::{resolvent_bound_probe, ProbeOptions, ProbeReport};
use gdf_core::spectral::{
    perron_eigenpair_with, spectral_gap, truncation_convergence, ConvergenceReport, GapReport, PerronOptions,
    SpectralTriple, MAX_DENSE,
};

use output::{output_dir, stem, write_csv, write_json, Header};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("cannot write {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("precondition failed (rerun with --force to override): {0}")]
    Precondition(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Read(..) | CliError::Config(_) => 1,
            CliError::Io(..) | CliError::Numerical(_) => 2,
            CliError::Precondition(_) => 3,
        }
    }
}

impl From<AegError> for CliError {
    fn from(e: AegError) -> Self {
        match e {
            AegError::Config(c) => CliError::Config(c),
            AegError::Precondition(p) => CliError::Precondition(p),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "gdf", version, about = "Growth-decay-fragmentation equation: checks, spectra and AEG experiments")]
struct Cli {
    /// Directory for output files (GDF_OUTPUT_DIR takes precedence).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate every hypothesis on the model and write the verdicts as JSON.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2)]
        window_lo: usize,
        #[arg(long, default_value_t = 10_000)]
        window_hi: usize,
        #[arg(long, default_value_t = 200)]
        window_samples: usize,
    },
    /// Perron eigenpair, spectral gap and convergence in the truncation size.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        /// Ascending truncation sizes for the convergence study.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Skip the dense eigensolve.
        #[arg(long)]
        no_gap: bool,
    },
    /// Integrate the truncated system and write the trace as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the AEG experiment: CSV error series plus a JSON summary.
    Aeg {
        #[arg(long)]
        config: PathBuf,
        /// Run even if a required condition fails.
        #[arg(long)]
        force: bool,
    },
    /// Regenerate the datasets of one published figure.
    Figure {
        #[arg(value_parser = ["fig1", "fig2", "fig3"])]
        id: String,
        /// Override the truncation size.
        #[arg(long)]
        truncation: Option<usize>,
        /// Override the final time.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Probe the resolvent bound of the subdiagonal part on random data.
    Resolvent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Read(path.to_path_buf(), e))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn label(cfg: &ExperimentConfig) -> String {
    stem(&cfg.model.label)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let flag = cli.out_dir.as_deref();
    match cli.command {
        Command::Check { config, window_lo, window_hi, window_samples } => {
            let cfg = load_config(&config)?;
            let model = cfg.build_model()?;
            let window = Window { lo: window_lo, hi: window_hi, samples: window_samples };
            let report = full_report_with(&model, cfg.m, cfg.m_prime, &window, cfg.growth_constants).map_err(|e| match e {
                gdf_core::conditions::ConditionError::WindowTooSmall { .. } => CliError::Usage(e.to_string()),
                other => numerical(other),
            })?;
            let dir = output_dir(flag, Some(&cfg));
            Ok(vec![write_json(&dir, &format!("{}_check.json", label(&cfg)), "check", Some(&cfg), &report)?])
        }
        Command::Spectrum { config, sizes, no_gap } => {
            let cfg = load_config(&config)?;
            spectrum(&cfg, &sizes, no_gap, flag)
        }
        Command::Simulate { config } => {
            let cfg = load_config(&config)?;
            simulate(&cfg, flag)
        }
        Command::Aeg { config, force } => {
            let mut cfg = load_config(&config)?;
            cfg.force |= force;
            let result = run_experiment(&cfg)?;
            let dir = output_dir(flag, Some(&cfg));
            let name = label(&cfg);
            let tables = gdf_core::aeg::build_tables(&result);
            let series = &tables[3];
            let header = Header::new("aeg").experiment(&cfg).field("lambda0", result.spectral.lambda0);
            let csv = write_csv(&dir, &format!("{name}_aeg.csv"), &header, &series.columns, &series.rows)?;
            let json = write_json(&dir, &format!("{name}_aeg.json"), "aeg", Some(&cfg), &AegSummary::from(&result))?;
            Ok(vec![csv, json])
        }
        Command::Figure { id, truncation, t_end } => {
            let mut cfg = ExperimentConfig::figure(&id).ok_or_else(|| CliError::Usage(format!("unknown figure {id}")))?;
            if let Some(n) = truncation {
                cfg.truncation = n;
            }
            if let Some(t) = t_end {
                cfg.t_span.1 = t;
            }
            cfg.validate()?;
            let data = figure_dataset_with(&id, &cfg)?;
            let dir = output_dir(flag, Some(&cfg));
            let mut paths = Vec::new();
            for table in &data.tables {
                let header = Header::new("figure")
                    .field("figure", &id)
                    .field("panel", &table.name)
                    .experiment(&cfg)
                    .field("lambda0", data.result.spectral.lambda0);
                paths.push(write_csv(&dir, &format!("{id}_{}.csv", table.name), &header, &table.columns, &table.rows)?);
            }
            paths.push(write_json(&dir, &format!("{id}_summary.json"), "figure", Some(&cfg), &AegSummary::from(&data.result))?);
            Ok(paths)
        }
        Command::Resolvent { config, lambda, samples, seed, force } => {
            let cfg = load_config(&config)?;
            let model = cfg.build_model()?;
            let opts = ProbeOptions { truncation: cfg.truncation, seed, ..ProbeOptions::default() };
            let report: ProbeReport =
                resolvent_bound_probe(&model, cfg.m, cfg.m_prime, lambda, samples, &opts).map_err(numerical)?;
            if report.precondition == Verdict::Fails && !(force || cfg.force) {
                return Err(CliError::Precondition(format!("condi2 fails for m'={}", cfg.m_prime)));
            }
            let dir = output_dir(flag, Some(&cfg));
            Ok(vec![write_json(&dir, &format!("{}_resolvent.json", label(&cfg)), "resolvent", Some(&cfg), &report)?])
        }
    }
}

#[derive(Serialize)]
struct SpectrumResult {
    triple: SpectralTriple,
    gap: Option<GapReport>,
    convergence: Option<ConvergenceReport>,
}

fn spectrum(cfg: &ExperimentConfig, sizes: &[usize], no_gap: bool, flag: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let model = cfg.build_model()?;
    let opts = PerronOptions { policy: cfg.policy, norm_order: cfg.m, ..PerronOptions::default() };
    let mut triple = perron_eigenpair_with(&model, cfg.truncation, cfg.eigen_tol, &opts).map_err(numerical)?;
    let gap = if no_gap || cfg.truncation > MAX_DENSE {
        None
    } else {
        let g = spectral_gap(&model, cfg.truncation, cfg.policy).map_err(numerical)?;
        triple.gap = Some(g.gap);
        Some(g)
    };
    let convergence = if sizes.is_empty() {
        None
    } else {
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Usage("--sizes must be strictly ascending".into()));
        }
        Some(truncation_convergence(&model, sizes, cfg.eigen_tol, &opts).map_err(numerical)?)
    };
    let dir = output_dir(flag, Some(cfg));
    let result = SpectrumResult { triple, gap, convergence };
    Ok(vec![write_json(&dir, &format!("{}_spectrum.json", label(cfg)), "spectrum", Some(cfg), &result)?])
}

#[derive(Serialize)]
struct SimulationSummary {
    mass_balance_residual: f64,
    stats: SolverStats,
    final_mass: f64,
    final_leaked_mass: f64,
}

fn simulate(cfg: &ExperimentConfig, flag: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let model = cfg.build_model()?;
    let f_in = cfg.initial_state()?;
    let trace = integrate(&model, &f_in, cfg.t_span, &cfg.solver_options()).map_err(numerical)?;
    let residual = mass_balance_residual(&trace, &model).map_err(numerical)?;
    let mut columns: Vec<String> = ["t", "M", "norm_m", "boundary_flux", "leaked_mass"].iter().map(|s| s.to_string()).collect();
    columns.extend(cfg.sample_indices.iter().map(|i| format!("f_{i}")));
    let rows: Vec<Vec<f64>> = (0..trace.len())
        .map(|k| {
            let mut row = vec![trace.times[k], trace.mass[k], trace.norm_m[k], trace.boundary_flux[k], trace.leaked_mass[k]];
            row.extend(cfg.sample_indices.iter().map(|&i| trace.states[k].get(i)));
            row
        })
        .collect();
    let dir = output_dir(flag, Some(cfg));
    let name = label(cfg);
    let header = Header::new("simulate").experiment(cfg).field("mass_balance_residual", residual);
    let csv = write_csv(&dir, &format!("{name}_trace.csv"), &header, &columns, &rows)?;
    let summary = SimulationSummary {
        mass_balance_residual: residual,
        stats: trace.stats.clone(),
        final_mass: *trace.mass.last().expect("nonempty trace"),
        final_leaked_mass: *trace.leaked_mass.last().expect("nonempty trace"),
    };
    let json = write_json(&dir, &format!("{name}_simulate.json"), "simulate", Some(cfg), &summary)?;
    Ok(vec![csv, json])
}

/// The scalar outcome of an AEG run; vectors go to the CSV files.
#[derive(Serialize)]
struct AegSummary<'a> {
    lambda0: f64,
    residual_right: f64,
    residual_left: f64,
    projection_constant: f64,
    fit: &'a DecayFit,
    error_method: ErrorMethod,
    trace_consistency: f64,
    preconditions: &'a [gdf_core::conditions::ConditionVerdict],
    overridden: bool,
    error_curve: &'a [f64],
    times: &'a [f64],
}

impl<'a> From<&'a AegResult> for AegSummary<'a> {
    fn from(r: &'a AegResult) -> Self {
        AegSummary {
            lambda0: r.spectral.lambda0,
            residual_right: r.spectral.residual_right,
            residual_left: r.spectral.residual_left,
            projection_constant: r.projection_constant,
            fit: &r.fit,
            error_method: r.error_method,
            trace_consistency: r.trace_consistency,
            preconditions: &r.preconditions,
            overridden: r.overridden,
            error_curve: &r.error_curve,
            times: r.times(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gdf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
