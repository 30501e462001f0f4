//! `trapcool` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Report, RuleChoice, RunConfig, SimulateMode};

/// Exit statuses.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(trapcool::Error),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) | CliError::Io(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<trapcool::Error> for CliError {
    fn from(e: trapcool::Error) -> Self {
        match e {
            trapcool::Error::Config(m) => CliError::Config(m),
            trapcool::Error::Io(e) => CliError::Io(e),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "trapcool",
    version,
    about = "Sympathetic cooling in a Penning-trap double well"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command; they override the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $TRAPCOOL_OUT, then ./trapcool-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    species: Option<String>,
    /// Particle axial frequency (Hz).
    #[arg(long, global = true)]
    f: Option<f64>,
    /// Well separation (m).
    #[arg(long, global = true)]
    s0: Option<f64>,
    /// Midpoint offset toward ⁹Be⁺ (m).
    #[arg(long, global = true, allow_hyphen_values = true)]
    delta_s0: Option<f64>,
    /// ⁹Be⁺ axial frequency (Hz); compensated when absent.
    #[arg(long, global = true)]
    f_be: Option<f64>,
    /// Integrator step (s).
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Voltage noise standard deviation (V).
    #[arg(long, global = true)]
    sigma_v: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tabulated electrode basis CSV.
    #[arg(long, global = true)]
    import_basis: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve and characterize a double well.
    Solve,
    /// Single trajectory with an energy trace.
    Simulate(SimulateArgs),
    /// Build a ⁹Be⁺ frequency sweep schedule.
    Sweep(SweepArgs),
    /// Monte Carlo sweep campaign.
    Campaign(CampaignArgs),
    /// Resonance, σ_f, energy-range and stability reports.
    Analyze(AnalyzeArgs),
    /// Staged ground-state cooling plan.
    Plan,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    mode: Option<SimulateMode>,
    /// Initial energy of the particle (K).
    #[arg(long)]
    e_init: Option<f64>,
    /// Run length (s).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    trace_stride: Option<usize>,
    #[arg(long)]
    no_plot: bool,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    f_start: Option<f64>,
    #[arg(long)]
    f_end: Option<f64>,
    #[arg(long)]
    sweep_duration: Option<f64>,
    #[arg(long)]
    n_waypoints: Option<usize>,
    #[arg(long, value_enum)]
    rule: Option<RuleChoice>,
    #[arg(long)]
    n_sweeps: Option<usize>,
    /// CSV of `time_s, f_Be_Hz` waypoints.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CampaignArgs {
    /// Master seed; required.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Run without voltage noise.
    #[arg(long)]
    no_noise: bool,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, value_enum, value_delimiter = ',')]
    report: Vec<Report>,
    /// Comma-separated frequencies (Hz).
    #[arg(long, value_delimiter = ',')]
    frequencies: Vec<f64>,
    /// Comma-separated separations (m).
    #[arg(long, value_delimiter = ',')]
    s0_values: Vec<f64>,
    /// Comma-separated midpoint offsets (m), one per separation.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta_s0_values: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_samples: Option<usize>,
    #[arg(long)]
    detuning_points: Option<usize>,
}

fn apply_common(c: &mut RunConfig, o: &Common) {
    if let Some(v) = &o.species {
        c.species = v.clone();
    }
    if let Some(v) = &o.out {
        c.output_dir = Some(v.clone());
    }
    if let Some(v) = o.f {
        c.well.f_hz = v;
    }
    if let Some(v) = o.s0 {
        c.well.s0_m = v;
    }
    if let Some(v) = o.delta_s0 {
        c.well.delta_s0_m = v;
    }
    if let Some(v) = o.f_be {
        c.well.f_be_hz = Some(v);
    }
    if let Some(v) = o.dt {
        c.integrator.dt_s = Some(v);
    }
    if let Some(v) = o.sigma_v {
        c.noise.sigma_v = v;
    }
    if let Some(v) = o.threads {
        c.threads = Some(v);
    }
    if let Some(v) = &o.import_basis {
        c.geometry.import_basis = Some(v.clone());
    }
}

fn apply_sweep(c: &mut RunConfig, a: &SweepArgs) {
    if let Some(v) = a.f_start {
        c.sweep.f_start_hz = v;
    }
    if let Some(v) = a.f_end {
        c.sweep.f_end_hz = Some(v);
    }
    if let Some(v) = a.sweep_duration {
        c.sweep.duration_s = Some(v);
    }
    if let Some(v) = a.n_waypoints {
        c.sweep.n_waypoints = v;
    }
    if let Some(v) = a.rule {
        c.sweep.rule = v;
    }
    if let Some(v) = a.n_sweeps {
        c.sweep.n_sweeps = v;
    }
    if let Some(v) = &a.schedule {
        c.sweep.schedule_file = Some(v.clone());
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_common(&mut cfg, &cli.common);
    match cli.command {
        Command::Solve => commands::solve(cfg),
        Command::Simulate(a) => {
            apply_sweep(&mut cfg, &a.sweep);
            if let Some(v) = a.mode {
                cfg.simulate.mode = v;
            }
            if let Some(v) = a.e_init {
                cfg.simulate.e_init_k = v;
            }
            if let Some(v) = a.duration {
                cfg.simulate.duration_s = Some(v);
            }
            if let Some(v) = a.trace_stride {
                cfg.simulate.trace_stride = v;
            }
            if a.no_plot {
                cfg.simulate.plot = false;
            }
            commands::simulate(cfg)
        }
        Command::Sweep(a) => {
            apply_sweep(&mut cfg, &a);
            commands::sweep(cfg)
        }
        Command::Campaign(a) => {
            apply_sweep(&mut cfg, &a.sweep);
            if let Some(v) = a.seed {
                cfg.seed = Some(v);
            }
            if let Some(v) = a.n {
                cfg.campaign.n_samples = v;
            }
            if let Some(v) = a.temperature {
                cfg.campaign.temperature_k = v;
            }
            if a.no_noise {
                cfg.noise.sigma_v = 0.0;
            }
            commands::campaign(cfg)
        }
        Command::Analyze(a) => {
            if !a.report.is_empty() {
                cfg.analyze.reports = a.report;
            }
            if !a.frequencies.is_empty() {
                cfg.analyze.frequencies_hz = a.frequencies;
            }
            if !a.s0_values.is_empty() {
                cfg.analyze.s0_values_m = a.s0_values;
            }
            if !a.delta_s0_values.is_empty() {
                cfg.analyze.delta_s0_values_m = a.delta_s0_values;
            }
            if let Some(v) = a.seed {
                cfg.seed = Some(v);
            }
            if let Some(v) = a.sigma_samples {
                cfg.analyze.sigma_samples = v;
            }
            if let Some(v) = a.detuning_points {
                cfg.analyze.detuning_points = v;
            }
            commands::analyze(cfg)
        }
        Command::Plan => commands::plan(cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("trapcool: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
