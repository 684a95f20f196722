//! The `herald` command line: model scans, simulation, gated analysis,
//! classical-bound checks and gain estimation, each leaving a run manifest.

pub mod config;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use herald_core::analyzer::{analyze, write_gate_scan_csv};
use herald_core::classical_oracle::{default_suite, verify_classical_suite, SuiteReport};
use herald_core::events::{load_events, write_events, EventFormat};
use herald_core::fock_model::{estimate_lambda, scan_b, write_scan_csv, GainEstimate};
use herald_core::pulse_sim::{simulate, RunSummary};
use serde::Serialize;

use config::{AnalyzeConfig, ClassicalCheckConfig, GainConfig, ModelScanConfig, SimulateConfig};
use manifest::RunManifest;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    /// A classical case violated the bound, or a replay did not reproduce its outputs.
    #[error("check failed: {0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Violation(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<herald_core::Error> for CliError {
    fn from(e: herald_core::Error) -> Self {
        use herald_core::Error as E;
        match e {
            E::Domain(_) | E::EstimationOutOfRange { .. } | E::EmptySuite => {
                CliError::Validation(e.to_string())
            }
            E::Io { .. } | E::Format { .. } | E::Truncated { .. } | E::Json(_) => {
                CliError::Io(e.to_string())
            }
        }
    }
}

fn io_context(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "herald",
    version,
    about = "Heralded single-photon source statistics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "herald-out")]
    pub out: PathBuf,
    /// Event file format written by `simulate` (csv or binary).
    #[arg(long, global = true)]
    pub format: Option<EventFormat>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Witness grid over gain and signal transmission.
    ModelScan,
    /// Pulse-by-pulse simulation writing an event file and run summary.
    Simulate,
    /// Gate scan and nonclassicality summary of an event file.
    Analyze {
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Checks the classical bound on a suite of intensity models.
    ClassicalCheck,
    /// Parametric gain from the signal singles rate.
    EstimateGain {
        /// Signal singles rate R₂+R₃ in counts per second.
        #[arg(long)]
        rate: Option<f64>,
        /// Simulation run summary providing the singles rate.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        eta_s: Option<f64>,
        #[arg(long)]
        rep_rate: Option<f64>,
        /// Background intensity relative to the PDC signal.
        #[arg(long = "f")]
        f: Option<f64>,
    },
    /// Re-runs the subcommand recorded in a manifest and compares outputs byte for byte.
    Replay { manifest: PathBuf },
}

/// Files written by one subcommand, relative to the output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_context(dir))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(io_context(&path))
    }
}

/// What a finished subcommand hands back for the manifest and for callers.
pub struct RunRecord {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

/// Prints a progress line; a closed stdout is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    fs::canonicalize(path).map_err(io_context(path))
}

pub fn run(cli: &Cli) -> Result<RunRecord, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::ModelScan => {
            let cfg: ModelScanConfig = config::load(config)?;
            cmd_model_scan(&cfg, &cli.out)
        }
        Command::Simulate => {
            let mut cfg: SimulateConfig = config::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(format) = cli.format {
                cfg.format = format;
            }
            cmd_simulate(&cfg, &cli.out)
        }
        Command::Analyze { events, sidecar } => {
            let mut cfg: AnalyzeConfig = config::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if events.is_some() {
                cfg.events = events.clone();
            }
            if sidecar.is_some() {
                cfg.sidecar = sidecar.clone();
            }
            let events = cfg.events.as_deref().ok_or_else(|| {
                CliError::Validation("no event file given (--events or `events` key)".into())
            })?;
            cfg.events = Some(absolute(events)?);
            cfg.sidecar = match cfg.sidecar.as_deref() {
                Some(s) => Some(absolute(s)?),
                None => {
                    let guess = config::sidecar_for(cfg.events.as_deref().expect("set above"));
                    guess.exists().then_some(guess)
                }
            };
            cmd_analyze(&cfg, &cli.out)
        }
        Command::ClassicalCheck => {
            let mut cfg: ClassicalCheckConfig = config::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cmd_classical_check(&cfg, &cli.out)
        }
        Command::EstimateGain {
            rate,
            summary,
            eta_s,
            rep_rate,
            f,
        } => {
            let mut cfg: GainConfig = config::load(config)?;
            cfg.signal_singles_rate = rate.or(cfg.signal_singles_rate);
            cfg.summary = summary.clone().or(cfg.summary);
            cfg.eta_s = eta_s.unwrap_or(cfg.eta_s);
            cfg.rep_rate = rep_rate.unwrap_or(cfg.rep_rate);
            cfg.f = f.unwrap_or(cfg.f);
            if let Some(s) = cfg.summary.as_deref() {
                cfg.summary = Some(absolute(s)?);
            }
            cmd_estimate_gain(&cfg, &cli.out)
        }
        Command::Replay { manifest } => manifest::replay(manifest, &cli.out),
    }
}

fn finish<C: Serialize>(
    subcommand: &str,
    config: &C,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    mut outputs: Outputs,
    started: Instant,
) -> Result<RunRecord, CliError> {
    let manifest = RunManifest {
        tool: "herald".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        config: serde_json::to_value(config).map_err(|e| CliError::Io(e.to_string()))?,
        seed,
        inputs,
        outputs: outputs
            .files
            .iter()
            .cloned()
            .chain([MANIFEST_FILE.to_string()])
            .collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    outputs.write_json(MANIFEST_FILE, &manifest)?;
    Ok(RunRecord {
        manifest,
        out_dir: outputs.dir,
    })
}

pub fn cmd_model_scan(cfg: &ModelScanConfig, out: &Path) -> Result<RunRecord, CliError> {
    let started = Instant::now();
    let rows = scan_b(&cfg.base()?, &cfg.lambda, &cfg.eta_s)?;
    let mut outputs = Outputs::new(out)?;
    let path = outputs.path("model_scan.csv");
    let file = fs::File::create(&path).map_err(io_context(&path))?;
    write_scan_csv(&rows, file).map_err(io_context(&path))?;
    say!("model-scan: {} rows -> {}", rows.len(), path.display());
    finish("model-scan", cfg, None, Vec::new(), outputs, started)
}

pub fn cmd_simulate(cfg: &SimulateConfig, out: &Path) -> Result<RunRecord, CliError> {
    let started = Instant::now();
    let sim = simulate(&cfg.sim_config()?)?;
    let mut outputs = Outputs::new(out)?;
    let events = outputs.path(&format!("events.{}", cfg.format.extension()));
    write_events(&sim.records, &events, cfg.format)?;
    outputs.write_json("events.summary.json", &sim.summary)?;
    say!(
        "{}",
        serde_json::to_string_pretty(&sim.summary).map_err(|e| CliError::Io(e.to_string()))?
    );
    finish(
        "simulate",
        cfg,
        Some(cfg.seed),
        Vec::new(),
        outputs,
        started,
    )
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_context(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn cmd_analyze(cfg: &AnalyzeConfig, out: &Path) -> Result<RunRecord, CliError> {
    let started = Instant::now();
    let gate = cfg.gate()?;
    let events = cfg
        .events
        .as_deref()
        .ok_or_else(|| CliError::Validation("no event file given".into()))?;
    let records = load_events(events)?;
    let run: Option<RunSummary> = cfg.sidecar.as_deref().map(read_json).transpose()?;
    let analysis = analyze(&records, &gate, run.as_ref())?;

    let mut outputs = Outputs::new(out)?;
    let path = outputs.path("gate_scan.csv");
    let file = fs::File::create(&path).map_err(io_context(&path))?;
    write_gate_scan_csv(&analysis.rows, file).map_err(io_context(&path))?;
    outputs.write_json("analysis.json", &analysis.summary)?;

    let s = &analysis.summary;
    say!("analyze: {} records, {} gates", s.n_records, s.n_gates);
    if let Some(p) = &s.peak {
        say!(
            "peak gate {} ps: N1={} N12={} N13={} N123={} B_norm={:?} sigma_B={:?}",
            p.gate_center_ps,
            p.n1,
            p.n12,
            p.n13,
            p.n123,
            p.report.b_norm,
            p.report.sigma_b
        );
    }
    let mut inputs = vec![events.to_path_buf()];
    inputs.extend(cfg.sidecar.clone());
    finish("analyze", cfg, Some(cfg.seed), inputs, outputs, started)
}

pub fn classical_report(cfg: &ClassicalCheckConfig) -> Result<SuiteReport, CliError> {
    let mut suite = if cfg.default_suite {
        default_suite()
    } else {
        Vec::new()
    };
    suite.extend(cfg.case.iter().cloned());
    Ok(verify_classical_suite(
        &suite,
        cfg.n_trials,
        cfg.seed,
        cfg.abs_tol,
    )?)
}

pub fn cmd_classical_check(cfg: &ClassicalCheckConfig, out: &Path) -> Result<RunRecord, CliError> {
    let started = Instant::now();
    let report = classical_report(cfg)?;
    let mut outputs = Outputs::new(out)?;
    outputs.write_json("classical_report.json", &report)?;
    for case in &report.cases {
        say!(
            "{:<28} {}  {}",
            case.name,
            if case.passed { "pass" } else { "FAIL" },
            case.detail
        );
    }
    let record = finish(
        "classical-check",
        cfg,
        Some(cfg.seed),
        Vec::new(),
        outputs,
        started,
    )?;
    if report.passed {
        Ok(record)
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::Violation(format!(
            "classical bound violated by: {}",
            names.join(", ")
        )))
    }
}

/// Gain estimate for a configuration; the singles rate comes from the
/// explicit value or from a simulation run summary.
pub fn gain_estimate(cfg: &GainConfig) -> Result<GainEstimate, CliError> {
    let (rate, rep_rate) = match (cfg.signal_singles_rate, cfg.summary.as_deref()) {
        (Some(rate), None) => (rate, cfg.rep_rate),
        (None, Some(path)) => {
            let run: RunSummary = read_json(path)?;
            let time = run.n_pulses as f64 / run.config.rep_rate;
            ((run.n2 + run.n3) as f64 / time, run.config.rep_rate)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Validation(
                "give either a rate or a summary, not both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Validation(
                "no signal singles rate given (--rate or --summary)".into(),
            ))
        }
    };
    Ok(estimate_lambda(rate, cfg.eta_s, rep_rate, cfg.f)?)
}

pub fn cmd_estimate_gain(cfg: &GainConfig, out: &Path) -> Result<RunRecord, CliError> {
    let started = Instant::now();
    let estimate = gain_estimate(cfg)?;
    let mut outputs = Outputs::new(out)?;
    outputs.write_json("gain.json", &estimate)?;
    say!(
        "{}",
        serde_json::to_string_pretty(&estimate).map_err(|e| CliError::Io(e.to_string()))?
    );
    let inputs = cfg.summary.iter().cloned().collect();
    finish("estimate-gain", cfg, None, inputs, outputs, started)
}
