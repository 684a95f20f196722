//! TOML configuration of every subcommand.
//!
//! Each file is a flat table of keys; every key is optional and falls back to
//! the documented default. The fully resolved value is what goes into the run
//! manifest, so a manifest alone is enough to repeat a run.

use std::path::{Path, PathBuf};

use herald_core::analyzer::{GateConfig, DEFAULT_COINCIDENCE_WINDOW, DEFAULT_GATE_WIDTH};
use herald_core::classical_oracle::{SuiteCase, DEFAULT_ABS_TOL, DEFAULT_TRIALS};
use herald_core::events::EventFormat;
use herald_core::fock_model::{DarkClicks, DetectorModel, SourceParams};
use herald_core::pulse_sim::{
    Background, SimConfig, DEFAULT_DEAD_TIME, DEFAULT_JITTER_FWHM, DEFAULT_REP_RATE,
    DEFAULT_RESOLUTION,
};
use herald_core::uncertainty::DEFAULT_RESAMPLES;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Source parameters shared by `model-scan` and `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub lambda: f64,
    pub eta_t: f64,
    pub eta_s: f64,
    pub r: f64,
    pub eta_2: f64,
    pub eta_3: f64,
    pub detector: DetectorModel,
    pub dark_trigger: f64,
    pub dark_signal_2: f64,
    pub dark_signal_3: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            lambda: 0.03,
            eta_t: 0.02,
            eta_s: 0.345,
            r: 0.5,
            eta_2: 1.0,
            eta_3: 1.0,
            detector: DetectorModel::Binomial,
            dark_trigger: 0.0,
            dark_signal_2: 0.0,
            dark_signal_3: 0.0,
        }
    }
}

impl SourceConfig {
    pub fn params(&self) -> Result<SourceParams, CliError> {
        let p = SourceParams {
            lambda: self.lambda,
            eta_t: self.eta_t,
            eta_s: self.eta_s,
            r: self.r,
            t: 1.0 - self.r,
            eta_2: self.eta_2,
            eta_3: self.eta_3,
            dark: DarkClicks {
                trigger: self.dark_trigger,
                signal_2: self.dark_signal_2,
                signal_3: self.dark_signal_3,
            },
            detector: self.detector,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelScanConfig {
    /// Gain values; default 20 log-spaced points from 0.001 to 0.9.
    pub lambda: Vec<f64>,
    /// Signal-arm transmissions; default 20 points from 0.05 to 1.
    pub eta_s: Vec<f64>,
    pub eta_t: f64,
    pub r: f64,
    pub eta_2: f64,
    pub eta_3: f64,
    pub detector: DetectorModel,
    pub dark_trigger: f64,
    pub dark_signal_2: f64,
    pub dark_signal_3: f64,
}

impl Default for ModelScanConfig {
    fn default() -> Self {
        let s = SourceConfig::default();
        ModelScanConfig {
            lambda: log_grid(1e-3, 0.9, 20),
            eta_s: linear_grid(0.05, 1.0, 20),
            eta_t: s.eta_t,
            r: s.r,
            eta_2: s.eta_2,
            eta_3: s.eta_3,
            detector: s.detector,
            dark_trigger: 0.0,
            dark_signal_2: 0.0,
            dark_signal_3: 0.0,
        }
    }
}

impl ModelScanConfig {
    /// Base parameters; λ and η_s are overwritten per grid point.
    pub fn base(&self) -> Result<SourceParams, CliError> {
        SourceConfig {
            lambda: 0.0,
            eta_t: self.eta_t,
            eta_s: 1.0,
            r: self.r,
            eta_2: self.eta_2,
            eta_3: self.eta_3,
            detector: self.detector,
            dark_trigger: self.dark_trigger,
            dark_signal_2: self.dark_signal_2,
            dark_signal_3: self.dark_signal_3,
        }
        .params()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub lambda: f64,
    pub eta_t: f64,
    pub eta_s: f64,
    pub r: f64,
    pub eta_2: f64,
    pub eta_3: f64,
    pub detector: DetectorModel,
    pub dark_trigger: f64,
    pub dark_signal_2: f64,
    pub dark_signal_3: f64,
    pub rep_rate: f64,
    pub n_pulses: u64,
    /// Signal-arm background intensity relative to the PDC signal intensity.
    pub background_fraction: f64,
    /// Trigger-arm background relative to the signal-arm fraction (1 = equal intensity).
    pub trigger_background_share: f64,
    pub jitter_fwhm: f64,
    pub dead_time: f64,
    pub resolution: f64,
    pub format: EventFormat,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let s = SourceConfig::default();
        SimulateConfig {
            lambda: s.lambda,
            eta_t: s.eta_t,
            eta_s: s.eta_s,
            r: s.r,
            eta_2: s.eta_2,
            eta_3: s.eta_3,
            detector: s.detector,
            dark_trigger: 0.0,
            dark_signal_2: 0.0,
            dark_signal_3: 0.0,
            rep_rate: DEFAULT_REP_RATE,
            n_pulses: 100_000_000,
            background_fraction: 0.0,
            trigger_background_share: 1.0,
            jitter_fwhm: DEFAULT_JITTER_FWHM,
            dead_time: DEFAULT_DEAD_TIME,
            resolution: DEFAULT_RESOLUTION,
            format: EventFormat::Csv,
            seed: 0,
        }
    }
}

impl SimulateConfig {
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let source = SourceConfig {
            lambda: self.lambda,
            eta_t: self.eta_t,
            eta_s: self.eta_s,
            r: self.r,
            eta_2: self.eta_2,
            eta_3: self.eta_3,
            detector: self.detector,
            dark_trigger: self.dark_trigger,
            dark_signal_2: self.dark_signal_2,
            dark_signal_3: self.dark_signal_3,
        }
        .params()?;
        let cfg = SimConfig {
            source,
            rep_rate: self.rep_rate,
            n_pulses: self.n_pulses,
            background: Background::from_fraction(
                &source,
                self.background_fraction,
                self.trigger_background_share,
            )?,
            jitter_fwhm: self.jitter_fwhm,
            dead_time: self.dead_time,
            resolution: self.resolution,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub events: Option<PathBuf>,
    /// Run summary of the simulation; defaults to `<events stem>.summary.json` when present.
    pub sidecar: Option<PathBuf>,
    pub gate_width: f64,
    pub coincidence_window: f64,
    pub scan_start: Option<f64>,
    pub scan_stop: Option<f64>,
    pub scan_step: Option<f64>,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            events: None,
            sidecar: None,
            gate_width: DEFAULT_GATE_WIDTH,
            coincidence_window: DEFAULT_COINCIDENCE_WINDOW,
            scan_start: None,
            scan_stop: None,
            scan_step: None,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

impl AnalyzeConfig {
    pub fn gate(&self) -> Result<GateConfig, CliError> {
        let g = GateConfig {
            gate_width: self.gate_width,
            coincidence_window: self.coincidence_window,
            scan_start: self.scan_start,
            scan_stop: self.scan_stop,
            scan_step: self.scan_step,
            resamples: self.resamples,
            seed: self.seed,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Default sidecar location written by `simulate` next to an event file.
pub fn sidecar_for(events: &Path) -> PathBuf {
    let stem = events
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    events.with_file_name(format!("{stem}.summary.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalCheckConfig {
    pub n_trials: u64,
    pub abs_tol: f64,
    pub seed: u64,
    /// Prepend the six built-in classical sources.
    pub default_suite: bool,
    pub case: Vec<SuiteCase>,
}

impl Default for ClassicalCheckConfig {
    fn default() -> Self {
        ClassicalCheckConfig {
            n_trials: DEFAULT_TRIALS,
            abs_tol: DEFAULT_ABS_TOL,
            seed: 0,
            default_suite: true,
            case: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    /// Signal singles rate `R₂+R₃`, counts per second.
    pub signal_singles_rate: Option<f64>,
    /// Simulation run summary to take the singles rate from instead.
    pub summary: Option<PathBuf>,
    pub eta_s: f64,
    pub rep_rate: f64,
    pub f: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        GainConfig {
            signal_singles_rate: None,
            summary: None,
            eta_s: 0.345,
            rep_rate: DEFAULT_REP_RATE,
            f: 0.0,
        }
    }
}
