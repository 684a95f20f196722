use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{
    AnalyzeConfig, ClassicalCheckConfig, GainConfig, ModelScanConfig, SimulateConfig,
};
use crate::{CliError, RunRecord, MANIFEST_FILE};

/// Record of one subcommand run with every default materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    /// File names inside the output directory, the manifest itself last.
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn config<T: DeserializeOwned>(&self) -> Result<T, CliError> {
        serde_json::from_value(self.config.clone()).map_err(|e| {
            CliError::Validation(format!("manifest config for {}: {e}", self.subcommand))
        })
    }
}

/// Re-runs a manifest into `out` and checks that every output except the
/// manifest matches the original next to the manifest byte for byte.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<RunRecord, CliError> {
    let original = RunManifest::load(manifest_path)?;
    let original_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let same_dir = fs::canonicalize(original_dir).ok() == fs::canonicalize(out).ok();
    if same_dir {
        return Err(CliError::Validation(
            "replay output directory must differ from the original".into(),
        ));
    }

    let record = match original.subcommand.as_str() {
        "model-scan" => crate::cmd_model_scan(&original.config::<ModelScanConfig>()?, out)?,
        "simulate" => crate::cmd_simulate(&original.config::<SimulateConfig>()?, out)?,
        "analyze" => crate::cmd_analyze(&original.config::<AnalyzeConfig>()?, out)?,
        "classical-check" => {
            match crate::cmd_classical_check(&original.config::<ClassicalCheckConfig>()?, out) {
                // a violating suite still reproduces its report
                Ok(r) => r,
                Err(CliError::Violation(_)) => RunRecord {
                    manifest: RunManifest::load(&out.join(MANIFEST_FILE))?,
                    out_dir: out.to_path_buf(),
                },
                Err(e) => return Err(e),
            }
        }
        "estimate-gain" => crate::cmd_estimate_gain(&original.config::<GainConfig>()?, out)?,
        other => {
            return Err(CliError::Validation(format!(
                "unknown subcommand '{other}' in manifest"
            )))
        }
    };

    let mut mismatched = Vec::new();
    for name in original.outputs.iter().filter(|n| *n != MANIFEST_FILE) {
        let a =
            fs::read(original_dir.join(name)).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        let b = fs::read(out.join(name)).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        if a != b {
            mismatched.push(name.as_str());
        }
    }
    if !mismatched.is_empty() {
        return Err(CliError::Violation(format!(
            "replay differs in {}",
            mismatched.join(", ")
        )));
    }
    {
        use std::io::Write as _;
        let _ = writeln!(
            std::io::stdout(),
            "replay: {} outputs reproduced",
            original.outputs.len() - 1
        );
    }
    Ok(record)
}
