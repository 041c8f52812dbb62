//! Per-stage manifests: enough to rerun the stage and check its outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use persona_core::corpus::sha256_hex;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub stage: &'a str,
    pub dataset: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<&'a str>,
    pub config: &'a RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub created_unix: u64,
}

pub fn digest(path: &Path, root: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let shown = path.strip_prefix(root).unwrap_or(path);
    Ok(FileDigest {
        path: shown.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn write(
    dir: &Path,
    stage: &str,
    scenario: Option<&str>,
    config: &RunConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let root = &config.output_dir;
    let manifest = Manifest {
        tool: "persona",
        version: env!("CARGO_PKG_VERSION"),
        stage,
        dataset: &config.dataset,
        scenario,
        config,
        inputs: inputs
            .iter()
            .map(|p| digest(p, root))
            .collect::<Result<_, _>>()?,
        outputs: outputs
            .iter()
            .map(|p| digest(p, root))
            .collect::<Result<_, _>>()?,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    let path = dir.join(format!("manifest.{stage}.json"));
    std::fs::write(&path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}
