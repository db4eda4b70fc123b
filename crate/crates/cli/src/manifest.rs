//! Run manifests: what was run, with which effective settings, producing
//! which files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::failure::{CmdResult, Failure};

pub const RUN_MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Versions of the file formats and generators the outputs depend on.
    pub formats: BTreeMap<String, String>,
    /// Parsed arguments after config merging; replayable as-is.
    pub invocation: Command,
    pub seed: Option<u64>,
    /// Fully resolved module settings, defaults included.
    pub effective: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

pub fn formats() -> BTreeMap<String, String> {
    [
        ("params", format!("SEGN v{}", caliper::segnet::PARAMS_FORMAT_VERSION)),
        ("dataset_manifest", caliper::phantom::MANIFEST_HEADER.to_owned()),
        ("images", "PGM P5 / PPM P6, 8-bit".to_owned()),
        ("prng", "SplitMix64".to_owned()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect()
}

impl RunManifest {
    pub fn new(invocation: Command, seed: Option<u64>, effective: serde_json::Value, outputs: Vec<PathBuf>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            formats: formats(),
            invocation,
            seed,
            effective,
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> CmdResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Failure::io(path, e))
    }

    pub fn read(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::runtime("InvalidManifest", format!("{}: {e}", path.display())))
    }
}
