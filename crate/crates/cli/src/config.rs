use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Values a config file may supply. Keys match the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub seqs: Option<String>,
    pub class: Option<String>,
    pub flow: Option<String>,
    pub k: Option<usize>,
    pub weights: Option<String>,
    pub iou_gate: Option<f64>,
    pub min_hits: Option<u32>,
    pub max_misses: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub similarity: Option<String>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}
