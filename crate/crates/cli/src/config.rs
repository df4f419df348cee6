use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dcmtl_core::corpus::Tokenization;
use dcmtl_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

/// Contents of a `--config` TOML file. Every key is optional; command-line
/// flags override file values.
///
/// ```toml
/// train = "data/train.conll"
/// dev = "data/test_iv.conll"
/// model_out = "model.json"
/// trace_out = "trace.jsonl"
/// tokenization = "char"
///
/// [model]
/// topology = "dcmtl"
/// epochs = 5
/// seed = 7
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub tokenization: Tokenization,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
