//! Run configuration: the training hyperparameters, ablation mode, and
//! the TOML config file the CLI consumes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedder::LlmConfig;
use crate::error::{Error, Result};
use crate::synthetic::SyntheticSpec;

/// Ablation ladder: mutual co-occurrence flow, directed flow, directed
/// flow with probability bias, and the latter with description-based
/// embeddings.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelMode {
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "DI")]
    Di,
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "CE_des")]
    CeDes,
}

impl ModelMode {
    pub const ALL: [ModelMode; 4] = [ModelMode::Mi, ModelMode::Di, ModelMode::Ce, ModelMode::CeDes];

    pub fn uses_bias(self) -> bool {
        matches!(self, ModelMode::Ce | ModelMode::CeDes)
    }

    pub fn uses_descriptions(self) -> bool {
        matches!(self, ModelMode::CeDes)
    }

    pub fn symmetric(self) -> bool {
        matches!(self, ModelMode::Mi)
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelMode::Mi => "MI",
            ModelMode::Di => "DI",
            ModelMode::Ce => "CE",
            ModelMode::CeDes => "CE_des",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MI" | "mi" => Ok(ModelMode::Mi),
            "DI" | "di" => Ok(ModelMode::Di),
            "CE" | "ce" => Ok(ModelMode::Ce),
            "CE_des" | "ce_des" | "CE+des" | "ce+des" => Ok(ModelMode::CeDes),
            other => Err(Error::config(format!("unknown model mode {other}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// linear decay to zero over the planned optimizer steps
    pub linear_decay: bool,
    pub dropout: f64,
    pub d: usize,
    pub heads: usize,
    pub bins: usize,
    pub graph_layers: usize,
    pub doc_blocks: usize,
    pub ffn_hidden: usize,
    pub chunk_len: usize,
    pub overlap: usize,
    pub max_tokens: usize,
    pub rare_threshold: usize,
    pub mode: ModelMode,
    pub seed: u64,
    pub patience: usize,
    /// classification threshold for F1 metrics
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 1,
            grad_accum: 16,
            lr: 1e-3,
            weight_decay: 0.01,
            linear_decay: true,
            dropout: 0.1,
            d: 64,
            heads: 4,
            bins: 10,
            graph_layers: 1,
            doc_blocks: 1,
            ffn_hidden: 128,
            chunk_len: 64,
            overlap: 31,
            max_tokens: 512,
            rare_threshold: 10,
            mode: ModelMode::Ce,
            seed: 0,
            patience: 3,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::config("batch_size and grad_accum must be positive"));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::config("d must be a positive multiple of heads"));
        }
        if self.bins == 0 {
            return Err(Error::config("bins must be positive"));
        }
        if self.overlap >= self.chunk_len {
            return Err(Error::config("overlap must be smaller than chunk_len"));
        }
        if self.rare_threshold == 0 {
            return Err(Error::config("rare_threshold must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("classification threshold must be in (0,1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0,1)"));
        }
        Ok(())
    }
}

/// Top-level TOML config file: `[train]`, optional `[synthetic]`, and
/// optional `[llm]` tables.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synthetic: Option<SyntheticSpec>,
    pub llm: Option<LlmConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&raw)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let raw = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serialize config: {e}")))?;
        crate::nn::checkpoint::write_atomic(path, raw.as_bytes())
    }
}
