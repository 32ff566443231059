//! Run configuration: a flat `key = value` text file plus `--set` overrides.
//!
//! Every experiment is described by one [`RunConfig`]. The file format is
//! deliberately plain so sweep scripts can generate configs with `printf`:
//! one `key = value` pair per line, `#` starts a comment, blank lines are
//! skipped. Unknown keys are rejected rather than ignored, which catches
//! typos before a multi-hour run silently trains with a default.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::neighbors::CbowConfig;
use crate::{Error, Result};

/// Training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Alternating soft-embedding augmentation with soft labels.
    Ea,
    /// Plain training, no augmentation.
    Baseline,
    /// Hard replacement of selected tokens by their nearest neighbor.
    Rep,
    /// Fused input embeddings but plain hard labels.
    NoSoftLabel,
    /// Augmentation restricted to response positions.
    NoHistoryAug,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Ea,
        Mode::Baseline,
        Mode::Rep,
        Mode::NoSoftLabel,
        Mode::NoHistoryAug,
    ];

    /// Whether this mode consults the neighbor model. Augmenting modes
    /// alternate augmented and plain optimizer steps; `Baseline` never
    /// augments.
    pub fn augments(self) -> bool {
        !matches!(self, Mode::Baseline)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ea => "ea",
            Mode::Baseline => "baseline",
            Mode::Rep => "rep",
            Mode::NoSoftLabel => "no-soft-label",
            Mode::NoHistoryAug => "no-history-aug",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "ea" => Ok(Mode::Ea),
            "baseline" => Ok(Mode::Baseline),
            "rep" => Ok(Mode::Rep),
            "no-soft-label" => Ok(Mode::NoSoftLabel),
            "no-history-aug" => Ok(Mode::NoHistoryAug),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected ea, baseline, rep, no-soft-label, or no-history-aug)"
            ))),
        }
    }
}

/// Hyperparameters of the neighbor (CBOW) model, set via `neighbor.*` keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        let base = CbowConfig::default();
        NeighborConfig {
            dim: base.dim,
            window: base.window,
            epochs: base.epochs,
            negatives: base.negatives,
        }
    }
}

impl NeighborConfig {
    pub fn to_cbow(self) -> CbowConfig {
        CbowConfig {
            dim: self.dim,
            window: self.window,
            epochs: self.epochs,
            negatives: self.negatives,
            ..CbowConfig::default()
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Augmentation ratio: per-position selection probability.
    pub rho: f64,
    /// Neighbor similarity threshold.
    pub tau: f64,
    /// Neighbors kept per query.
    pub k: usize,
    /// Embedding dimension.
    pub d: usize,
    /// GRU hidden size per direction.
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub beam: usize,
    pub max_len: usize,
    /// Tokens rarer than this in the train split map to `<unk>`.
    pub min_count: usize,
    pub neighbor: NeighborConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rho: 0.4,
            tau: 0.4,
            k: 5,
            d: 300,
            hidden: 300,
            lr: 1e-3,
            batch_size: 32,
            epochs: 30,
            seed: 42,
            mode: Mode::Ea,
            beam: 3,
            max_len: 20,
            min_count: 1,
            neighbor: NeighborConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for `{key}`: `{value}`")))
}

impl RunConfig {
    /// Set one key from its textual value. Shared by the file parser and
    /// `--set` overrides so both accept exactly the same keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "rho" => self.rho = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "d" => self.d = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mode" => self.mode = value.parse()?,
            "beam" => self.beam = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "min_count" => self.min_count = parse_value(key, value)?,
            "neighbor.dim" => self.neighbor.dim = parse_value(key, value)?,
            "neighbor.window" => self.neighbor.window = parse_value(key, value)?,
            "neighbor.epochs" => self.neighbor.epochs = parse_value(key, value)?,
            "neighbor.negatives" => self.neighbor.negatives = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must be in [0, 1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.d == 0 || self.hidden == 0 {
            return Err(Error::Config("d and hidden must be nonzero".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.neighbor.dim == 0 || self.neighbor.window == 0 {
            return Err(Error::Config("neighbor.dim and neighbor.window must be nonzero".into()));
        }
        if self.neighbor.negatives == 0 {
            return Err(Error::Config("neighbor.negatives must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parse a config file. Missing file is a config error (exit code 2), since
/// the path came from the command line.
pub fn parse_config_file(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}: line {}: expected key = value", path.display(), idx + 1))
        })?;
        cfg.set(key.trim(), value.trim())
            .map_err(|e| Error::Config(format!("{}: line {}: {e}", path.display(), idx + 1)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Apply `--set key=value` overrides on top of a parsed config.
pub fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()
}
