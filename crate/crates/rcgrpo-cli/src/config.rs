//! Config-file loading with defaults < file < flags precedence, and
//! resolved-config archiving.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rcgrpo::policy::ConditioningScheme;
use rcgrpo::rctp::{CurationConfig, OptimConfig, ALL_FAILURE_MODES};
use rcgrpo::rl::{RLConfig, RLMode};

/// Partial stage-1 settings as read from a TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1File {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub temperature: Option<f64>,
    pub tol: Option<f64>,
    pub conditioning: Option<ConditioningScheme>,
    pub n_expert: Option<usize>,
    pub n_failure: Option<usize>,
    pub split_ratio: Option<f64>,
}

/// Partial stage-2 settings as read from a TOML config file; field names
/// mirror the run configuration exactly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlFile {
    pub mode: Option<RLMode>,
    pub group_size: Option<usize>,
    pub p: Option<f64>,
    pub beta: Option<f64>,
    pub eps_clip: Option<f64>,
    pub eps_stab: Option<f64>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub batch: Option<usize>,
    pub conditioning: Option<ConditioningScheme>,
}

pub fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Fully resolved stage-1 configuration, archived next to outputs.
#[derive(Debug, Serialize)]
pub struct ResolvedStage1 {
    pub tasks: PathBuf,
    pub out: PathBuf,
    pub optim: OptimConfig,
    pub curation: CurationConfig,
}

pub fn resolve_stage1(
    file: Stage1File,
    seed: Option<u64>,
    lr: Option<f64>,
    epochs: Option<usize>,
) -> (OptimConfig, CurationConfig) {
    let mut optim = OptimConfig::default();
    let mut curation = CurationConfig {
        failure_modes: ALL_FAILURE_MODES.to_vec(),
        ..Default::default()
    };
    if let Some(v) = file.lr {
        optim.lr = v;
    }
    if let Some(v) = file.epochs {
        optim.epochs = v;
    }
    if let Some(v) = file.batch {
        optim.batch = v;
    }
    if let Some(v) = file.temperature {
        optim.temperature = v;
    }
    if let Some(v) = file.tol {
        optim.tol = v;
    }
    if let Some(v) = file.conditioning {
        optim.conditioning = v;
    }
    if let Some(v) = file.seed {
        optim.seed = v;
        curation.seed = v;
    }
    if let Some(v) = file.n_expert {
        curation.n_expert = v;
    }
    if let Some(v) = file.n_failure {
        curation.n_failure = v;
    }
    if let Some(v) = file.split_ratio {
        curation.split_ratio = v;
    }
    // command-line flags take precedence over the file
    if let Some(v) = seed {
        optim.seed = v;
        curation.seed = v;
    }
    if let Some(v) = lr {
        optim.lr = v;
    }
    if let Some(v) = epochs {
        optim.epochs = v;
    }
    (optim, curation)
}

pub struct RlFlags {
    pub mode: Option<RLMode>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub group_size: Option<usize>,
    pub p: Option<f64>,
    pub beta: Option<f64>,
    pub clip: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
}

pub fn resolve_rl(file: RlFile, flags: RlFlags) -> RLConfig {
    let mut cfg = RLConfig::default();
    if let Some(v) = file.mode {
        cfg.mode = v;
    }
    if let Some(v) = file.group_size {
        cfg.group_size = v;
    }
    if let Some(v) = file.p {
        cfg.p = v;
    }
    if let Some(v) = file.beta {
        cfg.beta = v;
    }
    if let Some(v) = file.eps_clip {
        cfg.eps_clip = v;
    }
    if let Some(v) = file.eps_stab {
        cfg.eps_stab = v;
    }
    if let Some(v) = file.lr {
        cfg.lr = v;
    }
    if let Some(v) = file.steps {
        cfg.steps = v;
    }
    if let Some(v) = file.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.batch {
        cfg.batch = v;
    }
    if let Some(v) = file.conditioning {
        cfg.conditioning = v;
    }
    if let Some(v) = flags.mode {
        cfg.mode = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.steps {
        cfg.steps = v;
    }
    if let Some(v) = flags.group_size {
        cfg.group_size = v;
    }
    if let Some(v) = flags.p {
        cfg.p = v;
    }
    if let Some(v) = flags.beta {
        cfg.beta = v;
    }
    if let Some(v) = flags.clip {
        cfg.eps_clip = v;
    }
    if let Some(v) = flags.lr {
        cfg.lr = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch = v;
    }
    cfg
}

/// Archive a resolved config as TOML next to the run outputs.
pub fn archive<T: Serialize>(out_dir: &Path, resolved: &T) -> Result<()> {
    let text = toml::to_string_pretty(resolved).context("serializing resolved config")?;
    std::fs::write(out_dir.join("config.toml"), text)?;
    Ok(())
}

/// Default output root: `RCGRPO_OUT` or `./runs`.
pub fn out_root() -> PathBuf {
    std::env::var_os("RCGRPO_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
