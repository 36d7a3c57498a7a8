//! Run configuration: defaults, then `TGNET_SEED`, then a `key=value` file,
//! then command-line flags, each layer overriding the previous one.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use tgnet::model::{Ablation, Hyperparams};
use tgnet::search::{BeamConfig, PostMode};
use tgnet::train::TrainSchedule;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 1337;
pub const SEED_ENV: &str = "TGNET_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub hp: Hyperparams,
    #[serde(flatten)]
    pub schedule: TrainSchedule,
    pub seed: u64,
    pub ablation: Ablation,
    pub post_mode: PostMode,
    pub length_normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hp: Hyperparams::default(),
            schedule: TrainSchedule::default(),
            seed: DEFAULT_SEED,
            ablation: Ablation::Full,
            post_mode: PostMode::TrainDomain,
            length_normalize: false,
        }
    }
}

impl RunConfig {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.hp.beam_size,
            max_depth: self.hp.max_depth,
            length_normalize: self.length_normalize,
        }
    }
}

/// A resolved configuration and the keys that were set explicitly by the
/// file or a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub explicit: BTreeSet<String>,
}

/// Reads a `key=value` config file. Blank lines and lines starting with `#`
/// are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "config line {}: expected key=value, got {line:?}",
                i + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn literal(v: &str) -> Value {
    match v {
        "none" | "null" => Value::Null,
        _ => serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())),
    }
}

fn set(
    map: &mut Map<String, Value>,
    key: &str,
    value: Value,
    origin: &str,
) -> Result<(), CliError> {
    if !map.contains_key(key) {
        return Err(CliError::Usage(format!(
            "{origin}: unknown setting {key:?}"
        )));
    }
    map.insert(key.to_string(), value);
    Ok(())
}

/// Layers the configuration sources. `env_seed` is the value of
/// `TGNET_SEED`, `file` the optional config file, `flags` the settings given
/// on the command line as `(key, value)` pairs.
pub fn resolve(
    env_seed: Option<&str>,
    file: Option<&Path>,
    flags: &[(String, String)],
) -> Result<Resolved, CliError> {
    let mut map = match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        map.insert("seed".into(), Value::from(seed));
    }
    let mut explicit = BTreeSet::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("config file {}: {e}", path.display())))?;
        for (k, v) in parse_config_text(&text)? {
            set(&mut map, &k, literal(&v), &path.display().to_string())?;
            explicit.insert(k);
        }
    }
    for (k, v) in flags {
        set(&mut map, k, literal(v), "command line")?;
        explicit.insert(k.clone());
    }
    let config: RunConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::Usage(format!("invalid setting: {e}")))?;
    config
        .hp
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    config
        .schedule
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Resolved { config, explicit })
}
