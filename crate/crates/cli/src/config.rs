//! Run configuration: a flat `key = value` file with dotted keys, overridden
//! by command-line flags of the same names (`--model.hidden 64`). Flags win.
//! Unknown keys are rejected up front.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use han_core::{Error, Result};

/// Every key the tool understands.
pub const KNOWN_KEYS: &[&str] = &[
    // model structure
    "model.regions_per_side",
    "model.feature_dim",
    "model.hidden",
    "model.layers",
    "model.skip",
    "model.frames",
    "model.classes",
    "model.uniform_attention",
    // training
    "train.rho",
    "train.epsilon",
    "train.dropout",
    "train.clip_norm",
    "train.batch_size",
    "train.epochs",
    "train.seed",
    "train.threads",
    "train.manifest",
    "train.labels",
    "train.eval_manifest",
    "train.eval_labels",
    "train.checkpoint_out",
    "train.metrics_out",
    // dataset generation
    "gen.out_dir",
    "gen.samples_per_class",
    "gen.sub_action_length",
    "gen.noise_sigma",
    "gen.policy",
    "gen.seed",
    // evaluation
    "eval.checkpoint",
    "eval.manifest",
    "eval.labels",
    "eval.frames",
    "eval.out",
    // attention dump
    "dump.checkpoint",
    "dump.manifest",
    "dump.labels",
    "dump.sample",
    "dump.out",
    // gradient self-check
    "gradcheck.seed",
    "gradcheck.step",
    "gradcheck.tolerance",
    "gradcheck.corrupt",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown configuration key `{key}`")))
    }
}

impl RunConfig {
    /// Parses a config file: one `key = value` per line, `#` starts a
    /// comment, blank lines ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = RunConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    line_no + 1
                ))
            })?;
            let key = key.trim();
            check_key(key)?;
            config.values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("key `{key}`: `{raw}` is not a valid {kind}"))
            }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse(key, "integer")?.unwrap_or(default))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.parse(key, "integer")?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parse(key, "integer")?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse(key, "number")?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self.parse(key, "boolean (true/false)")?.unwrap_or(default))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// `clip_norm` accepts a positive number or `none`/`off` to disable.
    pub fn clip_norm(&self) -> Result<Option<f64>> {
        match self.get("train.clip_norm") {
            None => Ok(Some(5.0)),
            Some("none") | Some("off") => Ok(None),
            Some(raw) => raw.parse::<f64>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "key `train.clip_norm`: `{raw}` is not a number or `none`"
                ))
            }),
        }
    }

    /// Applies command-line overrides: `--key value` or `--key=value`.
    /// `--config <path>` must already have been consumed by the caller.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let stripped = arg.strip_prefix("--").ok_or_else(|| {
                Error::Config(format!("expected a `--key` flag, got `{arg}`"))
            })?;
            if let Some((key, value)) = stripped.split_once('=') {
                self.set(key, value)?;
                i += 1;
            } else {
                let value = args.get(i + 1).ok_or_else(|| {
                    Error::Config(format!("flag `--{stripped}` is missing a value"))
                })?;
                self.set(stripped, value)?;
                i += 2;
            }
        }
        Ok(())
    }
}
