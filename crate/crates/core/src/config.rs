//! Run configuration: JSON file merged over defaults, dotted overrides,
//! validation and content hashing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::{EventConfig, ExSy};
use crate::losses::LossConfig;
use crate::nets::{StudentConfig, TeacherConfig};
use crate::train::{EvalSplit, OptimConfig, DEFAULT_INIT_RATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub root: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: "data".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetsConfig {
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    /// Target firing rate for the initial weight rescaling; `null` keeps
    /// the plain Kaiming draw.
    pub init_rate: Option<f64>,
}

impl Default for NetsConfig {
    fn default() -> Self {
        Self {
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            init_rate: Some(DEFAULT_INIT_RATE),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: EvalSplit,
    /// File name of the JSON report inside the run directory.
    pub report: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: EvalSplit::Test,
            report: "report.json".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub events: EventConfig,
    pub window: ExSy,
    pub nets: NetsConfig,
    pub optim: OptimConfig,
    pub losses: LossConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            events: EventConfig::default(),
            window: ExSy::default(),
            nets: NetsConfig::default(),
            optim: OptimConfig::default(),
            losses: LossConfig::default(),
            eval: EvalConfig::default(),
            output_dir: "runs".into(),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `path` (dot separated) to `raw`, parsed as JSON when possible and
/// as a string otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut keys = path.split('.').peekable();
    let mut node = root;
    while let Some(key) = keys.next() {
        if key.is_empty() {
            return Err(Error::Config(format!("override `{path}` has an empty key")));
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override `{path}`: `{key}` is not inside an object"
            ))
        })?;
        if keys.peek().is_none() {
            if !obj.contains_key(key) {
                return Err(Error::Config(format!(
                    "override `{path}`: unknown key `{key}`"
                )));
            }
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(key)
            .ok_or_else(|| Error::Config(format!("override `{path}`: unknown key `{key}`")))?;
    }
    Err(Error::Config("empty override path".into()))
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))
}

impl RunConfig {
    /// Defaults, then `file` (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("default config serializes");
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: invalid JSON: {e}", path.display())))?;
            if !patch.is_object() {
                return Err(Error::Config(format!(
                    "{}: config must be a JSON object",
                    path.display()
                )));
            }
            merge(&mut value, patch);
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut value, &k, &v)?;
        }
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.events.validate()?;
        self.window.validate()?;
        self.nets.teacher.validate()?;
        self.nets.student.validate()?;
        self.optim.validate()?;
        self.losses.schedule.validate()?;
        if let Some(r) = self.nets.init_rate {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!(
                    "nets.init_rate must be in (0, 1), got {r}"
                )));
            }
        }
        if self.eval.report.is_empty() || self.eval.report.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "eval.report must be a plain file name, got `{}`",
                self.eval.report
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical JSON of the config and `extra` strings.
    pub fn digest(&self, extra: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        for e in extra {
            h.update([0u8]);
            h.update(e.as_bytes());
        }
        hex::encode(h.finalize())
    }
}
