//! The run configuration: every module config in one TOML file, plus
//! dotted-key overrides shared by the CLI and the ablation patches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::ingest::qc::QcRules;
use crate::ingest::split::SplitMode;
use crate::ingest::SPLITS_FILE;
use crate::model::ModelConfig;
use crate::preprocess::PreprocessConfig;
use crate::seqmodel::SeqModelConfig;
use crate::synthgen::SynthSpec;
use crate::training::{PretrainConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `manifest.csv` and `classes.txt`.
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    /// Split assignment; defaults to `splits.csv` under the data root.
    pub splits: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            splits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::SignerDependent,
            fractions: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the split, model initialization and training; `train.seed` is
    /// overwritten with it on resolution.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSpec,
    pub split: SplitConfig,
    pub qc: QcRules,
    pub preprocess: PreprocessConfig,
    pub backbone: BackboneConfig,
    pub seq: SeqModelConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Reads either a TOML run config or a `run.json` record written by a
    /// previous run (whose `config` field holds the resolved config).
    pub fn load_any(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            if !path.is_file() {
                return Err(Error::MissingFile(path.to_path_buf()));
            }
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut value: Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            return Self::from_json(value);
        }
        Self::load(path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    /// Copies the shared seed into place and checks every section and their consistency.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.preprocess.validate()?;
        self.backbone.validate()?;
        self.seq.validate()?;
        self.train.validate()?;
        self.model().validate()?;
        let f = self.split.fractions;
        if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidFractions(format!("split.fractions {f:?} must be positive and sum to 1")));
        }
        Ok(self)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            seq: self.seq.clone(),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.data_root.join("manifest.csv")
    }

    pub fn splits_path(&self) -> PathBuf {
        self.paths
            .splits
            .clone()
            .unwrap_or_else(|| self.paths.data_root.join(SPLITS_FILE))
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn from_json(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Value at a dotted key such as `seq.num_layers`, if the key exists.
    pub fn get(&self, key: &str) -> Option<Value> {
        self.to_json().pointer(&pointer(key)).cloned()
    }

    /// Sets one dotted key. The key must already exist in the schema.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let mut json = self.to_json();
        let slot = json
            .pointer_mut(&pointer(key))
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        *slot = value;
        *self = Self::from_json(json).map_err(|e| Error::Config(format!("setting {key}: {e}")))?;
        Ok(())
    }

    /// Applies a `key=value` override; the value is read as a TOML literal,
    /// falling back to a bare string.
    pub fn set_str(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        self.set(key, value)
    }
}

fn pointer(key: &str) -> String {
    format!("/{}", key.replace('.', "/"))
}

pub fn parse_literal(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).expect("TOML value converts"),
        Err(_) => Value::String(raw.to_string()),
    }
}
