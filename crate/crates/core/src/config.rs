//! Run configuration: one JSON document validated against the schema in
//! `schema/run_config.schema.json`, then against cross-field rules. Its
//! SHA-256 over the canonical JSON form (output directory excluded) is
//! stamped into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{CameraModel, EgomotionNoise};
use crate::error::{Error, Result};
use crate::memory::{ModelConfig, TrainConfig};
use crate::policy::PolicyConfig;
use crate::rng::{derive_seed, stream};

pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    /// Leading fraction of scene indices used for training, rounded to
    /// the nearest count.
    pub train_fraction: f64,
    pub num_objects: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 120,
            train_fraction: 0.7,
            num_objects: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub views: usize,
    /// Initial cluster count of oversegment-and-merge.
    pub overseg_k: usize,
    /// Egomotion noise used by `eval` unless overridden on the command line.
    pub noise: EgomotionNoise,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            views: 4,
            overseg_k: 8,
            noise: EgomotionNoise::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub camera: CameraModel,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
    /// Where artifacts go. Not part of the config hash.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            camera: CameraModel::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

/// Check a JSON document against the published schema, listing every
/// violation with its location.
pub fn check_schema(doc: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(RUN_CONFIG_SCHEMA)?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| validation(format!("bad schema: {e}")))?;
    let problems: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| {
            let at = e.instance_path().to_string();
            format!("{}: {e}", if at.is_empty() { "/" } else { at.as_str() })
        })
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(validation(problems.join("; ")))
    }
}

impl RunConfig {
    /// Parse, schema-check and validate a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| validation(format!("config is not valid JSON: {e}")))?;
        check_schema(&doc)?;
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot read config {}: {e}", path.display()))))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::InvalidArgument(m) => validation(m),
            other => other,
        };
        self.model.validate().map_err(wrap)?;
        self.camera.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.policy.validate().map_err(wrap)?;
        self.eval.noise.validate().map_err(wrap)?;
        let d = &self.dataset;
        if !(1..=2).contains(&d.num_objects) {
            return Err(validation("dataset.num_objects must be 1 or 2"));
        }
        let (train, test) = self.split_sizes();
        if train == 0 || test == 0 {
            return Err(validation(format!(
                "dataset split {train}/{test} leaves an empty side; raise count or change train_fraction"
            )));
        }
        if self.eval.views == 0 || self.eval.overseg_k == 0 {
            return Err(validation("eval.views and eval.overseg_k must be positive"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(validation("output_dir must not be empty"));
        }
        Ok(())
    }

    /// `(train, test)` scene counts.
    pub fn split_sizes(&self) -> (usize, usize) {
        let train = (self.dataset.count as f64 * self.dataset.train_fraction).round() as usize;
        let train = train.min(self.dataset.count);
        (train, self.dataset.count - train)
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.split_sizes().0
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.split_sizes().0..self.dataset.count
    }

    /// Generation seed of scene `index`.
    pub fn scene_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[stream::SCENE, index as u64])
    }

    /// Canonical JSON: struct fields in declaration order, no whitespace,
    /// `output_dir` removed.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Lowercase hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
