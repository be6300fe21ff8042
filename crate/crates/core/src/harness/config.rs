use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{GaussianClass, TabularSchema};
use crate::error::{Error, Result};
use crate::meta::MetaTrainConfig;
use crate::nn::{Activation, ArchSpec, OutputActivation, TrainConfig};
use crate::simplex::{grid_resolution, SamplingScheme, SchemeKind};

/// Where the labelled pool comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Class-conditional Gaussians, `per_class` points each.
    Synthetic {
        classes: Vec<GaussianClass>,
        per_class: usize,
    },
    /// IDX image and label files; `classes` lists the digits to keep.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        classes: Vec<u8>,
    },
    Tabular {
        path: PathBuf,
        schema: TabularSchema,
    },
}

/// Classifier layers after the input; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub layers: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: Activation,
    #[serde(default = "default_output")]
    pub output: OutputActivation,
}

fn default_hidden() -> Activation {
    Activation::Relu
}

fn default_output() -> OutputActivation {
    OutputActivation::Softmax
}

impl ArchConfig {
    pub fn resolve(&self, input_dim: usize) -> Result<ArchSpec> {
        ArchSpec::new(input_dim, self.layers.clone(), self.hidden, self.output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    /// Grid step at which shadows are generated; every sweep step must be a multiple.
    pub step: f64,
    /// Which grid points train the meta-classifiers. Test records always cover the full grid.
    #[serde(default = "default_scheme")]
    pub scheme: SchemeKind,
    pub replicas: usize,
    pub train_replicas: usize,
    pub samples_per_set: usize,
    /// Reuse a record file instead of training shadows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
}

fn default_scheme() -> SchemeKind {
    SchemeKind::UniformGrid
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfigs {
    pub proposed: MetaTrainConfig,
    pub baseline: MetaTrainConfig,
}

/// A complete experiment. Every random stream is derived from `seed`;
/// seeds inside the training sections are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub shadows: ShadowConfig,
    #[serde(default)]
    pub meta: MetaConfigs,
    /// Step sizes to evaluate. Empty means just the generation step.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_aux")]
    pub aux_per_class: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_epsilon() -> f64 {
    0.5
}

fn default_aux() -> usize {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses a TOML document after applying `key.path=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: ExperimentConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.meta.proposed.validate()?;
        self.meta.baseline.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon {} must lie in (0, 1]", self.epsilon)));
        }
        if self.aux_per_class == 0 {
            return Err(Error::Config("aux_per_class must be positive".into()));
        }
        if self.shadows.train_replicas == 0 || self.shadows.train_replicas >= self.shadows.replicas {
            return Err(Error::Config(
                "shadows need at least one training and one test replica".into(),
            ));
        }
        let fine = grid_resolution(self.shadows.step)
            .map_err(|_| Error::Config(format!("generation step {} does not divide 1", self.shadows.step)))?;
        for &s in &self.sweep {
            let coarse = grid_resolution(s).map_err(|_| Error::Config(format!("sweep step {s} does not divide 1")))?;
            if fine % coarse != 0 {
                return Err(Error::Config(format!(
                    "sweep step {s} is not a multiple of the generation step {}",
                    self.shadows.step
                )));
            }
        }
        Ok(())
    }

    /// Sweep steps in evaluation order.
    pub fn sweep_steps(&self) -> Vec<f64> {
        if self.sweep.is_empty() {
            vec![self.shadows.step]
        } else {
            self.sweep.clone()
        }
    }

    /// Full-grid generation scheme; the configured scheme only filters training records.
    pub fn generation_scheme(&self) -> SamplingScheme {
        SamplingScheme::uniform(self.shadows.step)
    }

    pub fn training_scheme(&self, step: f64) -> SamplingScheme {
        SamplingScheme {
            kind: self.shadows.scheme,
            step,
        }
    }
}

fn apply_override(doc: &mut toml::Table, raw: &str) -> Result<()> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
    let value = parse_value(value.trim());
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("empty key in {raw:?}")))?;
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
