//! Run configuration: one TOML file describes a complete, re-executable run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{data_root, load_cifar10, Dataset, Split, SyntheticConfig, DATA_ROOT_ENV};
use crate::error::{Error, Result};
use crate::nets::{CapacityTier, ModelSpec};
use crate::trainer::{DistillConfig, PretrainConfig};
use crate::transfer::TransferConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Overrides the dataset-root environment variable.
    pub root: Option<PathBuf>,
    /// Multi-hot labels (synthetic only).
    pub multilabel: bool,
    pub val_samples_per_class: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            root: None,
            multilabel: false,
            val_samples_per_class: 50,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn num_classes(&self) -> usize {
        match self.kind {
            DatasetKind::Synthetic => self.synthetic.num_classes,
            DatasetKind::Cifar10 => 10,
        }
    }

    pub fn resolution(&self) -> usize {
        match self.kind {
            DatasetKind::Synthetic => self.synthetic.resolution,
            DatasetKind::Cifar10 => 32,
        }
    }

    /// Class names for reports, when the dataset has them.
    pub fn class_names(&self) -> Option<&'static [&'static str]> {
        match self.kind {
            DatasetKind::Synthetic => None,
            DatasetKind::Cifar10 => Some(&crate::data::CIFAR10_CLASSES),
        }
    }

    /// `Train` or `Val`; CIFAR-10 validation is its test batch.
    pub fn load(&self, split: Split) -> Result<Dataset> {
        match self.kind {
            DatasetKind::Synthetic => {
                let mut cfg = self.synthetic.clone();
                if split != Split::Train {
                    cfg.samples_per_class = self.val_samples_per_class;
                }
                if self.multilabel {
                    cfg.generate_multilabel(split)
                } else {
                    cfg.generate(split)
                }
            }
            DatasetKind::Cifar10 => {
                if self.multilabel {
                    return Err(Error::Config("CIFAR-10 has single labels only".into()));
                }
                let root = self
                    .root
                    .clone()
                    .or_else(data_root)
                    .ok_or_else(|| Error::Config(format!("CIFAR-10 needs dataset.root or the {DATA_ROOT_ENV} environment variable")))?;
                load_cifar10(&root, split)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub capacity_tier: CapacityTier,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            capacity_tier: CapacityTier::StudentSmall,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Teacher checkpoint files.
    pub teachers: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Layer tracked by per-epoch percentile snapshots: `first`, `middle`, `last` or a layer name.
    pub percentile_layer: String,
    pub histogram_layers: Vec<String>,
    pub histogram_bins: usize,
    /// Classes exported by `analyze embeddings`; defaults to the designated pairs.
    pub embedding_classes: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            percentile_layer: "middle".into(),
            histogram_layers: vec!["first".into(), "middle".into(), "last".into()],
            histogram_bins: 40,
            embedding_classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub distill: DistillConfig,
    pub ensemble: EnsembleConfig,
    /// Student checkpoint for pretrained / superior initialization.
    pub student_init: Option<PathBuf>,
    pub transfer: TransferConfig,
    pub transfer_dataset: Option<DatasetConfig>,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            output_dir: PathBuf::from("runs/run"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            distill: DistillConfig::default(),
            ensemble: EnsembleConfig::default(),
            student_init: None,
            transfer: TransferConfig::default(),
            transfer_dataset: None,
            analysis: AnalysisConfig::default(),
        }
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = value.trim();
    // TOML literal when it parses as one, bare string otherwise
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_owned()));
    Ok((path, parsed))
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for key in parents {
        let entry = table.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` is not a table")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applying `key.path=value` overrides first.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            set_path(&mut table, &path, value)?;
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.distill.validate()?;
        self.student_spec().validate()?;
        if self.pretrain.batch_size == 0 || self.transfer.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.analysis.histogram_bins == 0 {
            return Err(Error::Config("analysis.histogram_bins must be positive".into()));
        }
        Ok(())
    }

    pub fn student_spec(&self) -> ModelSpec {
        ModelSpec::new(self.model.capacity_tier, self.dataset.num_classes(), self.dataset.resolution())
    }
}
