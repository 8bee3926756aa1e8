//! On-disk checkpoints: weights, optimizer and discriminator state, progress.
//!
//! Stored as JSON with round-trip-exact floats, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::DiscriminatorState;
use crate::error::{Error, Result};
use crate::nets::{build_model, Model, ModelSpec};
use crate::nn::{SgdState, TensorRecord};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Init,
    Pretrain,
    Distill,
    Transfer,
}

/// Everything randomness depends on: streams are re-derived from the seed per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBundle {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub model_spec: ModelSpec,
    pub weights: Vec<TensorRecord>,
    pub optimizer: Option<SgdState>,
    pub discriminator: Option<DiscriminatorState>,
    /// Completed epochs.
    pub epoch: usize,
    pub config_fingerprint: String,
    pub rng: RngState,
    /// Validation top-1 measured when the checkpoint was produced.
    pub reference_top1: Option<f64>,
}

impl CheckpointBundle {
    pub fn from_model(model: &Model, kind: CheckpointKind, fingerprint: String, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind,
            model_spec: model.spec().clone(),
            weights: model.state_dict(),
            optimizer: None,
            discriminator: None,
            epoch: 0,
            config_fingerprint: fingerprint,
            rng: RngState { seed, next_epoch: 0 },
            reference_top1: None,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = build_model(&self.model_spec, 0)?;
        model.load_state_dict(&self.weights)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        let json = serde_json::to_vec(self)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let bundle: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if bundle.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: format version {} (expected {FORMAT_VERSION})",
                path.display(),
                bundle.format_version
            )));
        }
        Ok(bundle)
    }
}

/// Stable hex digest of any serializable configuration.
pub fn fingerprint<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    let digest = Sha256::digest(&json);
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}
