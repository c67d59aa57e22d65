use super::{ModelConfig, Seq2Seq};
use crate::corpus::{DataFormat, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{load_checkpoint, save_checkpoint, ParamStore};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Run metadata stored in a checkpoint manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub model: ModelConfig,
    pub format: DataFormat,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
}

impl ModelMetadata {
    /// Refuses a vocabulary other than the one the model was trained with.
    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let found = vocab.hash();
        if found != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }
}

pub fn save_model(dir: &Path, store: &ParamStore<f32>, meta: &ModelMetadata) -> Result<()> {
    save_checkpoint(dir, store, serde_json::to_value(meta)?)
}

pub fn load_model(dir: &Path) -> Result<(Seq2Seq, ParamStore<f32>, ModelMetadata)> {
    if !dir.is_dir() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", dir.display())));
    }
    let (store, manifest) = load_checkpoint(dir)?;
    let meta: ModelMetadata = serde_json::from_value(manifest.metadata)
        .map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))?;
    let (model, fresh) = Seq2Seq::new::<f32>(meta.model, meta.vocab_size, 0)?;
    if model.param_layout(&fresh) != model.param_layout(&store) {
        return Err(Error::Checkpoint(
            "parameter layout does not match the recorded model config".into(),
        ));
    }
    Ok((model, store, meta))
}
