//! Checkpoints: `params.bin` holds raw little-endian `f32` values in
//! manifest order; `manifest.json` names and shapes them and carries
//! arbitrary run metadata.

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub params: Vec<ParamEntry>,
    pub metadata: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

pub fn save_checkpoint(
    dir: &Path,
    params: &ParamStore<f32>,
    metadata: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes = Vec::with_capacity(params.total_size() * 4);
    for (_, name, t) in params.iter() {
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        });
        for &x in t.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        params: entries,
        metadata,
    };
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore<f32>, CheckpointManifest)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    let expected: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>() * 4)
        .sum();
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{} holds {} bytes, manifest describes {}",
            PARAMS_FILE,
            bytes.len(),
            expected
        )));
    }
    let mut store = ParamStore::new();
    let mut off = 0;
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let data = bytes[off..off + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        off += 4 * n;
        store.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn save_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::<f32>::new();
        p.xavier("w", 3, 4, &mut rng).unwrap();
        p.constant("b", 4, 0.5).unwrap();
        save_checkpoint(dir.path(), &p, serde_json::json!({"seed": 3})).unwrap();
        let (q, m) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m.metadata["seed"], 3);
        for ((_, n1, t1), (_, n2, t2)) in p.iter().zip(q.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn truncated_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamStore::<f32>::new();
        p.constant("b", 4, 0.5).unwrap();
        save_checkpoint(dir.path(), &p, serde_json::Value::Null).unwrap();
        fs::write(dir.path().join(PARAMS_FILE), [0u8; 7]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    }
}
