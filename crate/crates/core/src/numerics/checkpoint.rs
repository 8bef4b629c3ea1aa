//! Parameter checkpoints: a JSON manifest (name, shape, dtype, byte offset)
//! plus a little-endian f32 binary blob. A load/save round trip is
//! bit-exact because f32 → f64 → f32 is the identity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::optim::ParamSet;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Serializes every parameter (in name order) as f32 little-endian.
pub fn checkpoint_bytes(ps: &ParamSet) -> (Manifest, Vec<u8>) {
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    for (name, tensor) in ps.iter() {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: tensor.shape(),
            dtype: "f32".to_string(),
            offset: blob.len() as u64,
        });
        tensor.with_values(|vals| {
            for v in vals {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        });
    }
    (Manifest { entries }, blob)
}

pub fn save_checkpoint(ps: &ParamSet, manifest_path: &Path, blob_path: &Path) -> Result<(), NumericsError> {
    let (manifest, blob) = checkpoint_bytes(ps);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    fs::write(manifest_path, json).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    fs::write(blob_path, blob).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    Ok(())
}

/// Loads checkpoint values into an already-registered parameter set. Names
/// and shapes must match exactly.
pub fn load_checkpoint(ps: &ParamSet, manifest_path: &Path, blob_path: &Path) -> Result<(), NumericsError> {
    let json = fs::read_to_string(manifest_path).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    let blob = fs::read(blob_path).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;

    if manifest.entries.len() != ps.len() {
        return Err(NumericsError::Checkpoint(format!(
            "parameter count mismatch: checkpoint has {}, set has {}",
            manifest.entries.len(),
            ps.len()
        )));
    }
    for entry in &manifest.entries {
        let tensor = ps.get(&entry.name).ok_or_else(|| {
            NumericsError::Checkpoint(format!("unknown parameter `{}` in checkpoint", entry.name))
        })?;
        if tensor.shape() != entry.shape {
            return Err(NumericsError::Checkpoint(format!(
                "shape mismatch for `{}`: checkpoint {:?}, set {:?}",
                entry.name,
                entry.shape,
                tensor.shape()
            )));
        }
        if entry.dtype != "f32" {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported dtype `{}` for `{}`",
                entry.dtype, entry.name
            )));
        }
        let n = tensor.len();
        let start = entry.offset as usize;
        let end = start + 4 * n;
        if end > blob.len() {
            return Err(NumericsError::Checkpoint(format!(
                "blob too short for `{}`",
                entry.name
            )));
        }
        let mut values = Vec::with_capacity(n);
        for chunk in blob[start..end].chunks_exact(4) {
            values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        tensor.set_values(&values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = seeded_rng(99);
        let mut ps = ParamSet::new();
        ps.register("b.w", Tensor::param(&[2, 3], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()));
        ps.register("a.b", Tensor::param(&[4], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()));

        let dir = std::env::temp_dir().join("nore_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let m = dir.join("m.json");
        let b = dir.join("b.bin");

        save_checkpoint(&ps, &m, &b).unwrap();
        let (_, blob1) = checkpoint_bytes(&ps);
        load_checkpoint(&ps, &m, &b).unwrap();
        save_checkpoint(&ps, &m, &b).unwrap();
        let (_, blob2) = checkpoint_bytes(&ps);
        assert_eq!(blob1, blob2, "save → load → save must be bit-exact");
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut ps = ParamSet::new();
        ps.register("w", Tensor::param(&[2], vec![1.0, 2.0]));
        let dir = std::env::temp_dir().join("nore_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let m = dir.join("m.json");
        let b = dir.join("b.bin");
        save_checkpoint(&ps, &m, &b).unwrap();

        let mut other = ParamSet::new();
        other.register("w", Tensor::param(&[3], vec![0.0; 3]));
        assert!(load_checkpoint(&other, &m, &b).is_err());
    }
}
