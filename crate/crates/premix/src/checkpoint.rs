//! Checkpoint file format: magic `PMCK`, u32 version, u32 header length,
//! a UTF-8 JSON header describing the architecture and every tensor
//! (name, shape, byte offset), then one contiguous little-endian f32 blob.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggregatorParams, ArchConfig};
use crate::tensor::Tensor;

pub const CKPT_MAGIC: [u8; 4] = *b"PMCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorDesc {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    epoch: usize,
    config_hash: String,
    tensors: Vec<TensorDesc>,
}

/// Metadata stored alongside the tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub epoch: usize,
    pub config_hash: String,
}

/// Write all tensors (including running statistics) as f32.
pub fn save_checkpoint(
    params: &AggregatorParams,
    epoch: usize,
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    params.validate_finite()?;
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for e in params.entries() {
        tensors.push(TensorDesc {
            name: e.name.clone(),
            shape: e.tensor.shape().to_vec(),
            offset: blob.len(),
        });
        for &v in e.tensor.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = Header {
        arch: params.arch.clone(),
        epoch,
        config_hash: config_hash.to_string(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header_json.len() + blob.len());
    out.extend_from_slice(&CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&blob);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a checkpoint back. Tensor names and shapes are validated against a
/// freshly built parameter set for the stored architecture, so a file from
/// a different architecture fails instead of loading garbage.
pub fn load_checkpoint(path: &Path) -> Result<(AggregatorParams, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::Truncated { path: path.into(), expected: 12, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic { path: path.into(), expected: CKPT_MAGIC, found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::BadVersion { path: path.into(), expected: CKPT_VERSION, found: version });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 12 + header_len,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])?;
    let blob = &bytes[12 + header_len..];

    let mut params = AggregatorParams::init(0, &header.arch)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
        .collect();
    if header.tensors.len() != expected.len() {
        return Err(Error::ArchMismatch(format!(
            "{} tensors in file, architecture defines {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (desc, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &desc.name != name || &desc.shape != shape {
            return Err(Error::ArchMismatch(format!(
                "tensor {} with shape {:?}, expected {} with shape {:?}",
                desc.name, desc.shape, name, shape
            )));
        }
        let count: usize = desc.shape.iter().product();
        let end = desc.offset + count * 4;
        if end > blob.len() {
            return Err(Error::Truncated {
                path: path.into(),
                expected: 12 + header_len + end,
                found: bytes.len(),
            });
        }
        let data: Vec<f64> = blob[desc.offset..end]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        params.set(name, Tensor::new(desc.shape.clone(), data));
    }
    let meta = CheckpointMeta {
        arch: header.arch,
        epoch: header.epoch,
        config_hash: header.config_hash,
    };
    Ok((params, meta))
}

/// Load and insist on a specific architecture and config hash.
pub fn load_checkpoint_expect(
    path: &Path,
    arch: &ArchConfig,
    config_hash: &str,
) -> Result<(AggregatorParams, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    if &meta.arch != arch {
        return Err(Error::ArchMismatch(format!(
            "checkpoint was produced for a different architecture ({path})",
            path = path.display()
        )));
    }
    if meta.config_hash != config_hash {
        return Err(Error::ArchMismatch(format!(
            "checkpoint config hash {} does not match the active config {}",
            meta.config_hash, config_hash
        )));
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProjectorConfig;

    fn arch() -> ArchConfig {
        ArchConfig {
            dim: 5,
            hidden: 6,
            layers: 1,
            heads: 2,
            ffn_ratio: 2,
            pool_dim: 3,
            projector: ProjectorConfig::Standard { dims: [6, 6, 4] },
            positional: true,
        }
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let params = AggregatorParams::init(3, &arch()).unwrap();
        let p1 = dir.path().join("a.pmck");
        let p2 = dir.path().join("b.pmck");
        save_checkpoint(&params, 7, "deadbeef", &p1).unwrap();
        let (loaded, meta) = load_checkpoint(&p1).unwrap();
        assert_eq!(meta.epoch, 7);
        assert_eq!(meta.config_hash, "deadbeef");
        save_checkpoint(&loaded, 7, "deadbeef", &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        // loading what was just saved reproduces the values exactly
        let (again, _) = load_checkpoint(&p2).unwrap();
        for (a, b) in again.entries().iter().zip(loaded.entries()) {
            assert_eq!(a.tensor, b.tensor, "{}", a.name);
        }
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let params = AggregatorParams::init(3, &arch()).unwrap();
        let p = dir.path().join("a.pmck");
        save_checkpoint(&params, 0, "h", &p).unwrap();
        let mut other = arch();
        other.hidden = 8;
        assert!(matches!(
            load_checkpoint_expect(&p, &other, "h"),
            Err(Error::ArchMismatch(_))
        ));
        assert!(matches!(
            load_checkpoint_expect(&p, &arch(), "different"),
            Err(Error::ArchMismatch(_))
        ));
        assert!(load_checkpoint_expect(&p, &arch(), "h").is_ok());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pmck");
        fs::write(&p, b"XXXX1234").unwrap();
        assert!(load_checkpoint(&p).is_err());

        let params = AggregatorParams::init(1, &arch()).unwrap();
        let good = dir.path().join("good.pmck");
        save_checkpoint(&params, 0, "h", &good).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Truncated { .. })));
    }
}
