//! Parameter snapshots.
//!
//! A checkpoint is written as `<run_id>.T<updates>.ckpt`, a binary blob:
//!
//! ```text
//! b"EASECKPT" | u32 version | u32 n_params | n_params × (u64 len, len × f64)
//!             | u32 n_buffers | n_buffers × (u64 len, len × f64)
//! ```
//!
//! (all little-endian), next to a `<run_id>.T<updates>.json` sidecar carrying
//! the architecture, its fingerprint, the seed and the update count. Names
//! and shapes are recovered from the architecture layout on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{self, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::io;
use crate::nn::ModelState;

const MAGIC: &[u8; 8] = b"EASECKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run_id: String,
    pub architecture: ArchitectureSpec,
    pub seed: u64,
    pub update_count: u64,
    pub state: ModelState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub run_id: String,
    pub architecture: ArchitectureSpec,
    pub arch_fingerprint: String,
    pub seed: u64,
    pub update_count: u64,
    pub param_count: usize,
    pub blob_sha256: String,
}

pub fn checkpoint_file_name(run_id: &str, update_count: u64) -> String {
    format!("{run_id}.T{update_count}.ckpt")
}

fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

impl Checkpoint {
    pub fn fingerprint(&self) -> String {
        self.architecture.fingerprint()
    }

    pub fn file_name(&self) -> String {
        checkpoint_file_name(&self.run_id, self.update_count)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.state.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let tensors: [Vec<&[f64]>; 2] = [
            self.state.params.iter().map(|p| p.data.as_slice()).collect(),
            self.state.buffers.iter().map(|b| b.data.as_slice()).collect(),
        ];
        for group in tensors {
            out.extend_from_slice(&(group.len() as u32).to_le_bytes());
            for data in group {
                out.extend_from_slice(&(data.len() as u64).to_le_bytes());
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Writes blob and sidecar into `dir`; returns the blob path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let blob = self.encode();
        let path = dir.join(self.file_name());
        io::write_atomic(&path, &blob)?;
        let sidecar = CheckpointSidecar {
            run_id: self.run_id.clone(),
            architecture: self.architecture.clone(),
            arch_fingerprint: self.fingerprint(),
            seed: self.seed,
            update_count: self.update_count,
            param_count: self.state.param_count(),
            blob_sha256: io::sha256_hex(&blob),
        };
        io::write_json(&sidecar_path(&path), &sidecar)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar: CheckpointSidecar = io::read_json(&sidecar_path(path))?;
        let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
        if io::sha256_hex(&bytes) != sidecar.blob_sha256 {
            return Err(Error::load(path, "blob does not match its sidecar checksum"));
        }
        if sidecar.architecture.fingerprint() != sidecar.arch_fingerprint {
            return Err(Error::load(path, "architecture fingerprint mismatch"));
        }
        let arch = arch::build(&sidecar.architecture)?;
        let mut state = arch.init(0);
        decode_into(&bytes, &mut state).map_err(|reason| Error::load(path, reason))?;
        Ok(Checkpoint {
            run_id: sidecar.run_id,
            architecture: sidecar.architecture,
            seed: sidecar.seed,
            update_count: sidecar.update_count,
            state,
        })
    }
}

fn decode_into(bytes: &[u8], state: &mut ModelState) -> std::result::Result<(), String> {
    let mut cursor = Cursor { bytes, pos: 0 };
    if cursor.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let mut targets: [Vec<&mut Vec<f64>>; 2] = [
        state.params.iter_mut().map(|p| &mut p.data).collect(),
        state.buffers.iter_mut().map(|b| &mut b.data).collect(),
    ];
    for group in targets.iter_mut() {
        let count = cursor.u32()? as usize;
        if count != group.len() {
            return Err(format!("expected {} tensors, blob has {count}", group.len()));
        }
        for data in group.iter_mut() {
            let len = cursor.u64()? as usize;
            if len != data.len() {
                return Err(format!("tensor length {len}, layout expects {}", data.len()));
            }
            for v in data.iter_mut() {
                *v = f64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
            }
        }
    }
    if cursor.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err("truncated checkpoint".into());
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;

    fn sample() -> Checkpoint {
        let spec = ArchitectureSpec::new("wide-resnet-small", 1, 10, 10, ImageShape::CIFAR);
        let arch = arch::build(&spec).unwrap();
        let mut state = arch.init(9);
        state.buffers[0].data[0] = 0.25;
        Checkpoint {
            run_id: "abc".into(),
            architecture: spec,
            seed: 9,
            update_count: 42,
            state,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample();
        let path = ckpt.save(dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "abc.T42.ckpt");
        assert!(dir.path().join("abc.T42.json").is_file());
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn tampered_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = sample().save(dir.path()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }
}
