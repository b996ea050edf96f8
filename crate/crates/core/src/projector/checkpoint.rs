//! FADP checkpoint container.
//!
//! ```text
//! "FADP" | u32 LE version = 1 | u32 LE header length | header JSON (UTF-8)
//! then, for every tensor in header order:
//!   u32 LE name length | name (UTF-8) | FTNS tensor
//! ```
//!
//! The header carries the projector config, the token count and the list of
//! tensor names and dims, which is exactly [`ProjectorParams::tensors`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProjectorConfig, ProjectorParams};
use crate::error::{Error, Result};
use crate::tensor::{write_raw, ByteReader, Tensor};

pub const FADP_MAGIC: [u8; 4] = *b"FADP";
pub const FADP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ProjectorConfig,
    pub n_tokens: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_params(params: &ProjectorParams<f32>) -> Vec<u8> {
    let tensors = params.tensors();
    let header = CheckpointHeader {
        config: params.config.clone(),
        n_tokens: params.n_tokens,
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                dims: t.dims.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(&FADP_MAGIC);
    buf.extend_from_slice(&FADP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        write_raw(&mut buf, &t.dims, t.data).expect("writing to a Vec cannot fail");
    }
    buf
}

fn read_header<'a>(r: &mut ByteReader<'a>) -> Result<CheckpointHeader> {
    let magic = r.take(4, "magic")?;
    if magic != FADP_MAGIC {
        return Err(Error::Checkpoint(format!("not a FADP checkpoint (magic {magic:02x?})")));
    }
    let version = r.u32("version")?;
    if version != FADP_VERSION {
        return Err(Error::BadVersion {
            format: "FADP",
            version,
        });
    }
    let len = r.u32("header length")? as usize;
    let json = r.take(len, "header")?;
    Ok(serde_json::from_slice(json)?)
}

pub fn decode_params(bytes: &[u8]) -> Result<ProjectorParams<f32>> {
    let mut r = ByteReader::new(bytes);
    let header = read_header(&mut r)?;
    let mut params = ProjectorParams::<f32>::zeros(&header.config, header.n_tokens)?;
    let expected: Vec<TensorEntry> = params
        .tensors()
        .into_iter()
        .map(|t| TensorEntry { name: t.name, dims: t.dims })
        .collect();
    if expected != header.tensors {
        return Err(Error::Checkpoint(
            "header tensor list does not match the declared config".into(),
        ));
    }
    for (entry, dst) in expected.iter().zip(params.tensors_mut()) {
        let name_len = r.u32("name length")? as usize;
        let name = r.take(name_len, "name")?;
        if name != entry.name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor {}, found {}",
                entry.name,
                String::from_utf8_lossy(name)
            )));
        }
        let (t, used) = Tensor::decode(r.rest())?;
        r.take(used, "tensor")?;
        if t.dims != entry.dims {
            return Err(Error::Checkpoint(format!(
                "tensor {} has dims {:?}, config implies {:?}",
                entry.name, t.dims, entry.dims
            )));
        }
        *dst = t.data;
    }
    if !r.rest().is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.rest().len())));
    }
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ProjectorParams<f32>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ProjectorParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

/// Header only, without materializing tensors.
pub fn inspect_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut ByteReader::new(&bytes))
}

#[cfg(test)]
mod tests {
    use super::super::init_projector;
    use super::*;

    fn cfg() -> ProjectorConfig {
        ProjectorConfig {
            depth: 2,
            dim: 8,
            heads: 2,
            mlp_ratio: 4.0,
            use_pos_embed: true,
            init_seed: 9,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = init_projector(&cfg(), 4).unwrap();
        let bytes = encode_params(&p);
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_params(&back), bytes);
    }

    #[test]
    fn mismatched_declared_dim_is_rejected() {
        let p = init_projector(&cfg(), 4).unwrap();
        let bytes = encode_params(&p);
        // Rewrite the header claiming dim 16 while the tensors stay 8-wide.
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        header["config"]["dim"] = 16.into();
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = bytes[..8].to_vec();
        forged.extend_from_slice(&(json.len() as u32).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(&bytes[12 + len..]);
        assert!(matches!(decode_params(&forged), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let p = init_projector(&cfg(), 4).unwrap();
        let mut bytes = encode_params(&p);
        bytes[4] = 7;
        assert!(matches!(decode_params(&bytes), Err(Error::BadVersion { .. })));
    }

    #[test]
    fn header_inspection_reports_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.fadp");
        let p = init_projector(&cfg(), 4).unwrap();
        save_params(&path, &p).unwrap();
        let h = inspect_header(&path).unwrap();
        assert_eq!((h.config.depth, h.config.dim, h.config.heads), (2, 8, 2));
        assert_eq!(h.tensors.len(), p.tensors().len());
    }
}
