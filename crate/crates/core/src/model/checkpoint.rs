use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LvMae, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LVMECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON header between the fixed prefix and the payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

/// Layout: magic, `u32` version, `u32` header length, JSON header, then every
/// parameter as little-endian `f32` in header order.
pub fn save_checkpoint(model: &LvMae<f32>, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        params: model
            .params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * model.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params.iter() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, path: &Path) -> Result<&'a [u8]> {
    let end = *at + n;
    if end > bytes.len() {
        return Err(Error::Truncated {
            path: path.into(),
            expected: end as u64,
            found: bytes.len() as u64,
        });
    }
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn load_checkpoint(path: &Path) -> Result<LvMae<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut at = 0;
    if take(&bytes, &mut at, 8, path)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "LVMECKPT",
        });
    }
    let u32_at = |at: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(&bytes, at, 4, path)?.try_into().expect("4 bytes")))
    };
    let version = u32_at(&mut at)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u32_at(&mut at)? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(take(&bytes, &mut at, hlen, path)?).map_err(|e| Error::Parse {
            path: path.into(),
            message: format!("checkpoint header: {e}"),
        })?;
    if header.version != version {
        return Err(Error::Version {
            path: path.into(),
            found: header.version,
            expected: version,
        });
    }
    let mut model = LvMae::<f32>::new(header.config.clone(), 0)?;
    if header.params.len() != model.params.len() {
        return Err(Error::Parse {
            path: path.into(),
            message: format!(
                "{} parameters listed, config implies {}",
                header.params.len(),
                model.params.len()
            ),
        });
    }
    for (entry, p) in header.params.iter().zip(model.params.iter_mut()) {
        if entry.name != p.name || entry.shape != p.value.shape() {
            return Err(Error::Parse {
                path: path.into(),
                message: format!(
                    "parameter {} {:?} does not match config ({} {:?})",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                ),
            });
        }
        let n = p.value.numel();
        let raw = take(&bytes, &mut at, 4 * n, path)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        p.value = Tensor::new(entry.shape.clone(), data).map_err(|_| Error::Parse {
            path: path.into(),
            message: format!("non-finite value in {}", entry.name),
        })?;
    }
    if at != bytes.len() {
        return Err(Error::Parse {
            path: path.into(),
            message: format!("{} trailing bytes", bytes.len() - at),
        });
    }
    Ok(model)
}

/// [`load_checkpoint`] that also rejects a model of the wrong width.
pub fn load_checkpoint_expecting(path: &Path, d_model: usize) -> Result<LvMae<f32>> {
    let model = load_checkpoint(path)?;
    if model.config().d_model != d_model {
        return Err(Error::DimMismatch {
            context: format!("checkpoint {}", path.display()),
            expected: d_model,
            found: model.config().d_model,
        });
    }
    Ok(model)
}
