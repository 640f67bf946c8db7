//! Versioned binary checkpoints: a magic tag, format version, the layer
//! spec as JSON, little-endian f32 parameter blocks, and a trailing FNV-1a
//! checksum over everything before it.

use std::path::Path;

use super::DataError;
use crate::network::LayerSpec;
use crate::tensor::{ConvWeights, Tensor};

const MAGIC: &[u8; 8] = b"DAEMODEL";
pub const FORMAT_VERSION: u32 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Serializes the parameters and their spec. The byte stream is fully
/// determined by its inputs, so save, load, save again is byte-identical.
pub fn save_checkpoint(
    params: &[ConvWeights<f32>],
    spec: &[LayerSpec],
    path: &Path,
) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let spec_json = serde_json::to_vec(spec).map_err(|e| DataError::Malformed {
        detail: format!("spec serialization: {e}"),
    })?;
    out.extend_from_slice(&(spec_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec_json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for block in params {
        for dim in [
            block.kernel_h(),
            block.kernel_w(),
            block.in_channels(),
            block.out_channels(),
        ] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in block.kernel_data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in block.bias() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(DataError::Malformed {
                detail: "checkpoint body shorter than its headers promise".into(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, DataError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| DataError::Malformed {
            detail: "parameter count overflow".into(),
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Loads a checkpoint, verifying the checksum before anything else, so any
/// truncation or bit corruption surfaces as a checksum failure.
pub fn load_checkpoint(path: &Path) -> Result<(Vec<ConvWeights<f32>>, Vec<LayerSpec>), DataError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(DataError::ChecksumMismatch);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(DataError::ChecksumMismatch);
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(DataError::BadMagic {
            detail: "not a model checkpoint".into(),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let spec_len = r.u32()? as usize;
    let spec: Vec<LayerSpec> =
        serde_json::from_slice(r.take(spec_len)?).map_err(|e| DataError::Malformed {
            detail: format!("checkpoint spec: {e}"),
        })?;
    let block_count = r.u32()? as usize;
    let mut params = Vec::with_capacity(block_count);
    for _ in 0..block_count {
        let kh = r.u32()? as usize;
        let kw = r.u32()? as usize;
        let cin = r.u32()? as usize;
        let cout = r.u32()? as usize;
        let kernels = Tensor::from_vec(
            [kh, kw, cin, cout],
            r.f32_vec(kh * kw * cin * cout)?,
        )
        .map_err(|e| DataError::Malformed {
            detail: format!("kernel block: {e}"),
        })?;
        let bias = r.f32_vec(cout)?;
        params.push(
            ConvWeights::from_parts(kernels, bias).map_err(|e| DataError::Malformed {
                detail: format!("parameter block: {e}"),
            })?,
        );
    }
    if r.pos != body.len() {
        return Err(DataError::Malformed {
            detail: format!("{} trailing bytes after the last block", body.len() - r.pos),
        });
    }
    Ok((params, spec))
}
