//! `VPCK` checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VPCK" | version: u16 | count: u32
//! count × ( name_len: u32 | name: utf-8 | rank: u32 | extents: rank × u32 | payload: f32 × numel )
//! ```
//!
//! Model checkpoints carry their architecture in `meta.*` entries so that
//! [`load_checkpoint`] can rebuild and verify the shape table.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ConvBlock, ConvNetSpec, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VPCK";
const VERSION: u16 = 1;

pub fn write_entries(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn read_entries(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| corrupt("entry name is not utf-8".into()))?;
        let rank = r.u32()?;
        if rank > 8 {
            return Err(corrupt(format!("`{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt(format!("`{name}` extents overflow")))?;
        let payload = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| corrupt("payload overflow".into()))?,
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| corrupt(format!("`{name}`: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

fn meta_entries(spec: &ConvNetSpec) -> Vec<(String, Tensor)> {
    let (c, h, w) = spec.input_size;
    let mut blocks = vec![spec.conv_blocks.len() as f32];
    for b in &spec.conv_blocks {
        blocks.extend([b.filters as f32, b.kernel as f32, b.stride as f32]);
    }
    let n_blocks = blocks.len();
    vec![
        (
            "meta.input_size".into(),
            Tensor::new(&[3], vec![c as f32, h as f32, w as f32]).unwrap(),
        ),
        (
            "meta.conv_blocks".into(),
            Tensor::new(&[n_blocks], blocks).unwrap(),
        ),
        (
            "meta.hidden_width".into(),
            Tensor::scalar(spec.hidden_width as f32),
        ),
        ("meta.n_classes".into(), Tensor::scalar(spec.n_classes as f32)),
    ]
}

fn spec_from_meta(meta: &BTreeMap<String, Tensor>, path: &Path) -> Result<ConvNetSpec> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let get = |k: &str| {
        meta.get(k)
            .map(|t| t.data().iter().map(|&v| v as usize).collect::<Vec<_>>())
            .ok_or_else(|| corrupt(format!("missing `{k}`")))
    };
    let input = get("meta.input_size")?;
    let blocks = get("meta.conv_blocks")?;
    let hidden = get("meta.hidden_width")?;
    let classes = get("meta.n_classes")?;
    if input.len() != 3 || blocks.is_empty() || blocks.len() != 1 + 3 * blocks[0] {
        return Err(corrupt("malformed architecture metadata".into()));
    }
    Ok(ConvNetSpec {
        input_size: (input[0], input[1], input[2]),
        conv_blocks: blocks[1..]
            .chunks(3)
            .map(|b| ConvBlock {
                filters: b[0],
                kernel: b[1],
                stride: b[2],
            })
            .collect(),
        hidden_width: hidden[0],
        n_classes: classes[0],
    })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut entries = meta_entries(params.spec());
    entries.extend(params.tensors().iter().map(|(k, v)| (k.clone(), v.clone())));
    write_entries(path, &entries)
}

/// Loads an unfrozen [`ModelParams`]; the stored architecture must agree
/// with the stored tensors.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let (meta, tensors): (BTreeMap<_, _>, BTreeMap<_, _>) = read_entries(path)?
        .into_iter()
        .partition(|(k, _)| k.starts_with("meta."));
    let spec = spec_from_meta(&meta, path)?;
    ModelParams::from_tensors(spec, tensors).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: format!("shape table mismatch: {e}"),
    })
}
