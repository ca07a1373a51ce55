//! Named-array archive: magic, little-endian header length, JSON header,
//! then every array as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use cafu_tensor::Tensor;
use serde_json::json;

use crate::params::ParamStore;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CAFUARR1";

/// Archive contents beyond the arrays themselves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    /// Rendered `key = value` configuration snapshot.
    pub config: String,
    pub seed: u64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub meta: CheckpointMeta,
    pub arrays: Vec<(String, Tensor)>,
}

pub fn save(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let names: Vec<_> = store
        .iter()
        .map(|(name, t, trainable)| json!({"name": name, "shape": t.shape(), "trainable": trainable}))
        .collect();
    let header = json!({
        "config": meta.config,
        "seed": meta.seed,
        "step": meta.step,
        "arrays": names,
    })
    .to_string();
    let mut buf = Vec::with_capacity(16 + header.len() + 8 * store.iter().map(|e| e.1.numel()).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for (_, t, _) in store.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read(path: &Path) -> Result<Archive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt(format!("{} is not a parameter archive", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: serde_json::Value =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| corrupt(format!("header: {e}")))?;
    let meta = CheckpointMeta {
        config: header["config"].as_str().unwrap_or_default().to_string(),
        seed: header["seed"].as_u64().unwrap_or_default(),
        step: header["step"].as_u64().unwrap_or_default(),
    };
    let mut offset = body;
    let mut arrays = Vec::new();
    for entry in header["arrays"].as_array().ok_or_else(|| corrupt("header lacks arrays"))? {
        let name = entry["name"].as_str().ok_or_else(|| corrupt("array without name"))?;
        let shape: Vec<usize> = entry["shape"]
            .as_array()
            .ok_or_else(|| corrupt(format!("{name}: missing shape")))?
            .iter()
            .map(|d| d.as_u64().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| corrupt(format!("{name}: bad shape")))?;
        let n: usize = shape.iter().product();
        let end = offset + 8 * n;
        if end > bytes.len() {
            return Err(corrupt(format!("{name}: truncated data")));
        }
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        arrays.push((name.to_string(), Tensor::new(&shape, data)?));
        offset = end;
    }
    Ok(Archive { meta, arrays })
}

/// Assigns archive arrays to same-named entries of `store` after checking
/// every shape. Unless `allow_partial`, the two name sets must coincide.
/// Returns the number of assigned arrays.
pub fn load_into(store: &mut ParamStore, archive: &Archive, allow_partial: bool) -> Result<usize> {
    let mut plan = Vec::new();
    for (name, t) in &archive.arrays {
        match store.id(name) {
            Some(id) if store.value(id).shape() == t.shape() => plan.push((id, t)),
            Some(id) => {
                return Err(corrupt(format!(
                    "{name}: archive shape {:?} vs model {:?}",
                    t.shape(),
                    store.value(id).shape()
                )))
            }
            None if allow_partial => {}
            None => return Err(corrupt(format!("{name}: not a parameter of this model"))),
        }
    }
    if !allow_partial && plan.len() != store.len() {
        return Err(corrupt(format!(
            "archive covers {} of {} model arrays",
            plan.len(),
            store.len()
        )));
    }
    for (id, t) in &plan {
        store.set(*id, (*t).clone());
    }
    Ok(plan.len())
}
