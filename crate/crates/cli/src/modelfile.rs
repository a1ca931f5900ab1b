//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `CATTNMDL`, a little-endian u32 format version, a
//! u32 header length, a JSON header (model spec and parameter layout), then
//! every parameter value as a little-endian f64 in layout order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cursor_attn_core::nn::{Model, ModelSpec, Param, Params};

use crate::error::{CliError, Result};
use crate::formats::write_bytes;

pub const MAGIC: &[u8; 8] = b"CATTNMDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    layout: Vec<(String, Vec<usize>)>,
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let header = Header {
        spec: model.spec.clone(),
        layout: model.params.list.iter().map(|p| (p.name.clone(), p.shape.clone())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("serializable");
    let mut out = Vec::with_capacity(16 + json.len() + model.params.count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &model.params.list {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |msg: &str| CliError::malformed(path, 0, msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported model version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let mut values = bytes[16 + hlen..].chunks_exact(8);
    if values.len() * 8 != bytes.len() - 16 - hlen {
        return Err(bad("parameter blob is not a whole number of f64 values"));
    }
    let mut list = Vec::with_capacity(header.layout.len());
    for (name, shape) in header.layout {
        let n: usize = shape.iter().product();
        if values.len() < n {
            return Err(bad("truncated parameter blob"));
        }
        let data = values.by_ref().take(n).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        list.push(Param { name, shape, data });
    }
    if values.len() != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    Model::with_params(header.spec, Params { list }).map_err(|source| CliError::InvalidAt {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    write_bytes(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_model(&bytes, path)
}
