//! Checkpoint container.
//!
//! ```text
//! "SSLK" | u32 version | u32 header_len | header (TOML, UTF-8)
//!        | u32 count | count × (u32 name_len | name | SSLT tensor)
//! ```
//!
//! Integers are little-endian. Files are written to a temporary sibling and
//! renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::config::EncoderConfig;
use crate::blocks::params::ParamStore;
use crate::error::{Error, Result};
use crate::numerics::io::{read_tensor, write_tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSLK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    /// What produced the file, e.g. `pretrain` or `asr`.
    pub kind: String,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl CheckpointHeader {
    pub fn new(kind: &str, encoder: &EncoderConfig) -> Self {
        Self {
            schema_version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            encoder: encoder.clone(),
            extra: BTreeMap::new(),
        }
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    header: &CheckpointHeader,
    params: &ParamStore<T>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        let text = toml::to_string(header).expect("header serializes");
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(&mut w, t)?;
        }
        w.into_inner()?.sync_all()
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(path, format!("truncated {what}: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize, path: &Path, what: &str) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(path, format!("truncated {what}: {e}")))?;
    String::from_utf8(b).map_err(|_| Error::format(path, format!("{what} is not UTF-8")))
}

/// Loads a checkpoint, converting stored tensors to `T`.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CheckpointHeader, ParamStore<T>)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for checkpoint magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = read_u32(&mut r, path, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let hlen = read_u32(&mut r, path, "header length")? as usize;
    let text = read_string(&mut r, hlen, path, "header")?;
    let header: CheckpointHeader =
        toml::from_str(&text).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    header.encoder.validate()?;
    let count = read_u32(&mut r, path, "tensor count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r, path, "name length")? as usize;
        let name = read_string(&mut r, nlen, path, "tensor name")?;
        let t = read_tensor::<T, _>(&mut r).map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(path, format!("tensor `{name}`: {msg}")),
            other => other,
        })?;
        params.insert(name, t);
    }
    Ok((header, params))
}
