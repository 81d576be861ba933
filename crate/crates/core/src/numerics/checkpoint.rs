//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "RFGCKPT\0"
//! 8       4     u32 format version (currently 1)
//! 12      8     u64 header length N
//! 20      N     UTF-8 JSON header:
//!                 {"metadata": <any JSON>,
//!                  "parameters": [{"name": str, "shape": [int, ...]}, ...]}
//! 20+N    ...   for each parameter, in header order: prod(shape) f64 values
//! ```
//!
//! Only parameter values are stored; optimizer state is not.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RFGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    parameters: Vec<ParamEntry>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, metadata: &serde_json::Value, store: &ParameterStore) -> Result<()> {
    let header = Header {
        metadata: metadata.clone(),
        parameters: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;
    let mut buf = Vec::with_capacity(store.num_values() * 8);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(serde_json::Value, ParameterStore)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let header_len =
        usize::try_from(u64::from_le_bytes(u64buf)).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    let mut store = ParameterStore::new();
    for entry in header.parameters {
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(io_err)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.add(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io_err)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((header.metadata, store))
}
