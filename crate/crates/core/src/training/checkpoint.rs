//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `FMCKPT\0\0`, `u32` format version, `u64` header
//! length, a JSON header, then the raw little-endian array payload. The
//! header lists every array with its name, shape, dtype and byte offset.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::Sgd;
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::model::{Embedding, EmbeddingNet, EmbeddingQueue, MomentumPair};
use crate::params::ParamMap;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FMCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Byte offset from the start of the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueHeader {
    pub capacity: usize,
    pub dim: usize,
    pub len: usize,
    pub cursor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub config_hash: String,
    pub step: u64,
    pub queue: QueueHeader,
    pub arrays: Vec<ArrayEntry>,
}

const QUERY: &str = "query/";
const KEY: &str = "key/";
const BRANCH: &str = "branch/";
const VELOCITY: &str = "velocity/";
const QUEUE: &str = "queue";

/// Writes `state` (with its config) to `path`. Arrays are stored as f64.
pub fn save_checkpoint(path: &Path, config: &TrainConfig, state: &ModelState) -> Result<()> {
    let mut arrays: Vec<(String, &[usize], &[f64])> = Vec::new();
    let groups: [(&str, &ParamMap); 4] = [
        (QUERY, &state.pair.query),
        (KEY, &state.pair.key),
        (BRANCH, &state.branch),
        (VELOCITY, state.optimizer.velocity()),
    ];
    for (prefix, map) in groups {
        for (name, t) in map.iter() {
            arrays.push((format!("{prefix}{name}"), t.shape(), t.data()));
        }
    }
    let queue_data: Vec<f64> = state
        .queue
        .slots()
        .iter()
        .flat_map(|e| e.as_slice().iter().copied())
        .collect();
    let queue_shape = [state.queue.len(), state.queue.dim()];
    arrays.push((QUEUE.to_string(), &queue_shape, &queue_data));

    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0u64;
    for (name, shape, data) in &arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: shape.to_vec(),
            dtype: Dtype::F64,
            offset,
        });
        offset += 8 * data.len() as u64;
    }
    let header = CheckpointHeader {
        config: config.clone(),
        config_hash: config.hash(),
        step: state.step,
        queue: QueueHeader {
            capacity: state.queue.capacity(),
            dim: state.queue.dim(),
            len: state.queue.len(),
            cursor: state.queue.cursor(),
        },
        arrays: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + header_bytes.len() + offset as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, _, data) in &arrays {
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parsed header plus every array by name.
pub struct RawCheckpoint {
    pub header: CheckpointHeader,
    pub arrays: std::collections::BTreeMap<String, Tensor>,
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> Result<[u8; N]> {
    let end = *at + N;
    let slice = bytes
        .get(*at..end)
        .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
    *at = end;
    Ok(slice.try_into().expect("slice length"))
}

pub fn read_raw(path: &Path) -> Result<RawCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut at = 0;
    if &take::<8>(&bytes, &mut at)? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take::<4>(&bytes, &mut at)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(take::<8>(&bytes, &mut at)?) as usize;
    let hbytes = bytes
        .get(at..at + hlen)
        .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(hbytes)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    let payload = &bytes[at + hlen..];
    let mut arrays = std::collections::BTreeMap::new();
    for entry in &header.arrays {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + count * entry.dtype.width();
        let raw = payload
            .get(start..end)
            .ok_or_else(|| Error::Format(format!("array {} out of bounds", entry.name)))?;
        let data: Vec<f64> = match entry.dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        };
        arrays.insert(entry.name.clone(), Tensor::from_vec(&entry.shape, data)?);
    }
    Ok(RawCheckpoint { header, arrays })
}

fn group(arrays: &std::collections::BTreeMap<String, Tensor>, prefix: &str) -> ParamMap {
    let mut m = ParamMap::new();
    for (name, t) in arrays.range(prefix.to_string()..) {
        match name.strip_prefix(prefix) {
            Some(rest) => m.insert(rest, t.clone()),
            None => break,
        }
    }
    m
}

/// Restores the config and full training state.
pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, ModelState)> {
    let raw = read_raw(path)?;
    let h = &raw.header;
    let config = h.config.clone();
    config.validate()?;
    if config.hash() != h.config_hash {
        return Err(Error::Format("config hash does not match the stored config".into()));
    }
    let net = EmbeddingNet::new(&config.network_config()?)?;
    let variant = config.variant_spec()?;
    let query = group(&raw.arrays, QUERY);
    let key = group(&raw.arrays, KEY);
    let fresh = net.init(0);
    if !fresh.same_schema(&query) {
        return Err(Error::Format("stored parameters do not match the configured network".into()));
    }
    let pair = MomentumPair::from_parts(query, key, config.key_momentum)?;
    if !pair.key.same_schema(&pair.query) {
        return Err(Error::Format("key and query parameter sets differ".into()));
    }
    let q = raw
        .arrays
        .get(QUEUE)
        .ok_or_else(|| Error::Format("checkpoint has no queue".into()))?;
    if q.shape() != [h.queue.len, h.queue.dim] {
        return Err(Error::Format("queue array shape disagrees with header".into()));
    }
    let slots = q
        .data()
        .chunks(h.queue.dim.max(1))
        .take(h.queue.len)
        .map(|c| Embedding::from_unit(c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let queue = EmbeddingQueue::from_parts(h.queue.capacity, h.queue.dim, slots, h.queue.cursor)?;
    let state = ModelState {
        net,
        variant,
        pair,
        branch: group(&raw.arrays, BRANCH),
        queue,
        optimizer: Sgd::with_velocity(
            config.sgd_momentum,
            config.weight_decay,
            group(&raw.arrays, VELOCITY),
        ),
        step: h.step,
    };
    state.attention_branch()?;
    Ok((config, state))
}
