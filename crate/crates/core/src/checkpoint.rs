//! Binary checkpoints: one line of JSON header, then the entity table and the
//! relation table as row-major little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SpherizationParams;
use crate::model::{KgModel, ModelError, ModelKind};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint header is missing its terminating newline")]
    MissingHeader,
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint payload has {actual} bytes but the header implies {expected}")]
    Size { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: ModelKind,
    pub num_entities: usize,
    pub num_relations: usize,
    pub dim: usize,
    // stored widened to f64 so the JSON text round-trips the f32 bits exactly
    pub radius: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub scale: f64,
}

impl CheckpointHeader {
    fn of(model: &KgModel<f32>) -> Self {
        let s = model.sphere();
        Self {
            format_version: FORMAT_VERSION,
            kind: model.kind(),
            num_entities: model.num_entities(),
            num_relations: model.num_relations(),
            dim: model.dim(),
            radius: s.radius as f64,
            delta: s.delta as f64,
            epsilon: s.epsilon as f64,
            scale: s.scale as f64,
        }
    }
}

/// Serializes `model` to bytes.
pub fn to_bytes(model: &KgModel<f32>) -> Vec<u8> {
    let header = serde_json::to_string(&CheckpointHeader::of(model)).expect("header serializes");
    let n = model.entity_table().len() + model.relation_table().len();
    let mut out = Vec::with_capacity(header.len() + 1 + 4 * n);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for x in model.entity_table().iter().chain(model.relation_table()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<KgModel<f32>, CheckpointError> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(CheckpointError::MissingHeader)?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[..split])?;
    // check the version before the rest of the schema so old files get a clear error
    if let Some(found) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if found != FORMAT_VERSION as u64 {
            return Err(CheckpointError::Version {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
    }
    let header: CheckpointHeader = serde_json::from_value(raw)?;
    let mut sphere = SpherizationParams::<f32>::new(header.dim);
    sphere.radius = header.radius as f32;
    sphere.delta = header.delta as f32;
    sphere.epsilon = header.epsilon as f32;
    sphere.scale = header.scale as f32;
    let probe = KgModel::<f32>::init(header.kind, 1, 1, sphere, 0)?;
    let n_entity = header.num_entities * probe.entity_width();
    let n_relation = header.num_relations * probe.relation_width();
    let payload = &bytes[split + 1..];
    let expected = 4 * (n_entity + n_relation);
    if payload.len() != expected {
        return Err(CheckpointError::Size {
            expected,
            actual: payload.len(),
        });
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let entity: Vec<f32> = values.by_ref().take(n_entity).collect();
    let relation: Vec<f32> = values.collect();
    Ok(KgModel::from_parts(
        header.kind,
        header.num_entities,
        header.num_relations,
        sphere,
        entity,
        relation,
    )?)
}

pub fn save_checkpoint(model: &KgModel<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(&to_bytes(model)).map_err(io)?;
    file.sync_all().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<KgModel<f32>, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
