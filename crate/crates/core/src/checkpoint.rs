//! Versioned binary container for primitive sets and optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WIPS" | version: u32 | header_len: u32 | header JSON
//!        | count × record (f64 LE) | [optimizer m, v (f64 LE)] | crc32: u32
//! ```
//!
//! The CRC covers every preceding byte.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::CovKind;
use crate::primitive::{SymMat3, Vec3};
use crate::projection::Primitive3D;
use crate::raster::{AccumMode, Primitive2D, PARAMS_PER_PRIMITIVE};
use crate::trainer::{AdamState, TrainConfig};

pub const MAGIC: &[u8; 4] = b"WIPS";
pub const FORMAT_VERSION: u32 = 1;
/// Scalars per 3D record: mu[3], cov[6], freq[3], color[3], opacity[1].
pub const SCENE_RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("format version {found} is not supported (expected {FORMAT_VERSION})")]
    FormatVersionMismatch { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint was written in {found} mode, {expected} mode requested")]
    ModeMismatch { expected: AccumMode, found: AccumMode },
    #[error("invalid checkpoint header: {0}")]
    BadHeader(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Image2d,
    Scene3d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: ContentKind,
    pub mode: AccumMode,
    pub parameterization: CovKind,
    pub count: usize,
    pub seed: u64,
    pub step: u64,
    pub width: usize,
    pub height: usize,
    pub scalar: String,
    pub has_optimizer: bool,
    pub config: Option<TrainConfig>,
}

impl Header {
    fn record_len(&self) -> usize {
        match self.kind {
            ContentKind::Image2d => PARAMS_PER_PRIMITIVE,
            ContentKind::Scene3d => SCENE_RECORD_LEN,
        }
    }
}

/// Decoded container: header, flat records and optional optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Header,
    pub records: Vec<f64>,
    pub adam: Option<AdamState>,
}

/// A 2D fitting snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub primitives: Vec<Primitive2D>,
    pub adam: AdamState,
    pub width: usize,
    pub height: usize,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Rejects a checkpoint whose accumulation mode differs from `mode`.
    pub fn expect_mode(&self, mode: AccumMode) -> Result<(), CheckpointError> {
        if self.config.mode != mode {
            return Err(CheckpointError::ModeMismatch { expected: mode, found: self.config.mode });
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let header = Header {
            kind: ContentKind::Image2d,
            mode: self.config.mode,
            parameterization: self.config.cov,
            count: self.primitives.len(),
            seed: self.config.seed,
            step: self.adam.step,
            width: self.width,
            height: self.height,
            scalar: "f64".into(),
            has_optimizer: true,
            config: Some(self.config.clone()),
        };
        let records = self.primitives.iter().flat_map(|p| p.to_params()).collect();
        Container { header, records, adam: Some(self.adam.clone()) }
    }

    pub fn from_container(c: Container) -> Result<Self, CheckpointError> {
        let h = &c.header;
        if h.kind != ContentKind::Image2d {
            return Err(CheckpointError::BadHeader("expected a 2D image checkpoint".into()));
        }
        let config = h.config.clone().ok_or_else(|| CheckpointError::BadHeader("missing training config".into()))?;
        if config.mode != h.mode || config.cov != h.parameterization || config.seed != h.seed {
            return Err(CheckpointError::BadHeader("header fields disagree with the stored config".into()));
        }
        let adam = c.adam.ok_or_else(|| CheckpointError::BadHeader("missing optimizer state".into()))?;
        if adam.step != h.step {
            return Err(CheckpointError::BadHeader("optimizer step disagrees with header".into()));
        }
        let primitives = c
            .records
            .chunks_exact(PARAMS_PER_PRIMITIVE)
            .map(|r| Primitive2D::from_params(h.parameterization, r.try_into().expect("record length")))
            .collect();
        Ok(Self { config, primitives, adam, width: h.width, height: h.height })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.to_container())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::from_container(decode(bytes)?)
    }
}

pub fn encode(c: &Container) -> Vec<u8> {
    let header = serde_json::to_vec(&c.header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * c.records.len() * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let mut put = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    put(&c.records);
    if let Some(adam) = &c.adam {
        put(&adam.m);
        put(&adam.v);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect()
}

pub fn decode(bytes: &[u8]) -> Result<Container, CheckpointError> {
    if bytes.len() < 16 {
        return Err(CheckpointError::Corrupt(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::Corrupt("missing WIPS magic".into()));
    }
    let body = bytes.len() - 4;
    if crc32fast::hash(&bytes[..body]) != read_u32(bytes, body) {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::FormatVersionMismatch { found: version });
    }
    let header_len = read_u32(bytes, 8) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= body)
        .ok_or_else(|| CheckpointError::Corrupt("header length exceeds file".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    if header.scalar != "f64" {
        return Err(CheckpointError::BadHeader(format!("unsupported scalar type {}", header.scalar)));
    }
    let n_records = header.count * header.record_len();
    let n_adam = if header.has_optimizer { 2 * header.count * PARAMS_PER_PRIMITIVE } else { 0 };
    let payload = &bytes[header_end..body];
    if payload.len() != 8 * (n_records + n_adam) {
        return Err(CheckpointError::Corrupt(format!(
            "payload is {} bytes, header declares {} records",
            payload.len(),
            header.count
        )));
    }
    let mut values = read_f64s(payload);
    let adam = header.has_optimizer.then(|| {
        let v = values.split_off(n_records + n_adam / 2);
        let m = values.split_off(n_records);
        AdamState { m, v, step: header.step }
    });
    Ok(Container { header, records: values, adam })
}

fn io_err(path: &Path, source: io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Reads any container, for tools that only need the records.
pub fn load_container(path: impl AsRef<Path>) -> Result<Container, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode(&bytes)
}

pub fn encode_scene(prims: &[Primitive3D]) -> Vec<u8> {
    let records = prims
        .iter()
        .flat_map(|p| {
            let mut r = Vec::with_capacity(SCENE_RECORD_LEN);
            r.extend_from_slice(p.mu.as_slice());
            r.extend_from_slice(&p.cov.as_array());
            r.extend_from_slice(p.freq.as_slice());
            r.extend_from_slice(&p.color);
            r.push(p.opacity);
            r
        })
        .collect();
    let header = Header {
        kind: ContentKind::Scene3d,
        mode: AccumMode::Alpha,
        parameterization: CovKind::Cholesky,
        count: prims.len(),
        seed: 0,
        step: 0,
        width: 0,
        height: 0,
        scalar: "f64".into(),
        has_optimizer: false,
        config: None,
    };
    encode(&Container { header, records, adam: None })
}

pub fn decode_scene(bytes: &[u8]) -> Result<Vec<Primitive3D>, CheckpointError> {
    let c = decode(bytes)?;
    if c.header.kind != ContentKind::Scene3d {
        return Err(CheckpointError::BadHeader("expected a 3D scene".into()));
    }
    Ok(c.records
        .chunks_exact(SCENE_RECORD_LEN)
        .map(|r| Primitive3D {
            mu: Vec3::new(r[0], r[1], r[2]),
            cov: SymMat3::from_array(r[3..9].try_into().expect("six entries")),
            freq: Vec3::new(r[9], r[10], r[11]),
            color: [r[12], r[13], r[14]],
            opacity: r[15],
        })
        .collect())
}
