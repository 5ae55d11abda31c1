//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `"PAULCKPT"`, `u32` version, `u32` array count, then per array
//! `u32` name length, UTF-8 name, `u32` rows, `u32` cols, `rows·cols` f64
//! values; finally `u32` trailer length and a JSON trailer describing the
//! networks and the training configuration.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use paul_core::networks::{MlpSpec, ModelParams, ModelSpec};
use paul_core::trainer::TrainConfig;
use paul_core::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PAULCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint trailer: {0}")]
    Trailer(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] paul_core::ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Trailer {
    pub model: ModelSpec,
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize, what: &str) -> io::Result<u32> {
    u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, format!("{what} too large")))
}

pub fn encode(params: &ModelParams, config: &TrainConfig) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, len_u32(params.arrays().len(), "array count")?);
    for a in params.arrays() {
        put_u32(&mut out, len_u32(a.name.len(), "name")?);
        out.extend_from_slice(a.name.as_bytes());
        put_u32(&mut out, len_u32(a.value.rows(), "rows")?);
        put_u32(&mut out, len_u32(a.value.cols(), "cols")?);
        for v in a.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let spec = params.spec();
    let trailer = Trailer {
        model: spec.clone(),
        encoder: spec.encoder_spec(),
        decoder: spec.decoder_spec(),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&trailer).map_err(io::Error::other)?;
    put_u32(&mut out, len_u32(json.len(), "trailer")?);
    out.extend_from_slice(&json);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = c.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| CheckpointError::Malformed("array name is not UTF-8".into()))?
            .to_string();
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CheckpointError::Malformed(format!("array {name} is too large")))?;
        let raw = c.take(n)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let m = Matrix::from_vec(rows, cols, values).expect("length computed from shape");
        named.push((name, m));
    }
    let tlen = c.u32()? as usize;
    let trailer: Trailer = serde_json::from_slice(c.take(tlen)?)?;
    if c.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    let params = ModelParams::from_arrays(trailer.model, named)?;
    Ok(Checkpoint {
        params,
        config: trailer.config,
    })
}

pub fn save(path: &Path, params: &ModelParams, config: &TrainConfig) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = encode(params, config).map_err(io_err)?;
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    f.flush().map_err(io_err)
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    decode(&bytes)
}
