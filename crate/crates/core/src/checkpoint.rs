//! Binary checkpoint format.
//!
//! ```text
//! "MFCKPT1"
//! u32 channels, u32 kernel_size, u32 depth, u32 width × depth
//! u32 parameter count
//! per parameter: u32 name length, name bytes (UTF-8),
//!                u32 rank, u64 extent × rank,
//!                f64 × product(extents)
//! ```
//! All integers and scalars are little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Arch, ModelError, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"MFCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let arch = params.arch();
    let mut out = Vec::with_capacity(64 + params.param_count() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, arch.channels);
    put_u32(&mut out, arch.kernel_size);
    put_u32(&mut out, arch.depth());
    for &w in &arch.widths {
        put_u32(&mut out, w);
    }
    put_u32(&mut out, params.names().len());
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Malformed(format!(
                "unexpected end while reading {what}"
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams, CheckpointError> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len(), "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(CheckpointError::BadMagic);
    }
    let channels = r.u32("channels")?;
    let kernel_size = r.u32("kernel size")?;
    let depth = r.u32("depth")?;
    if depth > 16 {
        return Err(CheckpointError::Malformed(format!(
            "implausible depth {depth}"
        )));
    }
    let widths = (0..depth)
        .map(|_| r.u32("width"))
        .collect::<Result<Vec<_>, _>>()?;
    let arch = Arch {
        channels,
        widths,
        kernel_size,
    };
    let count = r.u32("parameter count")?;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank > 4 {
            return Err(CheckpointError::Malformed(format!(
                "{name}: rank {rank} > 4"
            )));
        }
        let shape = (0..rank)
            .map(|_| r.u64("extent"))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(ModelError::from)?);
        names.push(name);
    }
    if !r.buf.is_empty() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            r.buf.len()
        )));
    }
    Ok(ModelParams::from_parts(arch, names, tensors)?)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&encode(params)).map_err(io_err)
}

pub fn load(path: &Path) -> Result<ModelParams, CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    decode(&bytes)
}
