//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8  b"DSNCKPT1"
//! version  u32
//! hash     32 sha-256 of the architecture descriptor
//! count    u32
//! per tensor: name_len u16, name bytes, ndim u8, dims u64 x ndim
//! data     f64 little-endian, tensors concatenated in declared order
//! ```
//!
//! Loaders reject unknown versions, mismatched architecture hashes, and any
//! size inconsistency; parsing arbitrary bytes never panics.

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

use super::Network;

const MAGIC: &[u8; 8] = b"DSNCKPT1";
const VERSION: u32 = 1;
/// Upper bound on total elements: guards allocation from hostile headers.
const MAX_ELEMENTS: u64 = 1 << 28;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("architecture hash mismatch: checkpoint was written by a different model")]
    ArchMismatch,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error("tensor {index} has shape {got:?}, expected {want:?}")]
    ShapeMismatch { index: usize, got: Vec<usize>, want: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct CheckpointFile {
    pub arch_hash: [u8; 32],
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

pub fn descriptor_hash(descriptor: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(descriptor.as_bytes());
    h.finalize().into()
}

/// All state tensors of a network in declared order: parameters first, then
/// buffers (running statistics).
fn state_tensors(net: &mut dyn Network) -> Vec<(String, ArrayD<f64>)> {
    let mut out = Vec::new();
    for (i, p) in net.params().into_iter().enumerate() {
        out.push((format!("param.{i}"), p.value.clone()));
    }
    for (i, b) in net.buffers().into_iter().enumerate() {
        out.push((format!("buffer.{i}"), b.clone()));
    }
    out
}

pub fn save_network(path: &Path, net: &mut dyn Network) -> Result<(), CheckpointError> {
    let descriptor = net.descriptor();
    let tensors = state_tensors(net);
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&descriptor_hash(&descriptor));
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.ndim() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &tensors {
        for &v in t.as_slice().expect("standard layout") {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Parse checkpoint bytes. Safe on arbitrary input.
pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<CheckpointFile, CheckpointError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        let end = pos.checked_add(n).ok_or(CheckpointError::Corrupt("offset overflow"))?;
        if end > bytes.len() {
            return Err(CheckpointError::Corrupt("truncated"));
        }
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };

    if take(&mut pos, 8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut arch_hash = [0u8; 32];
    arch_hash.copy_from_slice(take(&mut pos, 32)?);
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if count > 4096 {
        return Err(CheckpointError::Corrupt("implausible tensor count"));
    }

    let mut metas: Vec<(String, Vec<usize>)> = Vec::with_capacity(count);
    let mut total: u64 = 0;
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8"))?
            .to_owned();
        let ndim = take(&mut pos, 1)?[0] as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt("implausible rank"));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut elems: u64 = 1;
        for _ in 0..ndim {
            let d = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            elems = elems
                .checked_mul(d)
                .ok_or(CheckpointError::Corrupt("element count overflow"))?;
            if elems > MAX_ELEMENTS {
                return Err(CheckpointError::Corrupt("tensor too large"));
            }
            dims.push(d as usize);
        }
        total = total
            .checked_add(elems)
            .ok_or(CheckpointError::Corrupt("element count overflow"))?;
        if total > MAX_ELEMENTS {
            return Err(CheckpointError::Corrupt("checkpoint too large"));
        }
        metas.push((name, dims));
    }

    let expected_bytes = total
        .checked_mul(8)
        .ok_or(CheckpointError::Corrupt("element count overflow"))?;
    if (bytes.len() - pos) as u64 != expected_bytes {
        return Err(CheckpointError::Corrupt("data section size mismatch"));
    }

    let mut tensors = Vec::with_capacity(count);
    for (name, dims) in metas {
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            data.push(v);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|_| CheckpointError::Corrupt("shape/data mismatch"))?;
        tensors.push((name, arr));
    }
    Ok(CheckpointFile { arch_hash, tensors })
}

/// Load a checkpoint into an existing network, validating the architecture
/// hash and every tensor shape.
pub fn load_network(path: &Path, net: &mut dyn Network) -> Result<(), CheckpointError> {
    let bytes = std::fs::read(path)?;
    let file = read_checkpoint_bytes(&bytes)?;
    if file.arch_hash != descriptor_hash(&net.descriptor()) {
        return Err(CheckpointError::ArchMismatch);
    }
    let n_params = net.params().len();
    let expected = n_params + net.buffers().len();
    if file.tensors.len() != expected {
        return Err(CheckpointError::Corrupt("tensor count mismatch"));
    }
    for (index, ((_, tensor), dest)) in file
        .tensors
        .iter()
        .zip(net.params().into_iter().map(|p| &mut p.value).collect::<Vec<_>>())
        .enumerate()
    {
        if tensor.shape() != dest.shape() {
            return Err(CheckpointError::ShapeMismatch {
                index,
                got: tensor.shape().to_vec(),
                want: dest.shape().to_vec(),
            });
        }
        dest.assign(tensor);
    }
    for (off, ((_, tensor), dest)) in
        file.tensors[n_params..].iter().zip(net.buffers()).enumerate()
    {
        if tensor.shape() != dest.shape() {
            return Err(CheckpointError::ShapeMismatch {
                index: n_params + off,
                got: tensor.shape().to_vec(),
                want: dest.shape().to_vec(),
            });
        }
        dest.assign(tensor);
    }
    Ok(())
}
