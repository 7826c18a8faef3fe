//! Tensor snapshot format for fixtures and checkpoints.
//!
//! Layout: a 4-entry little-endian `u32` shape header (NCHW; lower-rank
//! tensors are left-padded with 1s) followed by the row-major data as
//! little-endian 64-bit floats. `f32` tensors are widened on write and
//! narrowed on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Elem, Tensor};

/// Size of the shape header in bytes.
pub const SNAPSHOT_HEADER_BYTES: usize = 16;

fn padded_shape4(shape: &[usize]) -> Result<[u32; 4]> {
    if shape.len() > 4 {
        return Err(Error::Dimension(format!(
            "snapshot format stores at most 4 dims, got shape {shape:?}"
        )));
    }
    let mut out = [1u32; 4];
    for (i, &s) in shape.iter().enumerate() {
        out[4 - shape.len() + i] = u32::try_from(s)
            .map_err(|_| Error::Dimension(format!("extent {s} exceeds u32 range")))?;
    }
    Ok(out)
}

pub fn write_snapshot<E: Elem>(path: impl AsRef<Path>, tensor: &Tensor<E>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_snapshot_to(&mut w, tensor).map_err(|e| Error::io(path, e))
}

/// Write a snapshot to any sink; used for packed checkpoint files.
pub(crate) fn write_snapshot_to<E: Elem, W: Write + ?Sized>(
    w: &mut W,
    tensor: &Tensor<E>,
) -> std::io::Result<()> {
    let shape = padded_shape4(tensor.shape())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    for s in shape {
        w.write_all(&s.to_le_bytes())?;
    }
    for v in tensor.data().iter() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<E: Elem>(path: impl AsRef<Path>) -> Result<Tensor<E>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    read_snapshot_from(&mut r).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_snapshot_from<E: Elem>(r: &mut impl Read) -> std::io::Result<Tensor<E>> {
    let mut head = [0u8; SNAPSHOT_HEADER_BYTES];
    r.read_exact(&mut head)?;
    let mut shape = [0usize; 4];
    for (i, chunk) in head.chunks_exact(4).enumerate() {
        shape[i] = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
    }
    let numel: usize = shape.iter().product();
    let mut buf = vec![0u8; numel * 8];
    r.read_exact(&mut buf)?;
    let data: Vec<E> = buf
        .chunks_exact(8)
        .map(|c| E::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(Tensor::from_vec(&shape, data))
}
