//! Binary parameter checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "JSEGv1"
//! repeated until EOF:
//!   name_len, name bytes (UTF-8), rank, extent × rank, f32 LE × numel
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"JSEGv1";

pub fn write_checkpoint<'a, W: Write>(
    mut out: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a JSEGv1 checkpoint".into(),
        });
    }
    let mut tensors = Vec::new();
    while cur.pos < buf.len() {
        let start = cur.pos;
        let len = cur.u32("name length")?;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: start as u64 + 4,
                msg: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = cur.u32("rank")?;
        if rank == 0 || rank > 8 {
            return Err(Error::Format {
                offset: cur.pos as u64 - 4,
                msg: format!("implausible rank {rank} for `{name}`"),
            });
        }
        let shape = (0..rank).map(|_| cur.u32("extent")).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let Some(numel) = numel.filter(|&n| n > 0 && n <= (buf.len() - cur.pos) / 4) else {
            return Err(Error::Format {
                offset: cur.pos as u64,
                msg: format!("tensor `{name}` with shape {shape:?} exceeds remaining data"),
            });
        };
        let raw = cur.take(numel * 4, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(tensors)
}
