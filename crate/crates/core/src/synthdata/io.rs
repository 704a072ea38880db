//! Dataset files.
//!
//! All integers are `u32` little-endian:
//!
//! ```text
//! "JSDSv1", sample count
//! per sample: id_len, id bytes, H, W,
//!             H·W f32 LE image values,
//!             myocardium mask, scar mask
//! ```
//!
//! Masks are bit-packed per row, most significant bit first, each row padded
//! to a whole byte. Metadata (scene spec and master seed) lives in a TOML
//! sidecar next to the dataset.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Sample, SceneSpec};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 6] = b"JSDSv1";

fn pack_rows(mask: &Mask, out: &mut Vec<u8>) {
    let (h, w) = mask.dims();
    for y in 0..h {
        for chunk_start in (0..w).step_by(8) {
            let mut byte = 0u8;
            for bit in 0..8 {
                let x = chunk_start + bit;
                if x < w && mask.get(y, x) {
                    byte |= 0x80 >> bit;
                }
            }
            out.push(byte);
        }
    }
}

pub fn encode_dataset(samples: &[Sample]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        let (h, w) = s.dims();
        out.extend_from_slice(&(s.id.len() as u32).to_le_bytes());
        out.extend_from_slice(s.id.as_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        for v in s.image.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        pack_rows(&s.myo, &mut out);
        pack_rows(&s.scar, &mut out);
    }
    out
}

pub fn write_dataset(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_dataset(samples))?;
    f.flush()?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn mask(&mut self, h: usize, w: usize, what: &str) -> Result<Mask> {
        let row_bytes = w.div_ceil(8);
        let raw = self.take(row_bytes * h, what)?;
        Ok(Mask::from_fn(h, w, |y, x| raw[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0))
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Vec<Sample>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(DATASET_MAGIC.len(), "magic")? != DATASET_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a JSDSv1 dataset".into(),
        });
    }
    let count = r.u32("sample count")?;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let id_len = r.u32("id length")?;
        let id_at = r.pos;
        let id = std::str::from_utf8(r.take(id_len, "id")?)
            .map_err(|_| Error::Format {
                offset: id_at as u64,
                msg: format!("sample {i} id is not UTF-8"),
            })?
            .to_string();
        let h = r.u32("height")?;
        let w = r.u32("width")?;
        if h == 0 || w == 0 || h.saturating_mul(w) > (buf.len() - r.pos) / 4 {
            return Err(r.err(format!("sample {i} has implausible size {h}x{w}")));
        }
        let raw = r.take(h * w * 4, "image")?;
        let image = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let myo = r.mask(h, w, "myocardium mask")?;
        let scar_at = r.pos;
        let scar = r.mask(h, w, "scar mask")?;
        let sample = Sample::new(id, Tensor::new(vec![1, h, w], image)?, myo, scar).map_err(|e| Error::Format {
            offset: scar_at as u64,
            msg: format!("sample {i}: {e}"),
        })?;
        samples.push(sample);
    }
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(samples)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    decode_dataset(&fs::read(path)?)
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub master_seed: u64,
    pub count: usize,
    pub spec: SceneSpec,
}

/// `data.jsds` → `data.jsds.meta.toml`.
pub fn metadata_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".meta.toml");
    PathBuf::from(name)
}

pub fn write_metadata(dataset: impl AsRef<Path>, meta: &DatasetMeta) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(metadata_path(dataset.as_ref()), text)?;
    Ok(())
}

pub fn read_metadata(dataset: impl AsRef<Path>) -> Result<DatasetMeta> {
    let text = fs::read_to_string(metadata_path(dataset.as_ref()))?;
    toml::from_str(&text).map_err(|e| Error::Invalid(format!("dataset metadata: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate_dataset;

    fn spec() -> SceneSpec {
        SceneSpec {
            height: 16,
            width: 20,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn round_trip_through_file() {
        let samples = generate_dataset(&spec(), 3, 5, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsds");
        write_dataset(&samples, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), samples);

        let meta = DatasetMeta {
            master_seed: 3,
            count: 5,
            spec: spec(),
        };
        write_metadata(&path, &meta).unwrap();
        assert_eq!(read_metadata(&path).unwrap(), meta);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let bytes = encode_dataset(&[]);
        assert_eq!(bytes.len(), 10);
        assert!(decode_dataset(&bytes).unwrap().is_empty());
    }

    #[test]
    fn wrong_magic_and_truncation_rejected() {
        let mut bytes = encode_dataset(&generate_dataset(&spec(), 1, 2, 1).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::Format { offset: 0, .. })));
        bytes.truncate(bytes.len() - 1);
        match decode_dataset(&bytes) {
            Err(Error::Format { offset, .. }) => assert!(offset > 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_padding_uses_whole_bytes() {
        // width 20 → 3 bytes per row
        let s = &generate_dataset(&spec(), 1, 1, 1).unwrap()[0];
        let mut packed = Vec::new();
        pack_rows(&s.myo, &mut packed);
        assert_eq!(packed.len(), 16 * 3);
    }
}
