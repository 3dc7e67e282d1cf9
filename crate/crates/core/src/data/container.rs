//! The `FTB1` feature container: a little-endian sequence of named
//! `N × V × D` float32 tensors, optionally carrying `u16` class labels.
//!
//! ```text
//! "FTB1" · u32 version(=1) · u32 tensor_count ·
//!   per tensor: u16 name_len · name (UTF-8) · u32 N · u32 V · u32 D ·
//!               u8 has_labels · [N × u16 labels] · N·V·D × f32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, ParseErrorKind, Result};
use crate::layers::{AffineParams, DenseMatrix};

pub const MAGIC: [u8; 4] = *b"FTB1";
pub const VERSION: u32 = 1;

/// Reserved tensor names.
pub mod names {
    pub const BASELINE_IN: &str = "baseline_in";
    pub const CLS_IN: &str = "cls_in";
    pub const LOGITS: &str = "logits";
    pub const FC_CLS: &str = "fc_cls";
    pub const FC_PEN: &str = "fc_pen";
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub n: u32,
    pub v: u32,
    pub d: u32,
    pub labels: Option<Vec<u16>>,
    pub data: Vec<f32>,
}

impl RawTensor {
    /// Stores an affine layer as `{prefix}.weight` (`N = fan_in`, `D = fan_out`)
    /// and `{prefix}.bias` (`N = 1`, `D = fan_out`).
    pub fn from_affine(prefix: &str, p: &AffineParams) -> [RawTensor; 2] {
        [
            RawTensor {
                name: format!("{prefix}.weight"),
                n: p.fan_in() as u32,
                v: 1,
                d: p.fan_out() as u32,
                labels: None,
                data: p.weights.as_slice().to_vec(),
            },
            RawTensor {
                name: format!("{prefix}.bias"),
                n: 1,
                v: 1,
                d: p.fan_out() as u32,
                labels: None,
                data: p.bias.clone(),
            },
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub tensors: Vec<RawTensor>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&RawTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn push(&mut self, t: RawTensor) {
        self.tensors.retain(|o| o.name != t.name);
        self.tensors.push(t);
    }

    /// Loads `{prefix}.weight` / `{prefix}.bias`, or `None` when absent.
    pub fn affine(&self, prefix: &str) -> Result<Option<AffineParams>> {
        let (Some(w), Some(b)) = (
            self.get(&format!("{prefix}.weight")),
            self.get(&format!("{prefix}.bias")),
        ) else {
            return Ok(None);
        };
        if w.v != 1 || b.v != 1 || b.n != 1 || b.d != w.d {
            return Err(Error::Validation(format!(
                "tensors {prefix}.weight {}x{}x{} / {prefix}.bias {}x{}x{} do not form an affine layer",
                w.n, w.v, w.d, b.n, b.v, b.d
            )));
        }
        let weights = DenseMatrix::new(w.n as usize, w.d as usize, w.data.clone())?;
        AffineParams::new(weights, b.data.clone()).map(Some)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let payload: usize = self
            .tensors
            .iter()
            .map(|t| 2 + t.name.len() + 13 + t.labels.as_ref().map_or(0, |l| 2 * l.len()) + 4 * t.data.len())
            .sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let expected = t.n as u64 * t.v as u64 * t.d as u64;
            if t.data.len() as u64 != expected {
                return Err(Error::Validation(format!(
                    "tensor {} declares {}x{}x{} but holds {} values",
                    t.name,
                    t.n,
                    t.v,
                    t.d,
                    t.data.len()
                )));
            }
            let name_len = u16::try_from(t.name.len())
                .map_err(|_| Error::Validation(format!("tensor name too long: {}", t.name.len())))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            for x in [t.n, t.v, t.d] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            match &t.labels {
                Some(labels) => {
                    if labels.len() != t.n as usize {
                        return Err(Error::Validation(format!(
                            "tensor {} has {} labels for {} rows",
                            t.name,
                            labels.len(),
                            t.n
                        )));
                    }
                    out.push(1);
                    for l in labels {
                        out.extend_from_slice(&l.to_le_bytes());
                    }
                }
                None => out.push(0),
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                kind: ParseErrorKind::BadMagic(magic.try_into().unwrap()),
            });
        }
        let version_at = cur.pos;
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Parse {
                offset: version_at as u64,
                kind: ParseErrorKind::UnsupportedVersion(version),
            });
        }
        let count = cur.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = cur.u16()? as usize;
            let name_at = cur.pos;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Parse {
                    offset: name_at as u64,
                    kind: ParseErrorKind::InvalidName,
                })?
                .to_owned();
            let dims_at = cur.pos;
            let (n, v, d) = (cur.u32()?, cur.u32()?, cur.u32()?);
            let overflow = || Error::Parse {
                offset: dims_at as u64,
                kind: ParseErrorKind::DimOverflow { n, v, d },
            };
            let count = (n as u64)
                .checked_mul(v as u64)
                .and_then(|x| x.checked_mul(d as u64))
                .ok_or_else(overflow)?;
            let byte_len = count.checked_mul(4).ok_or_else(overflow)?;
            let byte_len = usize::try_from(byte_len).map_err(|_| overflow())?;
            let has_labels = cur.u8()?;
            let labels = if has_labels != 0 {
                let raw = cur.take(2 * n as usize)?;
                Some(
                    raw.chunks_exact(2)
                        .map(|c| u16::from_le_bytes([c[0], c[1]]))
                        .collect(),
                )
            } else {
                None
            };
            let raw = cur.take(byte_len)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(RawTensor {
                name,
                n,
                v,
                d,
                labels,
                data,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Parse {
                offset: cur.pos as u64,
                kind: ParseErrorKind::TrailingBytes((bytes.len() - cur.pos) as u64),
            });
        }
        Ok(Self { tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let tmp = path.with_extension("ftb.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(Error::Parse {
                offset: self.pos as u64,
                kind: ParseErrorKind::Truncated {
                    needed: len as u64,
                    available: available as u64,
                },
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
