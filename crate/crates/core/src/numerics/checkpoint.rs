//! Binary model checkpoints.
//!
//! Layout (little-endian): `b"GCLM"`, `u32` version, `u8` arch tag,
//! `u64` dropout-rate bits, `u32` layer count, then per layer `u64` rows,
//! `u64` cols, `u8` has-bias, followed by all weights row-major and the bias
//! vector, as `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::dense::DenseMatrix;
use super::model::{Arch, Layer, ModelParams};

const MAGIC: &[u8; 4] = b"GCLM";
const VERSION: u32 = 1;

pub fn to_bytes(p: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + p.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(p.arch().tag());
    out.extend_from_slice(&p.dropout_rate().to_bits().to_le_bytes());
    out.extend_from_slice(&(p.layers().len() as u32).to_le_bytes());
    for l in p.layers() {
        out.extend_from_slice(&(l.weight.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(l.weight.cols() as u64).to_le_bytes());
        out.push(u8::from(l.bias.is_some()));
    }
    for l in p.layers() {
        for v in l.weight.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in l.bias.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", None, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::format("checkpoint", None, "bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", None, format!("unsupported version {version}")));
    }
    let arch = Arch::from_tag(c.u8()?).ok_or_else(|| Error::format("checkpoint", None, "unknown arch tag"))?;
    let dropout = c.f64()?;
    let n_layers = c.u32()? as usize;
    if n_layers > 16 {
        return Err(Error::format("checkpoint", None, format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let has_bias = c.u8()? != 0;
        shapes.push((rows, cols, has_bias));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (i, (rows, cols, has_bias)) in shapes.into_iter().enumerate() {
        let count = rows.checked_mul(cols).ok_or_else(|| Error::format("checkpoint", Some(i), "shape overflow"))?;
        if count > (buf.len() - c.pos) / 8 {
            return Err(Error::format("checkpoint", Some(i), "truncated weights"));
        }
        let data = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let bias = if has_bias {
            Some((0..cols).map(|_| c.f64()).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        layers.push(Layer {
            weight: DenseMatrix::from_vec(rows, cols, data)?,
            bias,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::format("checkpoint", None, "trailing bytes"));
    }
    ModelParams::from_layers(arch, layers, dropout)
}

pub fn save(p: &ModelParams, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
