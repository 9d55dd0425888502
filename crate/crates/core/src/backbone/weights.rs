//! `MCGW` weight container (version 1).
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "MCGW"
//! version      u32      1
//! topology     u32 byte length, UTF-8
//! norm_count   u32      number of input channels c
//! norm_mean    f32 x c
//! norm_std     f32 x c
//! layer_count  u32
//! per layer:
//!   name       u32 byte length, UTF-8
//!   kind       u8       0 = conv, 1 = linear
//!   ndim       u8       4 (conv) or 2 (linear), then ndim x u32 dims
//!   bias_ndim  u8       0 (no bias) or 1, then bias_ndim x u32 dims
//!   weights    f32 x prod(dims), row-major
//!   bias       f32 x prod(bias dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MCGW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub kind: LayerKind,
    pub shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
    pub values: Vec<f32>,
    pub bias: Vec<f32>,
}

impl WeightTensor {
    pub fn conv(name: &str, c_out: usize, c_in: usize, values: Vec<f32>, bias: Vec<f32>) -> Self {
        WeightTensor {
            name: name.to_string(),
            kind: LayerKind::Conv,
            shape: vec![c_out, c_in, 3, 3],
            bias_shape: vec![c_out],
            values,
            bias,
        }
    }

    pub fn linear(name: &str, n_out: usize, n_in: usize, values: Vec<f32>, bias: Option<Vec<f32>>) -> Self {
        let (bias_shape, bias) = match bias {
            Some(b) => (vec![n_out], b),
            None => (vec![], vec![]),
        };
        WeightTensor { name: name.to_string(), kind: LayerKind::Linear, shape: vec![n_out, n_in], bias_shape, values, bias }
    }

    fn check(&self) -> Result<()> {
        let want_ndim = match self.kind {
            LayerKind::Conv => 4,
            LayerKind::Linear => 2,
        };
        if self.shape.len() != want_ndim {
            return Err(Error::ShapeMismatch(format!("{}: {} dims for a {:?} layer", self.name, self.shape.len(), self.kind)));
        }
        if self.bias_shape.len() > 1 {
            return Err(Error::ShapeMismatch(format!("{}: bias must be 1-D", self.name)));
        }
        let n: usize = self.shape.iter().product();
        let nb: usize = if self.bias_shape.is_empty() { 0 } else { self.bias_shape.iter().product() };
        if n != self.values.len() || nb != self.bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: declared {n}+{nb} values, holds {}+{}",
                self.name,
                self.values.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub topology: String,
    pub norm_mean: Vec<f32>,
    pub norm_std: Vec<f32>,
    pub layers: Vec<WeightTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ShapeMismatch(format!(
                "unexpected end of file at byte {} reading {what} ({n} bytes needed, {} left)",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::ShapeMismatch(format!("{what} is not UTF-8")))
    }

    fn dims(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.u8(what)? as usize;
        (0..n).map(|_| self.u32(what).map(|d| d as usize)).collect()
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::ShapeMismatch(format!("{what} too large")))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl WeightFile {
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic: [u8; 4] = match r.take(4, "magic") {
            Ok(m) => m.try_into().unwrap(),
            Err(_) => {
                let mut found = [0u8; 4];
                found[..buf.len()].copy_from_slice(buf);
                return Err(Error::BadMagic { expected: MAGIC, found });
            }
        };
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch { expected: VERSION, found: version });
        }
        let topology = r.string("topology")?;
        let nc = r.u32("norm count")? as usize;
        let norm_mean = r.f32s(nc, "norm mean")?;
        let norm_std = r.f32s(nc, "norm std")?;
        let n_layers = r.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let name = r.string("layer name")?;
            let kind = match r.u8("layer kind")? {
                0 => LayerKind::Conv,
                1 => LayerKind::Linear,
                k => return Err(Error::ShapeMismatch(format!("{name}: unknown layer kind {k}"))),
            };
            let shape = r.dims("shape")?;
            let bias_shape = r.dims("bias shape")?;
            let n: usize = shape.iter().product();
            let nb: usize = if bias_shape.is_empty() { 0 } else { bias_shape.iter().product() };
            let values = r.f32s(n, &format!("{name} weights"))?;
            let bias = r.f32s(nb, &format!("{name} bias"))?;
            let t = WeightTensor { name, kind, shape, bias_shape, values, bias };
            t.check()?;
            layers.push(t);
        }
        if r.pos != buf.len() {
            return Err(Error::ShapeMismatch(format!("{} trailing bytes after last layer", buf.len() - r.pos)));
        }
        Ok(WeightFile { topology, norm_mean, norm_std, layers })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.norm_mean.len() != self.norm_std.len() {
            return Err(Error::ShapeMismatch("normalization mean/std lengths differ".into()));
        }
        let mut out = Vec::new();
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend((s.len() as u32).to_le_bytes());
            out.extend(s.as_bytes());
        };
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &self.topology);
        out.extend((self.norm_mean.len() as u32).to_le_bytes());
        for v in self.norm_mean.iter().chain(&self.norm_std) {
            out.extend(v.to_le_bytes());
        }
        out.extend((self.layers.len() as u32).to_le_bytes());
        for t in &self.layers {
            t.check()?;
            put_str(&mut out, &t.name);
            out.push(match t.kind {
                LayerKind::Conv => 0,
                LayerKind::Linear => 1,
            });
            for dims in [&t.shape, &t.bias_shape] {
                out.push(dims.len() as u8);
                for &d in dims.iter() {
                    out.extend((d as u32).to_le_bytes());
                }
            }
            for v in t.values.iter().chain(&t.bias) {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn layer(&self, name: &str) -> Option<&WeightTensor> {
        self.layers.iter().find(|l| l.name == name)
    }
}
