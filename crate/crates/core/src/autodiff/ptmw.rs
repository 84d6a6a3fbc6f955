//! Little-endian weight container: `PTMW`, u32 version, u32 count, then per
//! parameter a u32-length UTF-8 name, u32 rank, u32 dims and f32 values.

use std::io::{Read, Write};
use std::path::Path;

use super::param::{ModelParams, Parameter};
use crate::error::{io_err, Error, Result};
use crate::scalar::Scalar;

pub const PTMW_MAGIC: &[u8; 4] = b"PTMW";
pub const PTMW_VERSION: u32 = 1;

pub fn write_params<S: Scalar>(path: &Path, params: &ModelParams<S>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(PTMW_MAGIC);
    out.extend_from_slice(&PTMW_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.value {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("weight file ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_params<S: Scalar>(path: &Path) -> Result<ModelParams<S>> {
    let mut buf = Vec::new();
    std::fs::File::open(path).map_err(io_err(path))?.read_to_end(&mut buf).map_err(io_err(path))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if &magic != PTMW_MAGIC {
        return Err(Error::BadMagic { expected: "PTMW", found: magic });
    }
    let version = c.u32("version")?;
    if version != PTMW_VERSION {
        return Err(Error::UnsupportedVersion { format: "PTMW", version });
    }
    let count = c.u32("count")?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Params("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank).map(|_| c.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4, "values")?;
        let value = raw.chunks_exact(4).map(|b| S::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect();
        params.push(Parameter::new(name, shape, value)?);
    }
    if c.pos != buf.len() {
        return Err(Error::DimensionMismatch(format!("{} trailing bytes after weights", buf.len() - c.pos)));
    }
    Ok(params)
}
