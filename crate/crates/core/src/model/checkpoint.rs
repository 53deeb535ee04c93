//! Binary checkpoint format.
//!
//! Layout (little-endian): `MAFW`, u32 version, u32 length + JSON config,
//! u32 tensor count, then per tensor u16 name length + name, u8 rank,
//! u32 extents and f32 payload. Biases and gates are stored with their
//! logical rank (1) rather than the padded NCHW shape used in memory.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{param_specs, NetConfig, Network};
use crate::error::{Error, Result};
use crate::exec::{ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"MAFW";
pub const VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_checkpoint<T: Scalar, W: Write>(net: &Network<T>, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = net.config().to_json();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    buf.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    for p in net.params().iter() {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| format_err("parameter name too long"))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name);
        let s = p.tensor.shape();
        let dims: Vec<usize> = match p.kind {
            ParamKind::Weight => vec![s.n, s.c, s.h, s.w],
            ParamKind::Bias | ParamKind::Gate => vec![s.numel()],
        };
        buf.push(dims.len() as u8);
        for d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Network<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes, pos: 0 };

    if cur.take(4, "magic")? != MAGIC {
        return Err(format_err("bad magic, not a checkpoint"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = cur.u32("config length")? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len, "config")?).map_err(|_| format_err("config is not UTF-8"))?;
    let cfg = NetConfig::from_json(cfg_text)?;

    let count = cur.u32("tensor count")? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| format_err("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("extent")? as usize);
        }
        let numel: usize = dims.iter().product();
        let payload = cur.take(
            numel.checked_mul(4).ok_or_else(|| format_err("tensor too large"))?,
            &name,
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(format_err(format!("duplicate tensor {name}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(format_err("trailing bytes after the last tensor"));
    }

    let mut params = ParamStore::new();
    for (name, spec) in param_specs(&cfg)? {
        let (dims, data) = tensors
            .remove(&name)
            .ok_or_else(|| format_err(format!("missing tensor {name}")))?;
        let s = spec.shape;
        let expected = match spec.kind {
            ParamKind::Weight => vec![s.n, s.c, s.h, s.w],
            ParamKind::Bias | ParamKind::Gate => vec![s.numel()],
        };
        if dims != expected {
            return Err(format_err(format!(
                "tensor {name} has extents {dims:?}, expected {expected:?}"
            )));
        }
        params.insert(name, spec.kind, Tensor::from_vec(s, data)?)?;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(format_err(format!("unexpected tensor {extra}")));
    }
    Network::from_params(&cfg, params)
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    read_checkpoint(std::io::BufReader::new(fs::File::open(path)?))
}
