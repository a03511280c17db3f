//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     b"SPARCCKP"
//! version   u32
//! width     u8            element width in bytes (4 = f32, 8 = f64)
//! step      u64           global training step
//! meta      u32 len + UTF-8 `key=value` lines
//! sets      u32 count, then per set:
//!             name (u16 len + UTF-8), adam step u64, entries u32,
//!             per entry: name (u16 len + UTF-8), rank u8, dims u32 * rank
//! payload   per set, per entry: values, first moments, second moments
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::params::{Entry, ParameterSet};
use crate::nn::tensor::Tensor;
use crate::real::Real;

pub const MAGIC: &[u8; 8] = b"SPARCCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    pub global_step: u64,
    pub meta: Vec<(String, String)>,
    pub sets: Vec<(String, ParameterSet<F>)>,
}

impl<F: Real> PartialEq for Checkpoint<F> {
    fn eq(&self, other: &Self) -> bool {
        self.global_step == other.global_step && self.meta == other.meta && self.sets == other.sets
    }
}

impl<F: Real> Checkpoint<F> {
    pub fn new(global_step: u64) -> Self {
        Self {
            global_step,
            meta: Vec::new(),
            sets: Vec::new(),
        }
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&self, name: &str) -> Option<&ParameterSet<F>> {
        self.sets.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(F::BYTES as u8);
        out.extend_from_slice(&self.global_step.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.meta {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.sets.len() as u32).to_le_bytes());
        for (name, set) in &self.sets {
            put_str(&mut out, name);
            out.extend_from_slice(&set.step().to_le_bytes());
            out.extend_from_slice(&(set.len() as u32).to_le_bytes());
            for (entry, t) in set.iter() {
                put_str(&mut out, entry);
                out.push(t.shape().len() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
            }
        }
        for (_, set) in &self.sets {
            for name in set.names() {
                let e = set.entry(name).expect("listed name");
                for t in [&e.value, &e.m, &e.v] {
                    for &x in t.data() {
                        x.write_le(&mut out);
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let (width, global_step) = read_preamble(&mut r)?;
        if width as usize != F::BYTES {
            return Err(Error::Format(alloc::format!(
                "checkpoint stores {width}-byte values, reader expects {}",
                F::BYTES
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta_text = core::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let meta = meta_text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (String::from(k), String::from(v)))
            .collect();
        let n_sets = r.u32()? as usize;
        let mut layout = Vec::with_capacity(n_sets);
        for _ in 0..n_sets {
            let name = r.string()?;
            let step = r.u64()?;
            let n = r.u32()? as usize;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let ename = r.string()?;
                let rank = r.u8()? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(r.u32()? as usize);
                }
                entries.push((ename, shape));
            }
            layout.push((name, step, entries));
        }
        let mut sets = Vec::with_capacity(n_sets);
        for (name, step, entries) in layout {
            let mut set = ParameterSet::new();
            for (ename, shape) in entries {
                let n: usize = shape.iter().product();
                let mut read = || -> Result<Tensor<F>> {
                    let raw = r.take(n * F::BYTES)?;
                    let data = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
                    Tensor::new(shape.clone(), data)
                };
                let value = read()?;
                let m = read()?;
                let v = read()?;
                set.insert_entry(ename, Entry { value, m, v });
            }
            set.set_step(step);
            sets.push((name, set));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(Self {
            global_step,
            meta,
            sets,
        })
    }
}

/// Element width (4 or 8) recorded in a checkpoint header.
pub fn peek_width(bytes: &[u8]) -> Result<u8> {
    let mut r = Reader { bytes, pos: 0 };
    read_preamble(&mut r).map(|(w, _)| w)
}

fn read_preamble(r: &mut Reader<'_>) -> Result<(u8, u64)> {
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(alloc::format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let width = r.u8()?;
    if width != 4 && width != 8 {
        return Err(Error::Format(alloc::format!("bad element width {width}")));
    }
    Ok((width, r.u64()?))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        b.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(b))
    }
    fn string(&mut self) -> Result<String> {
        let mut b = [0u8; 2];
        b.copy_from_slice(self.take(2)?);
        let n = u16::from_le_bytes(b) as usize;
        core::str::from_utf8(self.take(n)?)
            .map(String::from)
            .map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}
