//! Binary checkpoint files.
//!
//! Layout, all little-endian: magic `EMRC`, version `u32`, step `u64`,
//! tensor count `u32`, then per tensor a `u32` name length, the UTF-8 name,
//! rank `u32`, `rank` dims as `u32` and the `f64` payload. A trailing flag
//! byte of 1 introduces the optimizer block: step counter `u64`, tensor
//! count `u32` and the first and second moment tensors in the same encoding.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::network::NetworkState;
use crate::net::spec::NetworkSpec;
use crate::solver::AdamState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EMRC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub state: NetworkState,
    pub adam: Option<AdamState>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend((d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &NetworkState, adam: Option<&AdamState>, step: u64) -> Vec<u8> {
    let named = state.named_tensors();
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend(step.to_le_bytes());
    out.extend((named.len() as u32).to_le_bytes());
    for (name, t) in &named {
        put_tensor(&mut out, name, t);
    }
    match adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            out.extend(a.t.to_le_bytes());
            out.extend(((a.m.len() + a.v.len()) as u32).to_le_bytes());
            for (kind, moments) in [("m", &a.m), ("v", &a.v)] {
                for ((name, _), t) in named.iter().zip(moments) {
                    put_tensor(&mut out, &format!("adam.{kind}.{name}"), t);
                }
            }
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, state: &NetworkState, adam: Option<&AdamState>, step: u64) -> Result<()> {
    fs::write(path, encode_checkpoint(state, adam, step))
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Reads one tensor and checks its name and dims against the expectation.
    fn tensor(&mut self, name: &str, dims: &[usize]) -> Result<Tensor> {
        let len = self.u32("tensor name length")? as usize;
        let found = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        if found != name {
            return Err(Error::Format(format!("expected tensor {name}, found {found}")));
        }
        let rank = self.u32("rank")? as usize;
        let mut got = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            got.push(self.u32("dims")? as usize);
        }
        if got != dims {
            return Err(Error::Format(format!(
                "tensor {name} has dims {got:?}, network expects {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        let raw = self.take(n * 8, name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(dims, data).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Decodes a checkpoint whose tensors must match the parameter layout of `spec`.
pub fn decode_checkpoint(bytes: &[u8], spec: &NetworkSpec) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let step = r.u64("step")?;
    let mut state = NetworkState::zeros(spec);
    let layout: Vec<(String, Vec<usize>)> = state
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.dims().to_vec()))
        .collect();
    let count = r.u32("tensor count")? as usize;
    if count != layout.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, network has {}",
            layout.len()
        )));
    }
    for ((name, dims), slot) in layout.iter().zip(state.tensors_mut()) {
        *slot = r.tensor(name, dims)?;
    }
    let adam = match r.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let t = r.u64("optimizer step")?;
            let n = r.u32("optimizer tensor count")? as usize;
            if n != 2 * layout.len() {
                return Err(Error::Format(format!(
                    "optimizer block holds {n} tensors, expected {}",
                    2 * layout.len()
                )));
            }
            let mut read = |kind: &str| -> Result<Vec<Tensor>> {
                layout
                    .iter()
                    .map(|(name, dims)| r.tensor(&format!("adam.{kind}.{name}"), dims))
                    .collect()
            };
            let m = read("m")?;
            let v = read("v")?;
            Some(AdamState { m, v, t })
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { step, state, adam })
}

pub fn load_checkpoint(path: &Path, spec: &NetworkSpec) -> Result<Checkpoint> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode_checkpoint(&bytes, spec).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
