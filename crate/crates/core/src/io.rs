//! On-disk formats: the `MMRC` named-tensor checkpoint and JSON-lines segment
//! files.
//!
//! Checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! "MMRC"  u32 version
//! u32 len, UTF-8 JSON architecture config
//! u32 tensor count
//! per tensor: u32 len, UTF-8 name; u32 rank; u64 dims[rank]; f64 data[prod(dims)]
//! ```
//!
//! Tensors are written in name order, so equal states give equal bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::model::{ArchConfig, ModelState};
use crate::synth::Segment;
use crate::tensor::Tensor;
use crate::train::AdamState;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMRC";
pub const VERSION: u32 = 1;

const OPT_M: &str = "opt.m.";
const OPT_V: &str = "opt.v.";
const OPT_T: &str = "opt.t";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Model parameters, plus optimizer moments under `opt.*` names when
    /// given.
    pub fn new(state: &ModelState, opt: Option<&AdamState>) -> Result<Self> {
        let mut tensors = state.params.clone();
        if let Some(o) = opt {
            for (prefix, moments) in [(OPT_M, &o.m), (OPT_V, &o.v)] {
                for (name, data) in moments {
                    let shape = state
                        .params
                        .get(name)
                        .ok_or_else(|| Error::Contract(format!("optimizer state for unknown parameter {name}")))?
                        .shape()
                        .to_vec();
                    tensors.insert(format!("{prefix}{name}"), Tensor::new(shape, data.clone())?);
                }
            }
            tensors.insert(OPT_T.to_string(), Tensor::scalar(o.t as f64));
        }
        Ok(Self {
            arch: state.cfg,
            tensors,
        })
    }

    pub fn model(&self) -> Result<ModelState> {
        let params = self
            .tensors
            .iter()
            .filter(|(k, _)| !k.starts_with("opt."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let state = ModelState {
            cfg: self.arch,
            params,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn optimizer(&self) -> Result<Option<AdamState>> {
        let Some(t) = self.tensors.get(OPT_T) else {
            return Ok(None);
        };
        let t = t.data()[0];
        if !(t >= 0.0 && t.fract() == 0.0) {
            return Err(Error::Format(format!("optimizer step {t} is not a count")));
        }
        let pick = |prefix: &str| -> BTreeMap<String, Vec<f64>> {
            self.tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.data().to_vec())))
                .collect()
        };
        Ok(Some(AdamState {
            m: pick(OPT_M),
            v: pick(OPT_V),
            t: t as u64,
        }))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let arch = serde_json::to_vec(&self.arch)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_len(&mut w, arch.len())?;
        w.write_all(&arch)?;
        write_len(&mut w, self.tensors.len())?;
        for (name, t) in &self.tensors {
            write_len(&mut w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_len(&mut w, t.shape().len())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"MMRC\"")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let arch_len = read_u32(&mut r)? as usize;
        let arch_bytes = read_bytes(&mut r, arch_len)?;
        let arch: ArchConfig = serde_json::from_slice(&arch_bytes)
            .map_err(|e| Error::Format(format!("architecture config: {e}")))?;
        let count = read_u32(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, name_len)?)
                .map_err(|e| Error::Format(format!("tensor name: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(truncated)?;
                shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dimension overflow".into()))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            let raw = read_bytes(&mut r, n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self { arch, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn write_len(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Format("checkpoint is truncated".into()));
    }
    Ok(buf)
}

/// One JSON object per line.
pub fn write_segments(path: impl AsRef<Path>, segments: &[Segment]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in segments {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are ignored; any other unparsable line is an error naming
/// its line number.
pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<Segment>> {
    let r = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seg: Segment = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.as_ref().display(), i + 1)))?;
        out.push(seg);
    }
    Ok(out)
}
