//! Checkpoint archive: a tar with `checkpoint.json` and `params.bin`.
//!
//! `params.bin` is `CGPB`, a u32 tensor count, then per tensor a u32 name
//! length, the UTF-8 name, a u32 rank, u32 dims and little-endian f32 values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use callig_core::corpus::Vocabulary;

use crate::layers::Param;
use crate::nets::{Discriminator, Generator};
use crate::train::EpochLosses;
use crate::{Error, GanConfig, Result};

pub const CHECKPOINT_FORMAT: &str = "callig-gan/1";
const PARAMS_MAGIC: &[u8; 4] = b"CGPB";
const SIDECAR: &str = "checkpoint.json";
const PARAMS: &str = "params.bin";

/// Trained (or initialized) generator and discriminator bound to a vocabulary.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: GanConfig,
    pub vocabulary_fingerprint: String,
    pub epoch: usize,
    /// Mean losses of every completed epoch.
    pub history: Vec<EpochLosses>,
    pub(crate) vocabulary: Vocabulary,
    pub(crate) generator: Generator,
    pub(crate) discriminator: Discriminator,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    config: GanConfig,
    vocabulary_fingerprint: String,
    epoch: usize,
    vocabulary: Vocabulary,
    #[serde(default)]
    history: Vec<EpochLosses>,
}

fn write_params(tensors: &[&Param]) -> Vec<u8> {
    let mut out = PARAMS_MAGIC.to_vec();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &t.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt("params.bin is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Tensor name → (shape, values).
type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

fn read_params(buf: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != PARAMS_MAGIC {
        return Err(Error::Corrupt("params.bin has a bad magic number".into()));
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if out.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Corrupt("trailing bytes after tensors".into()));
    }
    Ok(out)
}

fn append(builder: &mut tar::Builder<Vec<u8>>, name: &str, data: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    builder.append_data(&mut header, name, data)?;
    Ok(())
}

impl Checkpoint {
    /// Serialized archive. Identical parameters give identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let sidecar = Sidecar {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            vocabulary_fingerprint: self.vocabulary_fingerprint.clone(),
            epoch: self.epoch,
            vocabulary: self.vocabulary.clone(),
            history: self.history.clone(),
        };
        let mut tensors = self.generator.tensors();
        tensors.extend(self.discriminator.tensors());
        let mut builder = tar::Builder::new(Vec::new());
        append(&mut builder, SIDECAR, &serde_json::to_vec_pretty(&sidecar)?)?;
        append(&mut builder, PARAMS, &write_params(&tensors))?;
        Ok(builder.into_inner()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut sidecar = None;
        let mut params = None;
        let mut archive = tar::Archive::new(Cursor::new(bytes));
        for entry in archive.entries()? {
            let mut entry = entry?;
            let name = entry.path()?.to_string_lossy().into_owned();
            let mut data = Vec::new();
            entry.read_to_end(&mut data)?;
            match name.as_str() {
                SIDECAR => sidecar = Some(data),
                PARAMS => params = Some(data),
                _ => {}
            }
        }
        let sidecar: Sidecar = serde_json::from_slice(
            &sidecar.ok_or_else(|| Error::Corrupt(format!("archive has no {SIDECAR}")))?,
        )?;
        if sidecar.format != CHECKPOINT_FORMAT {
            return Err(Error::Corrupt(format!("unknown format {:?}", sidecar.format)));
        }
        if sidecar.vocabulary.fingerprint() != sidecar.vocabulary_fingerprint {
            return Err(Error::Corrupt("embedded vocabulary does not match its fingerprint".into()));
        }
        let mut stored = read_params(&params.ok_or_else(|| Error::Corrupt(format!("archive has no {PARAMS}")))?)?;

        let mut ck = Checkpoint::initialize(sidecar.config, sidecar.vocabulary)?;
        ck.epoch = sidecar.epoch;
        ck.history = sidecar.history;
        let mut slots = ck.generator.tensors_mut();
        slots.extend(ck.discriminator.trainable_mut());
        for p in slots {
            let (shape, values) = stored
                .remove(&p.name)
                .ok_or_else(|| Error::Corrupt(format!("missing tensor {}", p.name)))?;
            if shape != p.shape {
                return Err(Error::Corrupt(format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    p.name, p.shape
                )));
            }
            p.value = values;
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Corrupt(format!("unexpected tensor {extra}")));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
