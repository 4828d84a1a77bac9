//! Binary checkpoints, feature caches and the small text artifacts written by
//! the command-line tool.
//!
//! Both binary formats are little-endian. A checkpoint is
//!
//! ```text
//! "STGC1" u32:count { u32:name_len name u32:rank u32:dim* f64:data* }*
//! ```
//!
//! and a feature cache is `"STGF1"` followed by one record per sample,
//! `u32:index u32:len f64:data*`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::complementary::{AgentPair, AgentParams};
use crate::error::{Error, Result};
use crate::scattering::{FeatureLayout, PruneMask, TreePath};
use crate::training::{EpochRecord, MlpHead, Model, ParamSet, Standardizer};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"STGC1";
pub const FEATURE_MAGIC: &[u8; 5] = b"STGF1";

/// An owned named tensor, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidSize(format!("{what} {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, data: &[f64]) {
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.to_path_buf(),
            reason: format!("{} (at byte {})", reason.into(), self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.fail("length overflow"))?;
        let b = self.take(len)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn magic(&mut self, magic: &[u8; 5]) -> Result<()> {
        if self.bytes.len() < magic.len() || &self.bytes[..magic.len()] != magic {
            return Err(self.fail(format!("missing magic {:?}", String::from_utf8_lossy(magic))));
        }
        self.pos = magic.len();
        Ok(())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    put_u32(&mut out, tensors.len(), "tensor count")?;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.data.len())));
        }
        put_u32(&mut out, t.name.len(), "name length")?;
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len(), "rank")?;
        for &d in &t.shape {
            put_u32(&mut out, d, "dimension")?;
        }
        put_f64s(&mut out, &t.data);
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8], origin: &Path) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0, origin };
    r.magic(CHECKPOINT_MAGIC)?;
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("tensor name is not UTF-8"))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.fail(format!("tensor {name} is too large")))?;
        let data = r.f64s(n)?;
        out.push(NamedTensor { name, shape, data });
    }
    if !r.done() {
        return Err(r.fail("trailing bytes after the last tensor"));
    }
    Ok(out)
}

/// Parameters followed by `norm/mean` and `norm/scale`.
pub fn model_tensors(model: &Model) -> Vec<NamedTensor> {
    let mut out: Vec<NamedTensor> = model
        .params
        .tensors()
        .into_iter()
        .map(|t| NamedTensor {
            name: t.name,
            shape: t.shape.to_vec(),
            data: t.data.to_vec(),
        })
        .collect();
    for (name, v) in [("norm/mean", &model.norm.mean), ("norm/scale", &model.norm.scale)] {
        out.push(NamedTensor {
            name: name.into(),
            shape: vec![v.len()],
            data: v.clone(),
        });
    }
    out
}

pub fn model_from_tensors(tensors: Vec<NamedTensor>, origin: &Path) -> Result<Model> {
    let fail = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    let mut spatial = BTreeMap::new();
    let mut temporal = BTreeMap::new();
    let mut rest: BTreeMap<String, NamedTensor> = BTreeMap::new();
    for t in tensors {
        let agent = t
            .name
            .strip_prefix("agent_s/")
            .map(|p| (true, p))
            .or_else(|| t.name.strip_prefix("agent_t/").map(|p| (false, p)));
        if let Some((is_spatial, path)) = agent {
            let path: TreePath = path.parse().map_err(fail)?;
            let [r, c] = t.shape[..] else {
                return Err(fail(format!("{} must be a matrix", t.name)));
            };
            let m = Array2::from_shape_vec((r, c), t.data).expect("size checked on read");
            if is_spatial { spatial.insert(path, m) } else { temporal.insert(path, m) };
        } else if let Some(old) = rest.insert(t.name.clone(), t) {
            return Err(fail(format!("duplicate tensor {}", old.name)));
        }
    }
    let mut entries = BTreeMap::new();
    for (path, s) in spatial {
        let t = temporal
            .remove(&path)
            .ok_or_else(|| fail(format!("agent_s/{path} has no matching agent_t")))?;
        entries.insert(path, AgentPair { spatial: s, temporal: t });
    }
    if let Some(path) = temporal.keys().next() {
        return Err(fail(format!("agent_t/{path} has no matching agent_s")));
    }
    let mut take = |name: &str, rank: usize| {
        let t = rest.remove(name).ok_or_else(|| fail(format!("missing tensor {name}")))?;
        if t.shape.len() != rank {
            return Err(fail(format!("{name} has rank {}, expected {rank}", t.shape.len())));
        }
        Ok(t)
    };
    let matrix = |t: NamedTensor| Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data).expect("size checked on read");
    let head = MlpHead {
        w1: matrix(take("mlp/w1", 2)?),
        b1: Array1::from(take("mlp/b1", 1)?.data),
        w2: matrix(take("mlp/w2", 2)?),
        b2: Array1::from(take("mlp/b2", 1)?.data),
    };
    let norm = Standardizer {
        mean: take("norm/mean", 1)?.data,
        scale: take("norm/scale", 1)?.data,
    };
    if let Some(name) = rest.keys().next() {
        return Err(fail(format!("unexpected tensor {name}")));
    }
    head.check().map_err(|e| fail(e.to_string()))?;
    if norm.len() != head.feature_len() || norm.scale.len() != norm.mean.len() {
        return Err(fail(format!(
            "standardizer has {} dimensions, classifier expects {}",
            norm.len(),
            head.feature_len()
        )));
    }
    Ok(Model {
        params: ParamSet {
            agents: AgentParams::from_entries(entries),
            head,
        },
        norm,
    })
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    encode_tensors(&model_tensors(model))
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    write_bytes(path, &encode_checkpoint(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_tensors(decode_tensors(&bytes, path)?, path)
}

pub fn encode_features(records: &[(usize, Vec<f64>)]) -> Result<Vec<u8>> {
    let mut out = FEATURE_MAGIC.to_vec();
    for (index, data) in records {
        put_u32(&mut out, *index, "sample index")?;
        put_u32(&mut out, data.len(), "feature length")?;
        put_f64s(&mut out, data);
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8], origin: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut r = Reader { bytes, pos: 0, origin };
    r.magic(FEATURE_MAGIC)?;
    let mut out = Vec::new();
    while !r.done() {
        let index = r.u32()?;
        let len = r.u32()?;
        out.push((index, r.f64s(len)?));
    }
    Ok(out)
}

/// Sidecar manifest next to a feature cache: `features.bin` gets
/// `features.bin.manifest`.
pub fn manifest_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Writes the cache and its node-order manifest.
pub fn write_feature_cache(path: &Path, records: &[(usize, Vec<f64>)], layout: &FeatureLayout) -> Result<()> {
    if let Some((i, v)) = records.iter().find(|(_, v)| v.len() != layout.feature_len()) {
        return Err(Error::Shape(format!(
            "sample {i} has {} features, layout has {}",
            v.len(),
            layout.feature_len()
        )));
    }
    write_bytes(path, &encode_features(records)?)?;
    write_text(&manifest_path(path), &layout.to_manifest())
}

pub fn read_feature_cache(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn write_mask(path: &Path, mask: &PruneMask) -> Result<()> {
    write_text(path, &mask.to_text())
}

pub fn read_mask(path: &Path) -> Result<PruneMask> {
    PruneMask::from_text(&read_text(path)?, &path.display().to_string())
}

/// One tab-separated line per epoch.
pub fn format_log(log: &[EpochRecord]) -> String {
    let mut s = String::from("# epoch\tloss\ttrain_acc\tval_acc\n");
    for r in log {
        s.push_str(&format!("{r}\n"));
    }
    s
}

/// Rows are true classes, columns predictions.
pub fn format_confusion(confusion: &[Vec<usize>]) -> String {
    confusion
        .iter()
        .map(|row| row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("\t") + "\n")
        .collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
