use std::fs;
use std::path::Path;

use super::KnowledgeGraph;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MHFT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visual, Modality::Textual];

    pub fn file_name(self) -> &'static str {
        match self {
            Modality::Visual => super::VISUAL_FILE,
            Modality::Textual => super::TEXTUAL_FILE,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Pooled raw features, one row per entity. Rows with `mask = false` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub modality: Modality,
    pub dim: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl ModalityFeatures {
    pub fn empty(modality: Modality, num_entities: usize, dim: usize) -> Self {
        Self {
            modality,
            dim,
            data: vec![0.0; num_entities * dim],
            mask: vec![false; num_entities],
        }
    }

    pub fn num_entities(&self) -> usize {
        self.mask.len()
    }

    pub fn row(&self, e: usize) -> &[f32] {
        &self.data[e * self.dim..(e + 1) * self.dim]
    }

    pub fn row_mut(&mut self, e: usize) -> &mut [f32] {
        &mut self.data[e * self.dim..(e + 1) * self.dim]
    }

    pub fn present(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Zeroes a row and marks it missing.
    pub fn remove(&mut self, e: usize) {
        self.row_mut(e).fill(0.0);
        self.mask[e] = false;
    }

    /// One single-vector record per present entity, in id order.
    pub fn to_records(&self, graph: &KnowledgeGraph) -> Vec<MhftRecord> {
        (0..self.num_entities())
            .filter(|&e| self.mask[e])
            .map(|e| MhftRecord {
                key: graph.entities.name(e as u32).unwrap_or("?").to_owned(),
                vectors: vec![self.row(e).to_vec()],
            })
            .collect()
    }
}

/// One keyed entry of an `MHFT` file: possibly several raw vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MhftRecord {
    pub key: String,
    pub vectors: Vec<Vec<f32>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_owned(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses an `MHFT` file into its raw records and feature dimension.
pub fn read_mhft(path: &Path) -> Result<(usize, Vec<MhftRecord>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |msg: String| Error::Format {
        path: path.to_owned(),
        msg,
    };
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(fmt("bad magic, expected MHFT".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let rows = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(fmt("feature dimension is zero".into()));
    }
    let mut records = Vec::with_capacity(rows);
    for _ in 0..rows {
        let klen = r.u32()? as usize;
        let key = std::str::from_utf8(r.take(klen)?)
            .map_err(|_| fmt("entity key is not UTF-8".into()))?
            .to_owned();
        let count = r.u32()? as usize;
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let bytes = r.take(4 * dim)?;
            vectors.push(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        records.push(MhftRecord { key, vectors });
    }
    if r.pos != buf.len() {
        return Err(fmt(format!(
            "{} trailing bytes; row count or feature dimension inconsistent",
            buf.len() - r.pos
        )));
    }
    Ok((dim, records))
}

pub fn write_mhft(path: &Path, dim: usize, records: &[MhftRecord]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for rec in records {
        out.extend_from_slice(&(rec.key.len() as u32).to_le_bytes());
        out.extend_from_slice(rec.key.as_bytes());
        out.extend_from_slice(&(rec.vectors.len() as u32).to_le_bytes());
        for v in &rec.vectors {
            if v.len() != dim {
                return Err(Error::dim(format!("feature vector for `{}`", rec.key), dim, v.len()));
            }
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads and mean-pools an `MHFT` file against the graph's entity vocabulary.
pub fn load_features(path: &Path, graph: &KnowledgeGraph, modality: Modality) -> Result<ModalityFeatures> {
    let (dim, records) = read_mhft(path)?;
    let mut feats = ModalityFeatures::empty(modality, graph.num_entities(), dim);
    let mut unknown = 0usize;
    for rec in records {
        let Some(e) = graph.entities.id(&rec.key) else {
            unknown += 1;
            continue;
        };
        if rec.vectors.is_empty() {
            continue;
        }
        let e = e as usize;
        let row = feats.row_mut(e);
        // accumulate in f64 so pooling many vectors does not drift
        let mut acc = vec![0.0f64; dim];
        for v in &rec.vectors {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += x as f64;
            }
        }
        let n = rec.vectors.len() as f64;
        for (dst, a) in row.iter_mut().zip(acc) {
            *dst = (a / n) as f32;
        }
        feats.mask[e] = true;
    }
    if unknown > 0 {
        log::warn!("{}: {unknown} keys not in the entity vocabulary were skipped", path.display());
    }
    Ok(feats)
}
