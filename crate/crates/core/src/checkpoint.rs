//! `MHCK` checkpoint format.
//!
//! Little-endian: magic `MHCK`, `u32` version, `u32` d, `u32` |E|, `u32` |R|,
//! `u32` visual dim, `u32` textual dim, `u32` table count, then per table a
//! `u32` name length, UTF-8 name, `u32` rows, `u32` cols and `rows·cols` raw
//! `f32` values. Tables appear in [`ModelParams::tables`] order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dims, ModelParams, Table};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"MHCK";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let dims = params.dims;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        dims.d as u32,
        dims.num_entities as u32,
        dims.num_relations as u32,
        dims.visual_dim as u32,
        dims.textual_dim as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let tables = params.tables();
    out.extend_from_slice(&(tables.len() as u32).to_le_bytes());
    for (name, t) in tables {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for &x in &t.data {
            out.extend_from_slice(&x.to_f32_lossy().to_le_bytes());
        }
    }
    out
}

pub fn save<T: Real>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&to_bytes(params)).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn err(&self, msg: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg,
        }
    }
}

pub fn from_bytes<T: Real>(buf: &[u8], path: &Path) -> Result<ModelParams<T>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic, not an MHCK checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let mut h = [0usize; 5];
    for v in h.iter_mut() {
        *v = r.u32()? as usize;
    }
    let dims = Dims {
        d: h[0],
        num_entities: h[1],
        num_relations: h[2],
        visual_dim: h[3],
        textual_dim: h[4],
    };
    let mut params = ModelParams::<T>::zeros(dims);
    let expected: Vec<(String, (usize, usize))> =
        params.tables().into_iter().map(|(n, t)| (n, t.shape())).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(r.err(format!("expected {} tables, found {count}", expected.len())));
    }
    for (slot, (want_name, want_shape)) in params.tables_mut().into_iter().zip(expected) {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.err("table name is not UTF-8".into()))?;
        if name != want_name {
            return Err(r.err(format!("expected table {want_name}, found {name}")));
        }
        let shape = (r.u32()? as usize, r.u32()? as usize);
        if shape != want_shape {
            return Err(r.err(format!(
                "table {name}: expected {}x{}, found {}x{}",
                want_shape.0, want_shape.1, shape.0, shape.1
            )));
        }
        let raw = r.take(4 * shape.0 * shape.1)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        *slot = Table::from_vec(shape.0, shape.1, data)?;
    }
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(params)
}

pub fn load<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn dims() -> Dims {
        Dims {
            d: 2,
            num_entities: 4,
            num_relations: 2,
            visual_dim: 3,
            textual_dim: 5,
        }
    }

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let p = ModelParams::<f32>::init(dims(), &mut stream(9, Stream::Init), None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mhck");
        save(&path, &p).unwrap();
        let q: ModelParams<f32> = load(&path).unwrap();
        for ((_, a), (_, b)) in p.tables().iter().zip(q.tables()) {
            let ab: Vec<u32> = a.data.iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(to_bytes(&q), fs::read(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let p = ModelParams::<f32>::zeros(dims());
        let b = to_bytes(&p);
        assert_eq!(&b[..4], b"MHCK");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = ModelParams::<f32>::zeros(dims());
        let b = to_bytes(&p);
        let path = Path::new("x.mhck");
        assert!(from_bytes::<f32>(&b[..b.len() - 1], path).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(from_bytes::<f32>(&bad, path).is_err());
        let mut long = b.clone();
        long.push(0);
        assert!(from_bytes::<f32>(&long, path).is_err());
    }
}
