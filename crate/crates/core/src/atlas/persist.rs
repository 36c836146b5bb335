//! Binary atlas container and plain-text export.
//!
//! Layout: `b"PLIM"`, version (u32 LE), payload length (u64 LE), payload,
//! SHA-256 of the payload. All numbers in the payload are little endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Anchor, Atlas, BlockId, Sheet};
use crate::error::{PlimError, Result};
use crate::grid::Grid;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PLIM";

pub fn save_atlas(atlas: &Atlas, path: impl AsRef<Path>) -> Result<()> {
    let payload = encode(atlas);
    let mut out = Vec::with_capacity(payload.len() + 48);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    fs::write(path, out)?;
    Ok(())
}

pub fn load_atlas(path: impl AsRef<Path>) -> Result<Atlas> {
    let bytes = fs::read(path)?;
    decode_container(&bytes)
}

fn decode_container(bytes: &[u8]) -> Result<Atlas> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(PlimError::CorruptFile("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(PlimError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + len + 32 {
        return Err(PlimError::CorruptFile("length mismatch".into()));
    }
    let payload = &bytes[16..16 + len];
    if Sha256::digest(payload).as_slice() != &bytes[16 + len..] {
        return Err(PlimError::CorruptFile("checksum mismatch".into()));
    }
    decode(payload)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn flag(&mut self, v: bool) {
        self.0.push(v as u8);
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn usizes(&mut self, v: &[usize]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.u64(x as u64));
    }
    fn i64s(&mut self, v: &[i64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.i64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(PlimError::CorruptFile("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(PlimError::CorruptFile("bad boolean".into())),
        }
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(PlimError::CorruptFile("length exceeds payload".into()));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PlimError::CorruptFile("invalid utf-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.u64().map(|v| v as usize)).collect()
    }
    fn i64s(&mut self) -> Result<Vec<i64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.i64()).collect()
    }
}

fn encode(a: &Atlas) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.str(&a.system);
    w.str(&a.projection);
    w.f64s(&a.lower);
    w.f64s(&a.upper);
    w.f64s(&a.block_size);
    w.usizes(&a.mesh);
    w.u64(a.generation.len() as u64);
    for (k, v) in &a.generation {
        w.str(k);
        w.f64(*v);
    }
    w.u64(a.next_id());
    w.u64(a.sheets().len() as u64);
    for s in a.sheets() {
        w.u64(s.id);
        w.i64s(&s.block.0);
        w.f64s(&s.grid.lower);
        w.f64s(&s.grid.upper);
        w.usizes(&s.grid.nodes);
        w.u64(s.n_components as u64);
        w.f64s(&s.values);
        match &s.imag {
            Some(im) => {
                w.flag(true);
                w.f64s(im);
            }
            None => w.flag(false),
        }
        w.f64s(&s.anchor.coarse);
        w.f64s(&s.anchor.data);
        w.u64(s.prune_mask.len() as u64);
        s.prune_mask.iter().for_each(|&m| w.flag(m));
        w.f64(s.objective_value);
        w.flag(s.degenerate);
    }
    w.0
}

fn decode(payload: &[u8]) -> Result<Atlas> {
    let mut r = Reader { buf: payload, pos: 0 };
    let system = r.str()?;
    let projection = r.str()?;
    let lower = r.f64s()?;
    let upper = r.f64s()?;
    let block_size = r.f64s()?;
    let mesh = r.usizes()?;
    let mut atlas = Atlas::new(system, projection, lower, upper, block_size, mesh)
        .map_err(|e| PlimError::CorruptFile(e.to_string()))?;
    let n_gen = r.len(16)?;
    let mut generation = BTreeMap::new();
    for _ in 0..n_gen {
        let k = r.str()?;
        generation.insert(k, r.f64()?);
    }
    atlas.generation = generation;
    let next_id = r.u64()?;
    let n_sheets = r.len(8)?;
    for _ in 0..n_sheets {
        let id = r.u64()?;
        let block = BlockId(r.i64s()?);
        let grid = Grid::new(r.f64s()?, r.f64s()?, r.usizes()?).map_err(|e| PlimError::CorruptFile(e.to_string()))?;
        let n_components = r.u64()? as usize;
        let values = r.f64s()?;
        let imag = if r.flag()? { Some(r.f64s()?) } else { None };
        let anchor = Anchor {
            coarse: r.f64s()?,
            data: r.f64s()?,
        };
        let n_mask = r.len(1)?;
        let prune_mask = (0..n_mask).map(|_| r.flag()).collect::<Result<Vec<_>>>()?;
        let objective_value = r.f64()?;
        let degenerate = r.flag()?;
        if values.len() != grid.n_nodes() * n_components || prune_mask.len() != grid.n_nodes() {
            return Err(PlimError::CorruptFile("sheet arrays do not match grid".into()));
        }
        atlas
            .push_sheet(Sheet {
                id,
                block,
                grid,
                n_components,
                values,
                imag,
                anchor,
                prune_mask,
                objective_value,
                degenerate,
            })
            .map_err(|e| PlimError::CorruptFile(e.to_string()))?;
    }
    atlas.set_next_id(next_id);
    if r.pos != payload.len() {
        return Err(PlimError::CorruptFile("trailing bytes".into()));
    }
    Ok(atlas)
}

#[derive(Serialize)]
struct AtlasView<'a> {
    format_version: u32,
    system: &'a str,
    projection: &'a str,
    lower: &'a [f64],
    upper: &'a [f64],
    block_size: &'a [f64],
    mesh: &'a [usize],
    generation: &'a BTreeMap<String, f64>,
    sheets: &'a [Sheet],
}

/// Pretty-printed JSON view of an atlas, for inspection.
pub fn export_json(atlas: &Atlas) -> Result<String> {
    let view = AtlasView {
        format_version: FORMAT_VERSION,
        system: &atlas.system,
        projection: &atlas.projection,
        lower: &atlas.lower,
        upper: &atlas.upper,
        block_size: &atlas.block_size,
        mesh: &atlas.mesh,
        generation: &atlas.generation,
        sheets: atlas.sheets(),
    };
    serde_json::to_string_pretty(&view).map_err(|e| PlimError::config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Atlas {
        let mut a = Atlas::new("t", "select:2:0", vec![0.0], vec![2.0], vec![1.0], vec![3]).unwrap();
        a.generation.insert("seed".into(), 7.0);
        let b = BlockId(vec![1]);
        let g = a.block(&b).unwrap().grid;
        let mut s = Sheet::from_fn(
            g,
            1,
            Anchor {
                coarse: vec![1.0],
                data: vec![0.1],
            },
            |c| vec![0.1 + c[0] / 3.0],
        );
        s.objective_value = 1.0 / 3.0;
        s.imag = Some(vec![0.0, 1e-3, 0.5]);
        s.prune_mask[2] = true;
        a.insert(&b, s).unwrap();
        a
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.plim");
        let a = sample();
        save_atlas(&a, &p).unwrap();
        assert_eq!(load_atlas(&p).unwrap(), a);
    }

    #[test]
    fn wrong_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.plim");
        save_atlas(&sample(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_atlas(&p), Err(PlimError::CorruptFile(_))));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.plim");
        save_atlas(&sample(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_atlas(&p), Err(PlimError::CorruptFile(_))));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.plim");
        save_atlas(&sample(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_atlas(&p),
            Err(PlimError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn json_export_lists_sheets() {
        let s = export_json(&sample()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["sheets"].as_array().unwrap().len(), 1);
        assert_eq!(v["system"], "t");
    }
}
