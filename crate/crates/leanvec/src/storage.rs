//! File formats. This module is the format reference: an independent reader
//! can be written from these docs alone.
//!
//! All multi-byte integers and floats are little-endian.
//!
//! # fvecs / ivecs
//!
//! A sequence of records, each `4 + 4 * dim` bytes: a `u32` dimension
//! followed by `dim` elements (`f32` for fvecs, `i32` for ivecs). The
//! dimension must be positive and identical across records; an empty file
//! holds zero vectors.
//!
//! # Projection file (`LVPJ`, version 1)
//!
//! ```text
//! magic "LVPJ" | version u32 | D u32 | d u32 | orthonormal u8
//! A: d*D f64 row-major | B: d*D f64 row-major
//! crc32 u32 over every preceding byte
//! ```
//!
//! # Index bundle (`LVEC`, version 1)
//!
//! Fixed header:
//!
//! ```text
//! offset  0: magic "LVEC"
//! offset  4: version u32
//! offset  8: D u32            source dimensionality
//! offset 12: d u32            reduced dimensionality
//! offset 16: n u64            vector count
//! offset 24: metric u8        0 = inner product, 1 = euclidean
//! offset 25: b1 u8            primary first-level bits (0 = float primary)
//! offset 26: b2 u8            primary second-level bits
//! offset 27: flags u8         bit 0 = normalize queries at search time
//!                             bit 1 = secondary stored in half precision
//!                             bit 2 = secondary is LVQ8 instead of f32
//! offset 28: entry u32        graph entry node
//! offset 32: max_degree u32   graph degree bound
//! offset 36: section_count u32
//! offset 40: section table    section_count x (tag [u8;4], offset u64, length u64)
//! ```
//!
//! Sections (offsets from file start; unknown tags are ignored):
//!
//! - `PROJ`: orthonormal u8, then `A` and `B` as `d*D` f64 row-major each.
//! - `PCDC` (quantized primary only): codec mean, `d` f64.
//! - `PCOD` (quantized primary only): per-vector `lo` (n f64), `delta`
//!   (n f64), packed first-level codes (n * stride1 bytes; 4-bit codes two
//!   per byte low nibble first, 8-bit codes one per byte), then packed
//!   second-level codes (n * d bytes) when b2 > 0.
//! - `PFLT` (float primary only): n * d f32.
//! - `SCDC`/`SCOD` (LVQ8 secondary): as `PCDC`/`PCOD` with dimension D.
//! - `SFLT` (f32 secondary): n * D f32.
//! - `GRPH`: (n + 1) u64 neighbor-list offsets, then the concatenated
//!   neighbor ids as u32.
//!
//! The final 4 bytes of the file are a CRC32 (IEEE) over every byte before
//! them; it is checked before any section is parsed. Section bounds are
//! validated against the real file length before use.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::GraphIndex;
use crate::lvq::{packed_len, LvqCodec, LvqStore};
use crate::pipeline::LeanVecIndex;
use crate::projection::ProjectionPair;
use crate::store::{Metric, PrimaryStore, SecondaryStore};

const VECS_MAGIC: [u8; 4] = *b"LVEC";
const PROJ_MAGIC: [u8; 4] = *b"LVPJ";
const FORMAT_VERSION: u32 = 1;

const FLAG_NORMALIZE_QUERIES: u8 = 1 << 0;
const FLAG_SECONDARY_HALF: u8 = 1 << 1;
const FLAG_SECONDARY_LVQ8: u8 = 1 << 2;

// ---------------------------------------------------------------------------
// fvecs / ivecs

fn read_vecs_bytes<T, F: Fn([u8; 4]) -> T>(bytes: &[u8], convert: F) -> Result<(Vec<T>, usize)> {
    if bytes.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    let mut pos = 0usize;
    let mut record = 0usize;
    while pos < bytes.len() {
        if pos + 4 > bytes.len() {
            return Err(Error::Truncated(format!(
                "record {record} header ends past the file"
            )));
        }
        let declared = i32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        if declared <= 0 {
            return Err(Error::ZeroDimension);
        }
        let declared = declared as usize;
        match dim {
            None => dim = Some(declared),
            Some(d) if d != declared => {
                return Err(Error::InconsistentDimension {
                    record,
                    found: declared,
                    expected: d,
                })
            }
            _ => {}
        }
        pos += 4;
        let end = pos + 4 * declared;
        if end > bytes.len() {
            return Err(Error::Truncated(format!(
                "record {record} payload ends past the file"
            )));
        }
        for chunk in bytes[pos..end].chunks_exact(4) {
            data.push(convert(chunk.try_into().unwrap()));
        }
        pos = end;
        record += 1;
    }
    Ok((data, dim.unwrap_or(0)))
}

fn read_vecs_file<T, F: Fn([u8; 4]) -> T>(path: &Path, convert: F) -> Result<Array2<T>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let (data, dim) = read_vecs_bytes(&bytes, convert)?;
    let rows = data.len().checked_div(dim).unwrap_or(0);
    Array2::from_shape_vec((rows, dim), data)
        .map_err(|e| Error::invalid(format!("vector file shape: {e}")))
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    read_vecs_file(path.as_ref(), f32::from_le_bytes)
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Array2<i32>> {
    read_vecs_file(path.as_ref(), i32::from_le_bytes)
}

fn write_vecs_file<T, F: Fn(&T) -> [u8; 4]>(path: &Path, rows: ArrayView2<T>, convert: F) -> Result<()> {
    if rows.nrows() > 0 && rows.ncols() == 0 {
        return Err(Error::ZeroDimension);
    }
    let mut buf = Vec::with_capacity(rows.nrows() * (4 + 4 * rows.ncols()));
    for row in rows.rows() {
        buf.extend_from_slice(&(rows.ncols() as u32).to_le_bytes());
        for v in row.iter() {
            buf.extend_from_slice(&convert(v));
        }
    }
    let mut file = File::create(path)?;
    file.write_all(&buf)?;
    file.sync_all()?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, rows: ArrayView2<f32>) -> Result<()> {
    write_vecs_file(path.as_ref(), rows, |v| v.to_le_bytes())
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: ArrayView2<i32>) -> Result<()> {
    write_vecs_file(path.as_ref(), rows, |v| v.to_le_bytes())
}

// ---------------------------------------------------------------------------
// Little-endian buffer helpers

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Truncated(format!("{what} ends past its section")));
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * count, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64_vec(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * count, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finished(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::invalid(format!(
                "{what} has {} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_f64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_f32s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_with_crc(path: &Path, body: &[u8]) -> Result<()> {
    let crc = crc32fast::hash(body);
    let mut file = File::create(path)?;
    file.write_all(body)?;
    file.write_all(&crc.to_le_bytes())?;
    file.sync_all()?;
    Ok(())
}

/// Reads a whole checksummed file: verifies magic, version, and the trailing
/// CRC32, returning the body between the 8-byte preamble and the checksum.
fn read_with_crc<'b>(bytes: &'b [u8], magic: &[u8; 4], what: &str) -> Result<&'b [u8]> {
    if bytes.len() < 8 {
        return Err(Error::Truncated(format!("{what} shorter than its preamble")));
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &found != magic {
        return Err(Error::BadMagic {
            found,
            expected: *magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated(format!("{what} has no checksum")));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(&bytes[8..bytes.len() - 4])
}

// ---------------------------------------------------------------------------
// Projection file

pub fn save_projection(path: impl AsRef<Path>, pair: &ProjectionPair) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(&PROJ_MAGIC);
    body.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    body.extend_from_slice(&(pair.source_dim() as u32).to_le_bytes());
    body.extend_from_slice(&(pair.reduced_dim() as u32).to_le_bytes());
    body.push(pair.orthonormal() as u8);
    push_f64s(&mut body, pair.a().iter().copied());
    push_f64s(&mut body, pair.b().iter().copied());
    write_with_crc(path.as_ref(), &body)
}

pub fn load_projection(path: impl AsRef<Path>) -> Result<ProjectionPair> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let body = read_with_crc(&bytes, &PROJ_MAGIC, "projection file")?;
    let mut cur = Cursor::new(body);
    let big_d = cur.u32("D")? as usize;
    let d = cur.u32("d")? as usize;
    let orthonormal = cur.u8("orthonormal flag")? != 0;
    if d == 0 || big_d == 0 || d > big_d {
        return Err(Error::invalid(format!("projection dims {d}x{big_d} invalid")));
    }
    let a = cur.f64_vec(d * big_d, "matrix A")?;
    let b = cur.f64_vec(d * big_d, "matrix B")?;
    cur.finished("projection file")?;
    let a = Array2::from_shape_vec((d, big_d), a).expect("sized above");
    let b = Array2::from_shape_vec((d, big_d), b).expect("sized above");
    ProjectionPair::new(a, b, orthonormal)
}

// ---------------------------------------------------------------------------
// Index bundle

struct Section {
    tag: [u8; 4],
    payload: Vec<u8>,
}

fn lvq_store_sections(store: &LvqStore, codec_tag: [u8; 4], codes_tag: [u8; 4]) -> Vec<Section> {
    let mut codec = Vec::new();
    push_f64s(&mut codec, store.codec().mean().iter().copied());
    let mut codes = Vec::new();
    let (lo, delta) = store.scalars();
    push_f64s(&mut codes, lo.iter().copied());
    push_f64s(&mut codes, delta.iter().copied());
    let (codes1, codes2) = store.packed_codes();
    codes.extend_from_slice(codes1);
    if let Some(c2) = codes2 {
        codes.extend_from_slice(c2);
    }
    vec![
        Section {
            tag: codec_tag,
            payload: codec,
        },
        Section {
            tag: codes_tag,
            payload: codes,
        },
    ]
}

fn parse_lvq_store(
    codec_bytes: &[u8],
    codes_bytes: &[u8],
    dim: usize,
    n: usize,
    b1: u8,
    b2: u8,
) -> Result<LvqStore> {
    let mut cur = Cursor::new(codec_bytes);
    let mean = cur.f64_vec(dim, "codec mean")?;
    cur.finished("codec section")?;
    let codec = LvqCodec::from_parts(mean, b1, b2)?;

    let mut cur = Cursor::new(codes_bytes);
    let lo = cur.f64_vec(n, "per-vector lo")?;
    let delta = cur.f64_vec(n, "per-vector delta")?;
    let codes1 = cur.take(n * packed_len(dim, b1), "first-level codes")?.to_vec();
    let codes2 = if b2 > 0 {
        Some(cur.take(n * dim, "second-level codes")?.to_vec())
    } else {
        None
    };
    cur.finished("codes section")?;
    LvqStore::from_parts(codec, lo, delta, codes1, codes2)
}

/// Serializes a frozen index into a single `.lvec` bundle.
pub fn save_index(path: impl AsRef<Path>, index: &LeanVecIndex) -> Result<()> {
    let projection = index.projection();
    let (b1, b2) = index.primary().bits();
    let mut flags = 0u8;
    if index.normalize_queries() {
        flags |= FLAG_NORMALIZE_QUERIES;
    }

    let mut sections: Vec<Section> = Vec::new();

    let mut proj = Vec::new();
    proj.push(projection.orthonormal() as u8);
    push_f64s(&mut proj, projection.a().iter().copied());
    push_f64s(&mut proj, projection.b().iter().copied());
    sections.push(Section {
        tag: *b"PROJ",
        payload: proj,
    });

    match index.primary() {
        PrimaryStore::Float { data, .. } => {
            let mut payload = Vec::new();
            push_f32s(&mut payload, data.iter().copied());
            sections.push(Section {
                tag: *b"PFLT",
                payload,
            });
        }
        PrimaryStore::Lvq(store) => {
            sections.extend(lvq_store_sections(store, *b"PCDC", *b"PCOD"));
        }
    }

    match index.secondary() {
        SecondaryStore::Float { data, half, .. } => {
            if *half {
                flags |= FLAG_SECONDARY_HALF;
            }
            let mut payload = Vec::new();
            push_f32s(&mut payload, data.iter().copied());
            sections.push(Section {
                tag: *b"SFLT",
                payload,
            });
        }
        SecondaryStore::Lvq8(store) => {
            flags |= FLAG_SECONDARY_LVQ8;
            sections.extend(lvq_store_sections(store, *b"SCDC", *b"SCOD"));
        }
    }

    let mut graph = Vec::new();
    let mut offset = 0u64;
    for list in index.graph().adjacency() {
        graph.extend_from_slice(&offset.to_le_bytes());
        offset += list.len() as u64;
    }
    graph.extend_from_slice(&offset.to_le_bytes());
    for list in index.graph().adjacency() {
        for &nb in list {
            graph.extend_from_slice(&nb.to_le_bytes());
        }
    }
    sections.push(Section {
        tag: *b"GRPH",
        payload: graph,
    });

    let mut body = Vec::new();
    body.extend_from_slice(&VECS_MAGIC);
    body.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    body.extend_from_slice(&(projection.source_dim() as u32).to_le_bytes());
    body.extend_from_slice(&(projection.reduced_dim() as u32).to_le_bytes());
    body.extend_from_slice(&(index.len() as u64).to_le_bytes());
    body.push(match index.metric() {
        Metric::InnerProduct => 0u8,
        Metric::Euclidean => 1u8,
    });
    body.push(b1);
    body.push(b2);
    body.push(flags);
    body.extend_from_slice(&index.graph().entry().to_le_bytes());
    body.extend_from_slice(&(index.graph().max_degree() as u32).to_le_bytes());
    body.extend_from_slice(&(sections.len() as u32).to_le_bytes());

    let table_at = body.len();
    let table_len = sections.len() * 20;
    body.resize(table_at + table_len, 0);
    let mut cursor = body.len();
    for (i, section) in sections.iter().enumerate() {
        let entry = table_at + i * 20;
        body[entry..entry + 4].copy_from_slice(&section.tag);
        body[entry + 4..entry + 12].copy_from_slice(&(cursor as u64).to_le_bytes());
        body[entry + 12..entry + 20].copy_from_slice(&(section.payload.len() as u64).to_le_bytes());
        cursor += section.payload.len();
    }
    for section in &sections {
        body.extend_from_slice(&section.payload);
    }
    write_with_crc(path.as_ref(), &body)
}

/// Loads a `.lvec` bundle, verifying magic, version, checksum, and section
/// bounds before reconstructing the index through the same validating
/// constructors used at build time.
pub fn load_index(path: impl AsRef<Path>) -> Result<LeanVecIndex> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let body = read_with_crc(&bytes, &VECS_MAGIC, "index bundle")?;

    let mut cur = Cursor::new(body);
    let big_d = cur.u32("D")? as usize;
    let d = cur.u32("d")? as usize;
    let n64 = cur.u64("n")?;
    let n: usize = n64
        .try_into()
        .map_err(|_| Error::invalid("vector count exceeds this platform"))?;
    let metric = match cur.u8("metric")? {
        0 => Metric::InnerProduct,
        1 => Metric::Euclidean,
        other => return Err(Error::invalid(format!("unknown metric tag {other}"))),
    };
    let b1 = cur.u8("b1")?;
    let b2 = cur.u8("b2")?;
    let flags = cur.u8("flags")?;
    let entry = cur.u32("entry")?;
    let max_degree = cur.u32("max_degree")? as usize;
    let section_count = cur.u32("section count")? as usize;

    let mut sections: Vec<([u8; 4], &[u8])> = Vec::with_capacity(section_count);
    let mut table = Vec::with_capacity(section_count);
    for i in 0..section_count {
        let tag: [u8; 4] = cur.take(4, "section tag")?.try_into().unwrap();
        let offset = cur.u64(&format!("section {i} offset"))? as usize;
        let length = cur.u64(&format!("section {i} length"))? as usize;
        table.push((tag, offset, length));
    }
    for (tag, offset, length) in table {
        // Offsets are relative to the file; the body starts at byte 8.
        let start = offset
            .checked_sub(8)
            .ok_or_else(|| Error::Truncated("section offset inside the header".into()))?;
        let end = start
            .checked_add(length)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Truncated(format!("section {:?} out of bounds", tag)))?;
        sections.push((tag, &body[start..end]));
    }
    let find = |tag: &[u8; 4]| -> Option<&[u8]> {
        sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, payload)| *payload)
    };
    let require = |tag: &[u8; 4]| -> Result<&[u8]> {
        find(tag).ok_or_else(|| Error::Truncated(format!("missing section {:?}", tag)))
    };

    let proj_bytes = require(b"PROJ")?;
    let mut pc = Cursor::new(proj_bytes);
    let orthonormal = pc.u8("orthonormal flag")? != 0;
    let a = pc.f64_vec(d * big_d, "matrix A")?;
    let b = pc.f64_vec(d * big_d, "matrix B")?;
    pc.finished("projection section")?;
    let projection = ProjectionPair::new(
        Array2::from_shape_vec((d, big_d), a).expect("sized above"),
        Array2::from_shape_vec((d, big_d), b).expect("sized above"),
        orthonormal,
    )?;

    let primary = if b1 == 0 {
        let bytes = require(b"PFLT")?;
        let mut cur = Cursor::new(bytes);
        let data = cur.f32_vec(n * d, "float primary data")?;
        cur.finished("float primary section")?;
        PrimaryStore::Float { dim: d, data }
    } else {
        PrimaryStore::Lvq(parse_lvq_store(
            require(b"PCDC")?,
            require(b"PCOD")?,
            d,
            n,
            b1,
            b2,
        )?)
    };

    let secondary = if flags & FLAG_SECONDARY_LVQ8 != 0 {
        SecondaryStore::Lvq8(parse_lvq_store(
            require(b"SCDC")?,
            require(b"SCOD")?,
            big_d,
            n,
            8,
            0,
        )?)
    } else {
        let bytes = require(b"SFLT")?;
        let mut cur = Cursor::new(bytes);
        let data = cur.f32_vec(n * big_d, "float secondary data")?;
        cur.finished("float secondary section")?;
        SecondaryStore::Float {
            dim: big_d,
            data,
            half: flags & FLAG_SECONDARY_HALF != 0,
        }
    };

    let graph_bytes = require(b"GRPH")?;
    let mut gc = Cursor::new(graph_bytes);
    let mut offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        offsets.push(gc.u64("adjacency offset")? as usize);
    }
    let total_edges = *offsets.last().unwrap();
    let mut adjacency = Vec::with_capacity(n);
    let edge_bytes = gc.take(4 * total_edges, "edge ids")?;
    gc.finished("graph section")?;
    for w in offsets.windows(2) {
        let (start, end) = (w[0], w[1]);
        if start > end || end > total_edges {
            return Err(Error::Truncated("adjacency offsets not monotone".into()));
        }
        let list: Vec<u32> = edge_bytes[4 * start..4 * end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        adjacency.push(list);
    }
    let graph = GraphIndex::from_parts(adjacency, entry, max_degree)?;

    LeanVecIndex::from_parts(
        projection,
        primary,
        secondary,
        graph,
        metric,
        flags & FLAG_NORMALIZE_QUERIES != 0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuildConfig, SearchParams};
    use crate::pipeline::{build_index, IndexBuildParams};
    use crate::store::SecondaryMode;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn random_data(seed: u64, n: usize, dim: usize) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, dim), |_| rng.random::<f32>() * 2.0 - 1.0)
    }

    #[test]
    fn fvecs_hand_built_record() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.fvecs");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&3.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let m = read_fvecs(&path).unwrap();
        assert_eq!(m.shape(), &[1, 2]);
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 3.0);
    }

    #[test]
    fn fvecs_empty_file_is_empty_matrix() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.fvecs");
        std::fs::write(&path, b"").unwrap();
        let m = read_fvecs(&path).unwrap();
        assert_eq!(m.nrows(), 0);
        // Write side: an empty matrix produces an empty file.
        let out = dir.path().join("out.fvecs");
        write_fvecs(&out, Array2::<f32>::zeros((0, 0)).view()).unwrap();
        assert_eq!(std::fs::metadata(&out).unwrap().len(), 0);
    }

    #[test]
    fn fvecs_roundtrip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.fvecs");
        let data = random_data(271, 100, 16);
        write_fvecs(&path, data.view()).unwrap();
        let back = read_fvecs(&path).unwrap();
        assert_eq!(back, data);
        let path2 = dir.path().join("rt2.fvecs");
        write_fvecs(&path2, back.view()).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn ivecs_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gt.ivecs");
        let ids = Array2::from_shape_fn((7, 5), |(i, j)| (i * 10 + j) as i32);
        write_ivecs(&path, ids.view()).unwrap();
        assert_eq!(read_ivecs(&path).unwrap(), ids);
    }

    #[test]
    fn vecs_error_kinds_are_distinct() {
        let dir = tempdir().unwrap();

        let truncated = dir.path().join("trunc.fvecs");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // 3 elements missing
        std::fs::write(&truncated, &bytes).unwrap();
        assert!(matches!(read_fvecs(&truncated), Err(Error::Truncated(_))));

        let inconsistent = dir.path().join("inc.fvecs");
        let mut bytes = Vec::new();
        for dim in [2u32, 3u32] {
            bytes.extend_from_slice(&dim.to_le_bytes());
            for _ in 0..dim {
                bytes.extend_from_slice(&0.0f32.to_le_bytes());
            }
        }
        std::fs::write(&inconsistent, &bytes).unwrap();
        assert!(matches!(
            read_fvecs(&inconsistent),
            Err(Error::InconsistentDimension { record: 1, found: 3, expected: 2 })
        ));

        let zero = dir.path().join("zero.fvecs");
        std::fs::write(&zero, 0u32.to_le_bytes()).unwrap();
        assert!(matches!(read_fvecs(&zero), Err(Error::ZeroDimension)));
    }

    #[test]
    fn projection_file_roundtrips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("proj.lvpj");
        let mut rng = ChaCha8Rng::seed_from_u64(277);
        let raw = Array2::from_shape_fn((4, 12), |_| rng.random::<f64>() - 0.5);
        let m = crate::linalg::stiefel_retract(raw.view()).unwrap();
        let pair = ProjectionPair::shared(m, true).unwrap();
        save_projection(&path, &pair).unwrap();
        let back = load_projection(&path).unwrap();
        assert_eq!(back, pair);
    }

    fn build_small_index(quantized: bool, secondary: SecondaryMode) -> (Array2<f32>, LeanVecIndex) {
        let data = random_data(281, 120, 12);
        let k_x = crate::linalg::accumulate_gram(data.view()).unwrap();
        let pair = crate::projection::train_id(k_x.view(), 4).unwrap();
        let params = IndexBuildParams {
            metric: Metric::InnerProduct,
            normalize_queries: false,
            primary_bits: if quantized { Some((4, 8)) } else { None },
            secondary,
            graph: GraphBuildConfig {
                max_degree: 8,
                build_window: 16,
                prune_alpha: 0.95,
                seed: 3,
                ..GraphBuildConfig::default()
            },
        };
        let index = build_index(data.view(), pair, &params).unwrap();
        (data, index)
    }

    #[test]
    fn bundle_roundtrip_preserves_everything() {
        for (quantized, secondary) in [
            (true, SecondaryMode::F32 { half: false }),
            (false, SecondaryMode::Lvq8),
            (true, SecondaryMode::F32 { half: true }),
        ] {
            let dir = tempdir().unwrap();
            let path = dir.path().join("index.lvec");
            let (_, index) = build_small_index(quantized, secondary);
            save_index(&path, &index).unwrap();
            let loaded = load_index(&path).unwrap();

            assert_eq!(loaded.projection(), index.projection());
            assert_eq!(loaded.primary(), index.primary());
            assert_eq!(loaded.secondary(), index.secondary());
            assert_eq!(loaded.graph(), index.graph());
            assert_eq!(loaded.metric(), index.metric());
            assert_eq!(loaded.normalize_queries(), index.normalize_queries());

            let queries = random_data(283, 20, 12);
            let params = SearchParams::new(16, 10).unwrap();
            for row in queries.rows() {
                let q: Vec<f32> = row.to_vec();
                let before = index.search(&q, 5, &params).unwrap();
                let after = loaded.search(&q, 5, &params).unwrap();
                assert_eq!(before.ids, after.ids);
                let bits_before: Vec<u32> = before.scores.iter().map(|s| s.to_bits()).collect();
                let bits_after: Vec<u32> = after.scores.iter().map(|s| s.to_bits()).collect();
                assert_eq!(bits_before, bits_after);
            }

            // Saving the loaded index reproduces the file byte for byte.
            let path2 = dir.path().join("again.lvec");
            save_index(&path2, &loaded).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("index.lvec");
        let (_, index) = build_small_index(true, SecondaryMode::F32 { half: false });
        save_index(&path, &index).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_index(&path), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn version_and_magic_are_checked_first() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("index.lvec");
        let (_, index) = build_small_index(false, SecondaryMode::F32 { half: false });
        save_index(&path, &index).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bumped = good.clone();
        bumped[4..8].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, &bumped).unwrap();
        match load_index(&path) {
            Err(Error::VersionMismatch { found, supported }) => {
                assert_eq!(found, 2);
                assert_eq!(supported, 1);
            }
            other => panic!("expected version mismatch, got {other:?}"),
        }

        let mut wrong = good;
        wrong[0..4].copy_from_slice(b"NOPE");
        std::fs::write(&path, &wrong).unwrap();
        assert!(matches!(load_index(&path), Err(Error::BadMagic { .. })));
    }
}
