//! Binary storage for unit-normalized embedding matrices.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes   "LMEMB\0\x01\0"
//! kind    u32       0=query_image 1=gallery_image 2=gallery_text 3=gallery_bbox
//! dim     u32
//! rows    u64
//! payload rows*dim f32
//! keys    UTF-8, one per line: `id` or `id\tordinal`
//! ```

use std::fmt;
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::textio::write_atomic;

pub const MAGIC: [u8; 8] = *b"LMEMB\x00\x01\x00";
pub const HEADER_LEN: usize = 24;

/// Maximum deviation of a stored row norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    QueryImage,
    GalleryImage,
    GalleryText,
    GalleryBbox,
}

impl BlockKind {
    pub fn code(self) -> u32 {
        match self {
            BlockKind::QueryImage => 0,
            BlockKind::GalleryImage => 1,
            BlockKind::GalleryText => 2,
            BlockKind::GalleryBbox => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => BlockKind::QueryImage,
            1 => BlockKind::GalleryImage,
            2 => BlockKind::GalleryText,
            3 => BlockKind::GalleryBbox,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::QueryImage => "query_image",
            BlockKind::GalleryImage => "gallery_image",
            BlockKind::GalleryText => "gallery_text",
            BlockKind::GalleryBbox => "gallery_bbox",
        }
    }

    /// Text and crop rows are keyed by (gallery id, ordinal).
    pub fn has_ordinals(self) -> bool {
        matches!(self, BlockKind::GalleryText | BlockKind::GalleryBbox)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    pub id: String,
    pub ordinal: Option<u32>,
}

impl RowKey {
    pub fn image(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ordinal: None,
        }
    }

    pub fn part(id: impl Into<String>, ordinal: u32) -> Self {
        Self {
            id: id.into(),
            ordinal: Some(ordinal),
        }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ordinal {
            Some(o) => write!(f, "{}\t{}", self.id, o),
            None => f.write_str(&self.id),
        }
    }
}

/// A rows×dim matrix of unit vectors, row-major, with one key per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    kind: BlockKind,
    dim: usize,
    vectors: Vec<f32>,
    keys: Vec<RowKey>,
}

impl EmbeddingBlock {
    /// Wraps already-normalized vectors, rejecting any row off the unit sphere.
    pub fn new(kind: BlockKind, dim: usize, vectors: Vec<f32>, keys: Vec<RowKey>) -> Result<Self> {
        check_shape(kind, dim, vectors.len(), &keys)?;
        for (row, v) in vectors.chunks_exact(dim).enumerate() {
            let norm = l2_norm(v);
            if norm < ZERO_NORM {
                return Err(Error::ZeroVector { row });
            }
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NormViolation { row, norm });
            }
        }
        Ok(Self {
            kind,
            dim,
            vectors,
            keys,
        })
    }

    /// Ingest path: normalizes every row, then wraps.
    pub fn from_raw(kind: BlockKind, dim: usize, mut vectors: Vec<f32>, keys: Vec<RowKey>) -> Result<Self> {
        check_shape(kind, dim, vectors.len(), &keys)?;
        normalize_rows(&mut vectors, dim)?;
        Self::new(kind, dim, vectors, keys)
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (&RowKey, &[f32])> {
        self.keys.iter().zip(self.vectors.chunks_exact(self.dim))
    }

    pub fn expect_kind(&self, expected: BlockKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: expected.name(),
                found: self.kind.name(),
            })
        }
    }

    /// Every row key must name a record of `corpus`.
    pub fn check_keys(&self, corpus: &Corpus) -> Result<()> {
        match self.keys.iter().find(|k| !corpus.contains(&k.id)) {
            Some(k) => Err(Error::UnresolvedKey { key: k.to_string() }),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 4 + self.keys.len() * 16);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        for x in &self.vectors {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for k in &self.keys {
            out.extend_from_slice(k.to_string().as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::DimMismatch("truncated header".into()));
        }
        let code = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let kind = BlockKind::from_code(code)
            .ok_or_else(|| Error::parse("embedding block", 0, format!("unknown kind code {code}")))?;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if dim == 0 {
            return Err(Error::DimMismatch("declared dim is 0".into()));
        }
        let payload_len = (rows as u128) * (dim as u128) * 4;
        let available = (bytes.len() - HEADER_LEN) as u128;
        if payload_len > available {
            return Err(Error::DimMismatch(format!(
                "header declares {rows}x{dim} rows ({payload_len} bytes) but only {available} bytes follow"
            )));
        }
        let payload_end = HEADER_LEN + payload_len as usize;
        let vectors: Vec<f32> = bytes[HEADER_LEN..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let key_text = std::str::from_utf8(&bytes[payload_end..])
            .map_err(|_| Error::parse("embedding block", 0, "key section is not UTF-8"))?;
        let mut keys = Vec::with_capacity(rows as usize);
        for (i, line) in key_text.split_terminator('\n').enumerate() {
            keys.push(parse_key(line, kind, i + 1)?);
        }
        if keys.len() as u64 != rows {
            return Err(Error::DimMismatch(format!("{} row keys for {rows} rows", keys.len())));
        }
        Self::new(kind, dim, vectors, keys)
    }
}

fn parse_key(line: &str, kind: BlockKind, line_no: usize) -> Result<RowKey> {
    const WHAT: &str = "embedding key section";
    let key = match line.split_once('\t') {
        Some((id, ord)) => RowKey::part(
            id,
            ord.parse()
                .map_err(|_| Error::parse(WHAT, line_no, format!("bad ordinal {ord:?}")))?,
        ),
        None => RowKey::image(line),
    };
    if key.id.is_empty() {
        return Err(Error::parse(WHAT, line_no, "empty id"));
    }
    if key.ordinal.is_some() != kind.has_ordinals() {
        return Err(Error::parse(
            WHAT,
            line_no,
            format!("key shape does not fit a {kind} block"),
        ));
    }
    Ok(key)
}

fn check_shape(kind: BlockKind, dim: usize, len: usize, keys: &[RowKey]) -> Result<()> {
    if dim == 0 {
        return Err(Error::DimMismatch("dim must be positive".into()));
    }
    if len != dim * keys.len() {
        return Err(Error::DimMismatch(format!(
            "{len} values for {} rows of dim {dim}",
            keys.len()
        )));
    }
    if let Some(k) = keys.iter().find(|k| k.ordinal.is_some() != kind.has_ordinals()) {
        return Err(Error::InvalidSpec(format!("row key {k} does not fit a {kind} block")));
    }
    Ok(())
}

pub fn write_block(block: &EmbeddingBlock, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &block.to_bytes())
}

pub fn read_block(path: impl AsRef<Path>) -> Result<EmbeddingBlock> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingBlock::from_bytes(&bytes)
}

/// Scales every row of a row-major matrix to unit Euclidean norm in place.
pub fn normalize_rows(matrix: &mut [f32], dim: usize) -> Result<()> {
    if dim == 0 || !matrix.len().is_multiple_of(dim) {
        return Err(Error::DimMismatch(format!(
            "{} values are not rows of dim {dim}",
            matrix.len()
        )));
    }
    for (row, v) in matrix.chunks_exact_mut(dim).enumerate() {
        let norm = l2_norm(v);
        if norm < ZERO_NORM {
            return Err(Error::ZeroVector { row });
        }
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
    Ok(())
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Dot product of f32 vectors with f64 accumulation in a fixed order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        lanes[0] += x[0] as f64 * y[0] as f64;
        lanes[1] += x[1] as f64 * y[1] as f64;
        lanes[2] += x[2] as f64 * y[2] as f64;
        lanes[3] += x[3] as f64 * y[3] as f64;
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x as f64 * *y as f64;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}
