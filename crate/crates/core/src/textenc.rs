//! Caption embeddings: a deterministic hashed bag-of-tokens encoder and the
//! PCEB binary table format for embeddings produced offline by a real text
//! encoder.
//!
//! PCEB layout (little-endian, no padding):
//!
//! ```text
//! magic  "PCEB1\0"              6 bytes
//! dim    u32
//! count  u64
//! count × { id_len u32, id utf-8 bytes, dim × f32 }
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::PoseSample;

pub const EMBED_DIM: usize = 768;
pub const PCEB_MAGIC: &[u8; 6] = b"PCEB1\0";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding(Vec<f32>);

impl TextEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != EMBED_DIM {
            return Err(Error::DimensionMismatch {
                expected: EMBED_DIM,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("embedding has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// Hashed bag-of-tokens embedding: every token adds ±1 at `hash % 768`, the
/// sign taken from bit 63; the accumulated vector is then ℓ2-normalized.
pub fn embed_hashed(caption: &str) -> Result<TextEmbedding> {
    let tokens = tokenize(caption);
    if tokens.is_empty() {
        return Err(Error::EmptyCaption);
    }
    let mut acc = vec![0.0f64; EMBED_DIM];
    for t in &tokens {
        let h = fnv1a64(t.as_bytes());
        let idx = (h % EMBED_DIM as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[idx] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every token cancelled against another one; fall back to the raw
        // index pattern so the embedding stays unit-norm and deterministic
        for t in &tokens {
            acc[(fnv1a64(t.as_bytes()) % EMBED_DIM as u64) as usize] = 1.0;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(TextEmbedding(acc.iter().map(|v| (v / norm) as f32).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Hashed,
    Imported,
}

/// Caption id → embedding, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    provenance: Provenance,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, provenance: Provenance) -> Self {
        Self {
            dim,
            provenance,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let id = id.into();
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(values);
        Ok(())
    }

    /// Hashed embeddings for every sample, keyed by sample id.
    pub fn from_hashed(samples: &[PoseSample]) -> Result<Self> {
        let mut table = Self::new(EMBED_DIM, Provenance::Hashed);
        for s in samples {
            table.insert(s.id.clone(), embed_hashed(&s.caption)?.0)?;
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }
}

pub fn write_embedding_table<W: Write>(table: &EmbeddingTable, mut w: W) -> std::io::Result<()> {
    w.write_all(PCEB_MAGIC)?;
    w.write_all(&(table.dim as u32).to_le_bytes())?;
    w.write_all(&(table.len() as u64).to_le_bytes())?;
    for (id, values) in table.iter() {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn store_embedding_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_embedding_table(table, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reader that tracks the byte offset so truncation errors can say where.
struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        offset: self.offset + read as u64,
                    })
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io("<pceb stream>", e)),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }
}

/// Parses a PCEB stream. `expected_dim`, when given, must match the header.
pub fn read_embedding_table<R: Read>(r: R, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let mut r = OffsetReader { inner: r, offset: 0 };
    let magic: [u8; 6] = r.exact()?;
    if &magic != PCEB_MAGIC {
        return Err(Error::BadMagic {
            expected: PCEB_MAGIC.to_vec(),
            found: magic.to_vec(),
        });
    }
    let dim = u32::from_le_bytes(r.exact()?) as usize;
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(Error::DimensionMismatch { expected, found: dim });
        }
    }
    let count = u64::from_le_bytes(r.exact()?);
    let mut table = EmbeddingTable::new(dim, Provenance::Imported);
    for _ in 0..count {
        let id_len = u32::from_le_bytes(r.exact()?) as usize;
        let mut id = vec![0u8; id_len];
        r.fill(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| Error::Format(format!("id at offset {} is not UTF-8", r.offset)))?;
        let mut raw = vec![0u8; dim * 4];
        r.fill(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        table.insert(id, values)?;
    }
    Ok(table)
}

pub fn load_embedding_table(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embedding_table(std::io::BufReader::new(file), expected_dim)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Table,
    Hashed,
}

/// Table lookup by sample id, falling back to the hashed encoder on a miss
/// (or when no table is supplied) unless `allow_fallback` is false.
pub fn resolve_embedding(
    sample: &PoseSample,
    table: Option<&EmbeddingTable>,
    allow_fallback: bool,
) -> Result<(TextEmbedding, EmbeddingSource)> {
    if let Some(table) = table {
        if table.dim() != EMBED_DIM {
            return Err(Error::DimensionMismatch {
                expected: EMBED_DIM,
                found: table.dim(),
            });
        }
        if let Some(v) = table.get(&sample.id) {
            return Ok((TextEmbedding::new(v.to_vec())?, EmbeddingSource::Table));
        }
        if !allow_fallback {
            return Err(Error::EmbeddingNotFound(sample.id.clone()));
        }
    }
    Ok((embed_hashed(&sample.caption)?, EmbeddingSource::Hashed))
}
