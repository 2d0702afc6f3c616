use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TPFE_MAGIC: &[u8; 4] = b"TPFE";
pub const TPFE_VERSION: u32 = 1;

/// Width of ChemBERTa-style toxin token embeddings.
pub const CLM_DIM: usize = 384;
/// Width of ProtBert-style residue embeddings.
pub const PLM_DIM: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub entity_id: String,
    /// `L×D` token embeddings.
    pub values: Tensor<f32>,
}

impl EmbeddingMatrix {
    pub fn new(entity_id: impl Into<String>, rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        let values = Tensor::matrix(rows, dim, values)?;
        if !values.is_finite() {
            return Err(Error::data("embedding contains non-finite values"));
        }
        Ok(EmbeddingMatrix { entity_id: entity_id.into(), values })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Precomputed embeddings keyed by entity id, all of one width.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: Vec<EmbeddingMatrix>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore { dim, entries: Vec::new(), index: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, m: EmbeddingMatrix) -> Result<()> {
        if m.dim() != self.dim {
            return Err(Error::data(format!(
                "embedding for {} has width {}, store expects {}",
                m.entity_id,
                m.dim(),
                self.dim
            )));
        }
        if self.index.contains_key(&m.entity_id) {
            return Err(Error::data(format!("duplicate embedding id {}", m.entity_id)));
        }
        self.index.insert(m.entity_id.clone(), self.entries.len());
        self.entries.push(m);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingMatrix> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingMatrix> {
        self.entries.iter()
    }
}

/// Writes the little-endian TPFE layout:
/// `"TPFE" | u32 version | u32 dim | u32 count | { u32 id_len | id | u32 rows | rows×dim f32 }*`.
pub fn save_embeddings(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TPFE_MAGIC);
    buf.extend_from_slice(&TPFE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for m in store.iter() {
        buf.extend_from_slice(&(m.entity_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(m.entity_id.as_bytes());
        buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        for v in m.values.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(format!("truncated TPFE file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingStore> {
    let bytes = fs::read(path)?;
    parse_embeddings(&bytes, expected_dim)
}

pub fn parse_embeddings(bytes: &[u8], expected_dim: usize) -> Result<EmbeddingStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != TPFE_MAGIC {
        return Err(Error::format("not a TPFE file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != TPFE_VERSION {
        return Err(Error::format(format!("unsupported TPFE version {version}")));
    }
    let dim = r.u32("dim")? as usize;
    if dim != expected_dim {
        return Err(Error::format(format!("TPFE dim {dim} does not match expected {expected_dim}")));
    }
    if dim == 0 {
        return Err(Error::format("TPFE dim must be positive"));
    }
    let count = r.u32("entity count")? as usize;
    let mut store = EmbeddingStore::new(dim);
    for _ in 0..count {
        let id_len = r.u32("id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "id")?)
            .map_err(|_| Error::format("entity id is not UTF-8"))?
            .to_owned();
        let rows = r.u32("row count")? as usize;
        if rows == 0 {
            return Err(Error::format(format!("entity {id} has zero rows")));
        }
        let n = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("payload size overflow"))?;
        let raw = r.take(n, "payload")?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let m = EmbeddingMatrix::new(id, rows, dim, values).map_err(|e| Error::format(e.to_string()))?;
        store.insert(m).map_err(|e| Error::format(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after TPFE payload"));
    }
    Ok(store)
}
