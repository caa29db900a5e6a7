//! Binary embedding store.
//!
//! Layout (little-endian): magic `TNGE`, u32 version (1), u32 width, u64
//! record count, then per record: u8 kind (0 gene, 1 path), u32 key length,
//! UTF-8 key, `width` f64 values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path as FsPath;

use crate::graph::{GeneGraph, PathList};
use crate::numerics::Tensor;

use super::{describe_gene, describe_path, mock_embed, EmbedError};

const MAGIC: &[u8; 4] = b"TNGE";
const VERSION: u32 = 1;
pub const DEFAULT_D_LLM: usize = 768;

/// Seed for vectors synthesized when a key is missing from the store.
pub const FALLBACK_SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    d_llm: usize,
    genes: BTreeMap<String, Vec<f64>>,
    paths: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    Gene,
    Path,
}

impl EmbeddingStore {
    pub fn new(d_llm: usize) -> Self {
        Self {
            d_llm,
            genes: BTreeMap::new(),
            paths: BTreeMap::new(),
        }
    }

    pub fn d_llm(&self) -> usize {
        self.d_llm
    }

    pub fn insert(&mut self, kind: EmbeddingKind, key: impl Into<String>, v: Vec<f64>) -> Result<(), EmbedError> {
        if v.len() != self.d_llm {
            return Err(EmbedError::WidthMismatch {
                expected: self.d_llm,
                got: v.len(),
            });
        }
        let key = key.into();
        let map = match kind {
            EmbeddingKind::Gene => &mut self.genes,
            EmbeddingKind::Path => &mut self.paths,
        };
        if map.insert(key.clone(), v).is_some() {
            return Err(EmbedError::InvalidInput(format!("duplicate key `{key}`")));
        }
        Ok(())
    }

    pub fn gene(&self, id: &str) -> Option<&[f64]> {
        self.genes.get(id).map(Vec::as_slice)
    }

    pub fn path(&self, id: &str) -> Option<&[f64]> {
        self.paths.get(id).map(Vec::as_slice)
    }

    pub fn gene_count(&self) -> usize {
        self.genes.len()
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    /// `n × d_llm` matrix of gene vectors in graph order. Missing genes get
    /// the mock embedding of their description.
    pub fn gene_matrix(&self, graph: &GeneGraph) -> Tensor {
        let mut data = Vec::with_capacity(graph.n() * self.d_llm);
        let mut missing = 0;
        for g in graph.genes() {
            match self.gene(&g.id) {
                Some(v) => data.extend_from_slice(v),
                None => {
                    missing += 1;
                    data.extend(mock_embed(&describe_gene(g), self.d_llm, FALLBACK_SEED));
                }
            }
        }
        if missing > 0 {
            log::warn!("{missing} genes missing from embedding store; using mock embeddings");
        }
        Tensor::new(vec![graph.n(), self.d_llm], data).expect("width fixed by store")
    }

    /// `p × d_llm` matrix of path vectors in list order, with the same
    /// fallback as [`EmbeddingStore::gene_matrix`].
    pub fn path_matrix(&self, paths: &PathList, graph: &GeneGraph) -> Result<Tensor, EmbedError> {
        let mut data = Vec::with_capacity(paths.len() * self.d_llm);
        let mut missing = 0;
        for p in &paths.paths {
            match self.path(&p.id) {
                Some(v) => data.extend_from_slice(v),
                None => {
                    missing += 1;
                    let text = describe_path(&p.nodes, graph)?;
                    data.extend(mock_embed(&text, self.d_llm, FALLBACK_SEED));
                }
            }
        }
        if missing > 0 {
            log::warn!("{missing} paths missing from embedding store; using mock embeddings");
        }
        Ok(Tensor::new(vec![paths.len(), self.d_llm], data).expect("width fixed by store"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let count = (self.genes.len() + self.paths.len()) as u64;
        let mut out = Vec::with_capacity(20 + count as usize * (9 + self.d_llm * 8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_llm as u32).to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (kind, map) in [(0u8, &self.genes), (1u8, &self.paths)] {
            for (key, v) in map {
                out.push(kind);
                out.extend_from_slice(&(key.len() as u32).to_le_bytes());
                out.extend_from_slice(key.as_bytes());
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EmbedError::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let d = r.u32()? as usize;
        let count = r.u64()?;
        let mut store = Self::new(d);
        for i in 0..count {
            let kind = match r.take(1)?[0] {
                0 => EmbeddingKind::Gene,
                1 => EmbeddingKind::Path,
                k => return Err(EmbedError::Format(format!("record {i}: unknown kind {k}"))),
            };
            let klen = r.u32()? as usize;
            let key = std::str::from_utf8(r.take(klen)?)
                .map_err(|_| EmbedError::Format(format!("record {i}: key is not UTF-8")))?
                .to_string();
            let raw = r.take(d * 8).map_err(|_| {
                EmbedError::Format(format!("record {i}: width inconsistent with header width {d}"))
            })?;
            let v = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            store.insert(kind, key, v)?;
        }
        if r.pos != bytes.len() {
            return Err(EmbedError::Format(format!(
                "{} trailing bytes: record widths inconsistent with header width {d}",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }
}

pub fn save_embedding_store(store: &EmbeddingStore, file: &FsPath) -> Result<(), EmbedError> {
    fs::write(file, store.to_bytes()).map_err(|e| EmbedError::Io(format!("{}: {e}", file.display())))
}

pub fn load_embedding_store(file: &FsPath) -> Result<EmbeddingStore, EmbedError> {
    let bytes = fs::read(file).map_err(|e| EmbedError::Io(format!("{}: {e}", file.display())))?;
    EmbeddingStore::from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| EmbedError::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
