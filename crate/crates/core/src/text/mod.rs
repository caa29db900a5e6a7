//! Sentence embeddings for genes and paths: text templates, a hash-seeded
//! mock encoder, the `TNGE` store format and an HTTP batch client.

mod client;
mod describe;
mod mock;
mod store;

pub use client::{fetch_embeddings, EmbedClientConfig};
pub use describe::{describe_gene, describe_path};
pub use mock::mock_embed;
pub use store::{
    load_embedding_store, save_embedding_store, EmbeddingKind, EmbeddingStore, DEFAULT_D_LLM,
    FALLBACK_SEED,
};

use crate::graph::{GeneGraph, PathList};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("embedding store format: {0}")]
    Format(String),
    #[error("embedding request for batch {batch} failed after {attempts} attempts: {reason}")]
    Fetch {
        batch: usize,
        attempts: u32,
        reason: String,
    },
    #[error("embedding service protocol: {0}")]
    Protocol(String),
    #[error("{0}")]
    InvalidInput(String),
    #[error("io: {0}")]
    Io(String),
}

/// Description texts for every gene, then every path, with their store keys.
pub fn render_texts(
    graph: &GeneGraph,
    paths: &PathList,
) -> Result<Vec<(EmbeddingKind, String, String)>, EmbedError> {
    let mut out = Vec::with_capacity(graph.n() + paths.len());
    for g in graph.genes() {
        out.push((EmbeddingKind::Gene, g.id.clone(), describe_gene(g)));
    }
    for p in &paths.paths {
        out.push((EmbeddingKind::Path, p.id.clone(), describe_path(&p.nodes, graph)?));
    }
    Ok(out)
}

/// Builds a store from mock embeddings of every rendered text.
pub fn mock_store(graph: &GeneGraph, paths: &PathList, d_llm: usize, seed: u64) -> Result<EmbeddingStore, EmbedError> {
    let mut store = EmbeddingStore::new(d_llm);
    for (kind, key, text) in render_texts(graph, paths)? {
        store.insert(kind, key, mock_embed(&text, d_llm, seed))?;
    }
    Ok(store)
}
