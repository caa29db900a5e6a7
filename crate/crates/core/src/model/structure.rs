use std::sync::Arc;

use super::{ModelConfig, ModelError, ModelShape};
use crate::graph::{build_scatter_index, compute_degrees, validate_paths, GeneGraph, PathList, ScatterIndex};
use crate::numerics::Tensor;
use crate::text::EmbeddingStore;

/// Everything about the inputs that is shared by all cells: degrees, the
/// pairwise edge-type matrix, the scatter index and the resolved sentence
/// embeddings.
#[derive(Clone, Debug)]
pub struct Structure {
    pub shape: ModelShape,
    pub in_degree: Arc<[usize]>,
    pub out_degree: Arc<[usize]>,
    /// Row-major `n × n` attention edge types (graph type, NO_EDGE or SELF).
    pub pair_types: Arc<[usize]>,
    pub scatter: ScatterIndex,
    pub gene_text: Tensor,
    pub path_text: Tensor,
}

impl Structure {
    pub fn new(
        graph: &GeneGraph,
        paths: &PathList,
        store: &EmbeddingStore,
        config: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let violations = validate_paths(paths, graph);
        if let Some(v) = violations.first() {
            return Err(ModelError::Structure(format!(
                "{} invalid path entries, first: {v}",
                violations.len()
            )));
        }
        if paths.is_empty() {
            return Err(ModelError::Structure("empty path list".into()));
        }
        if store.d_llm() != config.d_llm {
            return Err(ModelError::Structure(format!(
                "embedding store width {} but model expects {}",
                store.d_llm(),
                config.d_llm
            )));
        }
        let shape = ModelShape::of(graph, paths);
        let (din, dout) = compute_degrees(graph);
        let clamp = |d: Vec<usize>| -> Arc<[usize]> { d.into_iter().map(|x| x.min(config.d_max)).collect() };
        let n = graph.n();
        let mut pair_types = vec![shape.no_edge_type(); n * n];
        for e in graph.edges() {
            pair_types[e.src * n + e.dst] = e.edge_type;
        }
        for v in 0..n {
            pair_types[v * n + v] = shape.self_type();
        }
        Ok(Self {
            shape,
            in_degree: clamp(din),
            out_degree: clamp(dout),
            pair_types: pair_types.into(),
            scatter: build_scatter_index(paths, graph),
            gene_text: store.gene_matrix(graph),
            path_text: store.path_matrix(paths, graph)?,
        })
    }

    /// Checks that a model was built for this structure.
    pub fn check_shape(&self, shape: &ModelShape) -> Result<(), ModelError> {
        if shape.n_genes != self.shape.n_genes
            || shape.n_paths != self.shape.n_paths
            || shape.n_edge_types != self.shape.n_edge_types
        {
            return Err(ModelError::Structure(format!(
                "model built for {shape:?}, inputs have {:?}",
                self.shape
            )));
        }
        if self.shape.max_path_len > shape.max_path_len {
            return Err(ModelError::Structure(format!(
                "path of length {} exceeds the positional table ({})",
                self.shape.max_path_len, shape.max_path_len
            )));
        }
        Ok(())
    }
}
