//! The path-aware graph transformer.
//!
//! A forward pass runs the gene encoder (expression/text fusion, centrality
//! encoding, biased multi-head attention), feeds every layer's gene
//! embeddings through a path-encoder layer, and pools the resulting path
//! embeddings with dataset-global path importances into a binary prediction.

pub mod gene_encoder;
pub mod graph_encoder;
pub mod path_encoder;
mod forward;
mod params;
mod structure;

pub use forward::{Bound, CellOutput, Forward, Shared};
pub use graph_encoder::{PathImportance, Prediction};
pub use params::Params;
pub use structure::Structure;

use crate::graph::{GeneGraph, PathList};
use crate::numerics::NumericsError;
use crate::text::EmbedError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("model does not match inputs: {0}")]
    Structure(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Architecture hyperparameters chosen by the user.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub h_emb: usize,
    pub heads: usize,
    pub d_k: usize,
    /// Number of score sets per path node.
    pub r: usize,
    /// Path-specific embedding width; `r * u == h_emb`.
    pub u: usize,
    pub d_llm: usize,
    pub d_expand: usize,
    /// Largest degree with its own centrality embedding row.
    pub d_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            h_emb: 64,
            heads: 4,
            d_k: 16,
            r: 4,
            u: 16,
            d_llm: crate::text::DEFAULT_D_LLM,
            d_expand: 32,
            d_max: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 {
            return err("at least one layer required".into());
        }
        if [self.h_emb, self.heads, self.d_k, self.r, self.u, self.d_llm, self.d_expand]
            .contains(&0)
        {
            return err("all widths must be positive".into());
        }
        if self.heads * self.d_k != self.h_emb {
            return err(format!(
                "heads ({}) * d_k ({}) must equal h_emb ({})",
                self.heads, self.d_k, self.h_emb
            ));
        }
        if self.r * self.u != self.h_emb {
            return err(format!(
                "r ({}) * u ({}) must equal h_emb ({})",
                self.r, self.u, self.h_emb
            ));
        }
        Ok(())
    }

    /// Width of the concatenated `[sentence embedding, expanded expression]`
    /// input to the fusion MLP.
    pub fn fusion_input_width(&self) -> usize {
        self.d_llm + self.d_expand
    }
}

/// Sizes fixed by the graph and path list a model was built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub n_genes: usize,
    pub n_paths: usize,
    pub n_edge_types: usize,
    pub max_path_len: usize,
}

impl ModelShape {
    pub fn of(graph: &GeneGraph, paths: &PathList) -> Self {
        Self {
            n_genes: graph.n(),
            n_paths: paths.len(),
            n_edge_types: graph.num_edge_types(),
            max_path_len: paths.max_len(),
        }
    }

    /// Attention edge-type vocabulary: graph types, then NO_EDGE, then SELF.
    pub fn attention_edge_types(&self) -> usize {
        self.n_edge_types + 2
    }

    pub fn no_edge_type(&self) -> usize {
        self.n_edge_types
    }

    pub fn self_type(&self) -> usize {
        self.n_edge_types + 1
    }

    /// Path-pair vocabulary: graph types, then TERMINAL.
    pub fn pair_edge_types(&self) -> usize {
        self.n_edge_types + 1
    }
}

/// Configuration, shape and trained tensors together.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub params: Params,
}

impl Model {
    /// Freshly initialized parameters, deterministic in `seed`.
    pub fn init(config: ModelConfig, shape: ModelShape, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if shape.n_genes == 0 || shape.n_paths == 0 {
            return Err(ModelError::Config("graph and path list must be nonempty".into()));
        }
        let params = params::init_params(&config, &shape, seed);
        Ok(Self {
            config,
            shape,
            params,
        })
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::graph::{Cell, Edge, Gene, Path};
    use crate::numerics::Tensor;
    use crate::text::{mock_store, EmbeddingKind, EmbeddingStore};

    pub fn tiny_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            h_emb: 8,
            heads: 2,
            d_k: 4,
            r: 2,
            u: 4,
            d_llm: 5,
            d_expand: 3,
            d_max: 4,
        }
    }

    fn genes(n: usize) -> Vec<Gene> {
        (0..n)
            .map(|i| Gene {
                id: format!("g{i}"),
                symbol: format!("S{i}"),
                description: None,
            })
            .collect()
    }

    fn graph(n: usize, edges: &[(usize, usize, usize)], types: usize) -> GeneGraph {
        let edges = edges
            .iter()
            .map(|&(src, dst, edge_type)| Edge { src, dst, edge_type })
            .collect();
        GeneGraph::new(genes(n), edges, Some(types)).unwrap()
    }

    fn paths(list: &[&[usize]]) -> PathList {
        PathList::new(
            list.iter()
                .enumerate()
                .map(|(i, n)| Path {
                    id: format!("p{i}"),
                    nodes: n.to_vec(),
                })
                .collect(),
        )
    }

    /// Five genes, paths 1→3→4 and 2→3→4→5 in one-based labels.
    pub fn worked_example() -> (GeneGraph, PathList) {
        let g = graph(5, &[(0, 2, 0), (2, 3, 0), (1, 2, 0), (3, 4, 0)], 1);
        (g, paths(&[&[0, 2, 3], &[1, 2, 3, 4]]))
    }

    pub struct Toy {
        pub graph: GeneGraph,
        pub structure: Structure,
        pub model: Model,
        pub cells: Vec<Cell>,
    }

    fn cells(n: usize, count: usize) -> Vec<Cell> {
        (0..count)
            .map(|c| Cell {
                id: format!("c{c}"),
                expression: (0..n).map(|v| ((c * 7 + v * 3) % 5) as f64 * 0.4 - 0.6).collect(),
                label: (c % 2) as u8,
                population: None,
                time: None,
            })
            .collect()
    }

    fn assemble(graph: GeneGraph, paths: PathList, store: EmbeddingStore, n_cells: usize) -> Toy {
        let cfg = tiny_config();
        let structure = Structure::new(&graph, &paths, &store, &cfg).unwrap();
        let model = Model::init(cfg, ModelShape::of(&graph, &paths), 7).unwrap();
        let cells = cells(graph.n(), n_cells);
        Toy {
            graph,
            structure,
            model,
            cells,
        }
    }

    pub fn toy() -> Toy {
        let g = graph(
            6,
            &[(0, 1, 0), (1, 2, 1), (2, 3, 0), (0, 4, 1), (4, 5, 0), (3, 5, 1)],
            2,
        );
        let p = paths(&[&[0, 1, 2, 3], &[0, 4, 5], &[2, 3, 5]]);
        let store = mock_store(&g, &p, tiny_config().d_llm, 0).unwrap();
        assemble(g, p, store, 4)
    }

    /// Genes 1 and 2 are interchangeable: same degree, same edge type from
    /// gene 0, same sentence embedding.
    pub fn symmetric_toy() -> Toy {
        let g = graph(3, &[(0, 1, 0), (0, 2, 0)], 1);
        let p = paths(&[&[0, 1], &[0, 2]]);
        let d = tiny_config().d_llm;
        let mut store = EmbeddingStore::new(d);
        let v = |s: f64| (0..d).map(|i| s + i as f64 * 0.1).collect::<Vec<_>>();
        store.insert(EmbeddingKind::Gene, "g0", v(0.5)).unwrap();
        store.insert(EmbeddingKind::Gene, "g1", v(-0.2)).unwrap();
        store.insert(EmbeddingKind::Gene, "g2", v(-0.2)).unwrap();
        store.insert(EmbeddingKind::Path, "p0", v(0.1)).unwrap();
        store.insert(EmbeddingKind::Path, "p1", v(0.1)).unwrap();
        assemble(g, p, store, 2)
    }

    /// Replaces the constant-initialized groups with varied values.
    pub fn perturbed(model: &Model) -> Model {
        let mut m = model.clone();
        for name in ["graph.m", "spatial.scale", "edge.scalar"] {
            let t = m.params.get_mut(name).unwrap();
            let vals = (0..t.len()).map(|i| 0.3 * (i as f64 * 1.7).sin() + 0.1).collect();
            *t = Tensor::new(t.shape().to_vec(), vals).unwrap();
        }
        m
    }
}
