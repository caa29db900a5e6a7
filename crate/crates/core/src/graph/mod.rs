//! Gene graphs, pre-defined path lists, per-cell expression data and the
//! flattened scatter index the path encoder runs on.

mod io;
mod synth;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

pub use io::{
    load_dataset, load_gene_graph, load_paths, read_expression_header, save_dataset,
    save_gene_graph, save_paths,
};
pub use synth::{synthesize_dataset, SynthConfig, SynthOutput};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate gene id `{0}`")]
    DuplicateGene(String),
    #[error("unknown gene id `{0}`")]
    UnknownGene(String),
    #[error("edge {src}->{dst}: {msg}")]
    InvalidEdge { src: usize, dst: usize, msg: String },
    #[error("invalid path list: {0}")]
    InvalidPaths(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gene {
    pub id: String,
    pub symbol: String,
    pub description: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub edge_type: usize,
}

/// Directed gene network. Node indices follow the order genes were supplied.
#[derive(Clone, Debug)]
pub struct GeneGraph {
    genes: Vec<Gene>,
    edges: Vec<Edge>,
    num_edge_types: usize,
    index: HashMap<String, usize>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

impl PartialEq for GeneGraph {
    fn eq(&self, other: &Self) -> bool {
        self.genes == other.genes
            && self.edges == other.edges
            && self.num_edge_types == other.num_edge_types
    }
}

impl GeneGraph {
    /// `num_edge_types` defaults to one more than the largest type present
    /// (at least 1).
    pub fn new(
        genes: Vec<Gene>,
        edges: Vec<Edge>,
        num_edge_types: Option<usize>,
    ) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(genes.len());
        for (i, g) in genes.iter().enumerate() {
            if index.insert(g.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateGene(g.id.clone()));
            }
        }
        let inferred = edges.iter().map(|e| e.edge_type + 1).max().unwrap_or(1);
        let num_edge_types = num_edge_types.unwrap_or(inferred);
        let n = genes.len();
        let mut edge_lookup = HashMap::with_capacity(edges.len());
        for (i, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(GraphError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    msg: format!("endpoint out of range for {n} genes"),
                });
            }
            if e.edge_type >= num_edge_types {
                return Err(GraphError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    msg: format!("edge type {} >= {num_edge_types}", e.edge_type),
                });
            }
            if edge_lookup.insert((e.src, e.dst), i).is_some() {
                return Err(GraphError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    msg: "duplicate edge".into(),
                });
            }
        }
        Ok(Self {
            genes,
            edges,
            num_edge_types,
            index,
            edge_lookup,
        })
    }

    pub fn n(&self) -> usize {
        self.genes.len()
    }

    pub fn genes(&self) -> &[Gene] {
        &self.genes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edge_types(&self) -> usize {
        self.num_edge_types
    }

    pub fn gene_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edge_type(&self, src: usize, dst: usize) -> Option<usize> {
        self.edge_lookup.get(&(src, dst)).map(|&i| self.edges[i].edge_type)
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edge_lookup.contains_key(&(src, dst))
    }

    /// Dense 0/1 adjacency, row = source.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.n()]; self.n()];
        for e in &self.edges {
            a[e.src][e.dst] = 1;
        }
        a
    }

    /// `(in_degree, out_degree)` per node.
    pub fn degrees(&self) -> (Vec<usize>, Vec<usize>) {
        compute_degrees(self)
    }
}

pub fn compute_degrees(graph: &GeneGraph) -> (Vec<usize>, Vec<usize>) {
    let mut din = vec![0; graph.n()];
    let mut dout = vec![0; graph.n()];
    for e in graph.edges() {
        dout[e.src] += 1;
        din[e.dst] += 1;
    }
    (din, dout)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub id: String,
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PathList {
    pub paths: Vec<Path>,
}

impl PathList {
    pub fn new(paths: Vec<Path>) -> Self {
        Self { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.nodes.len()).collect()
    }

    pub fn max_len(&self) -> usize {
        self.paths.iter().map(|p| p.nodes.len()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathViolation {
    TooShort { path: usize },
    MissingEdge { path: usize, position: usize, src: usize, dst: usize },
    NodeOutOfRange { path: usize, position: usize },
}

impl std::fmt::Display for PathViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TooShort { path } => write!(f, "path {path}: path too short"),
            Self::MissingEdge { path, position, src, dst } => {
                write!(f, "path {path} position {position}: no edge {src}->{dst}")
            }
            Self::NodeOutOfRange { path, position } => {
                write!(f, "path {path} position {position}: node out of range")
            }
        }
    }
}

/// Lists every place a path leaves the graph. An empty result means valid.
pub fn validate_paths(paths: &PathList, graph: &GeneGraph) -> Vec<PathViolation> {
    let mut out = Vec::new();
    for (pi, p) in paths.paths.iter().enumerate() {
        if p.nodes.len() < 2 {
            out.push(PathViolation::TooShort { path: pi });
        }
        for (pos, &v) in p.nodes.iter().enumerate() {
            if v >= graph.n() {
                out.push(PathViolation::NodeOutOfRange { path: pi, position: pos });
            }
        }
        for (pos, w) in p.nodes.windows(2).enumerate() {
            if w[0] < graph.n() && w[1] < graph.n() && !graph.has_edge(w[0], w[1]) {
                out.push(PathViolation::MissingEdge {
                    path: pi,
                    position: pos,
                    src: w[0],
                    dst: w[1],
                });
            }
        }
    }
    out
}

/// Path-major, position-minor flattening of a path list.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterIndex {
    pub flat_nodes: Arc<[usize]>,
    pub segment_ids: Arc<[usize]>,
    pub positions: Arc<[usize]>,
    /// Edge type from each row's node to the next node in its path; the last
    /// row of every path holds [`ScatterIndex::terminal_type`].
    pub pair_edge_types: Arc<[usize]>,
    pub num_paths: usize,
    pub terminal_type: usize,
}

impl ScatterIndex {
    pub fn k(&self) -> usize {
        self.flat_nodes.len()
    }

    /// Regroups the flat rows into per-path node sequences.
    pub fn regroup(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_paths];
        for (&node, &seg) in self.flat_nodes.iter().zip(self.segment_ids.iter()) {
            out[seg].push(node);
        }
        out
    }
}

/// Expects validated paths; pairs missing from the graph fall back to the
/// terminal type.
pub fn build_scatter_index(paths: &PathList, graph: &GeneGraph) -> ScatterIndex {
    let terminal = graph.num_edge_types();
    let k: usize = paths.lengths().iter().sum();
    let mut flat = Vec::with_capacity(k);
    let mut seg = Vec::with_capacity(k);
    let mut pos = Vec::with_capacity(k);
    let mut pair = Vec::with_capacity(k);
    for (pi, p) in paths.paths.iter().enumerate() {
        for (i, &v) in p.nodes.iter().enumerate() {
            flat.push(v);
            seg.push(pi);
            pos.push(i);
            let t = p
                .nodes
                .get(i + 1)
                .and_then(|&next| graph.edge_type(v, next))
                .unwrap_or(terminal);
            pair.push(t);
        }
    }
    ScatterIndex {
        flat_nodes: flat.into(),
        segment_ids: seg.into(),
        positions: pos.into(),
        pair_edge_types: pair.into(),
        num_paths: paths.len(),
        terminal_type: terminal,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: String,
    pub expression: Vec<f64>,
    pub label: u8,
    pub population: Option<String>,
    pub time: Option<f64>,
}

/// Cells with expression vectors in graph node order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExpressionDataset {
    pub cells: Vec<Cell>,
}

impl ExpressionDataset {
    pub fn new(cells: Vec<Cell>, n: usize) -> Result<Self, GraphError> {
        for c in &cells {
            if c.expression.len() != n {
                return Err(GraphError::InvalidDataset(format!(
                    "cell {} has {} values, expected {n}",
                    c.id,
                    c.expression.len()
                )));
            }
            if c.label > 1 {
                return Err(GraphError::InvalidDataset(format!(
                    "cell {} has label {}",
                    c.id, c.label
                )));
            }
            if let Some(t) = c.time {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(GraphError::InvalidDataset(format!(
                        "cell {} has invalid time {t}",
                        c.id
                    )));
                }
            }
        }
        Ok(Self { cells })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            cells: indices.iter().map(|&i| self.cells[i].clone()).collect(),
        }
    }

    /// Population tags in first-appearance order.
    pub fn populations(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for c in &self.cells {
            if let Some(p) = &c.population {
                if !seen.contains(p) {
                    seen.push(p.clone());
                }
            }
        }
        seen
    }
}
