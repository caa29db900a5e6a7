//! Ranked paths, inferred networks, cell importance and trajectories.

mod trajectory;

pub use trajectory::{build_mst, cosine_distance, prune_by_time, OrientedEdge, TreeEdge};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::graph::{ExpressionDataset, GeneGraph, PathList};
use crate::model::{Forward, Model, ModelError, PathImportance, Structure};
use crate::text::describe_path;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedPath {
    /// Position in the path list.
    pub index: usize,
    pub path_id: String,
    pub importance: f64,
    pub nodes: Vec<usize>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedPaths {
    pub entries: Vec<RankedPath>,
    /// Set when fewer paths exist than were requested.
    pub note: Option<String>,
}

fn importance_of(model: &Model) -> Result<PathImportance, AnalysisError> {
    let m = model
        .params
        .get("graph.m")
        .ok_or_else(|| AnalysisError::Data("model has no path logits".into()))?;
    Ok(PathImportance::from_logits(m.data()))
}

/// Ranks paths by `values`, descending, ties by list position.
pub fn rank_paths(
    values: &[f64],
    paths: &PathList,
    graph: &GeneGraph,
    k: usize,
) -> Result<RankedPaths, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::InvalidArgument("k must be at least 1".into()));
    }
    if values.len() != paths.len() {
        return Err(AnalysisError::Data(format!(
            "{} importances for {} paths",
            values.len(),
            paths.len()
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let note = (k > paths.len()).then(|| format!("requested {k} paths, only {} exist", paths.len()));
    let entries = order
        .into_iter()
        .take(k)
        .map(|i| {
            let p = &paths.paths[i];
            Ok(RankedPath {
                index: i,
                path_id: p.id.clone(),
                importance: values[i],
                nodes: p.nodes.clone(),
                text: describe_path(&p.nodes, graph).map_err(|e| AnalysisError::Data(e.to_string()))?,
            })
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok(RankedPaths { entries, note })
}

/// Top `k` paths by learned importance.
pub fn extract_top_paths(
    model: &Model,
    paths: &PathList,
    graph: &GeneGraph,
    k: usize,
) -> Result<RankedPaths, AnalysisError> {
    rank_paths(&importance_of(model)?.values, paths, graph, k)
}

fn gene_name(graph: &GeneGraph, v: usize) -> &str {
    let g = &graph.genes()[v];
    if g.symbol.is_empty() {
        &g.id
    } else {
        &g.symbol
    }
}

/// `rank\tpath_id\timportance\tgene_symbols`, symbols joined by `->`.
pub fn ranked_paths_tsv(ranked: &RankedPaths, graph: &GeneGraph) -> String {
    let mut out = String::from("rank\tpath_id\timportance\tgene_symbols\n");
    for (r, e) in ranked.entries.iter().enumerate() {
        let genes: Vec<&str> = e.nodes.iter().map(|&v| gene_name(graph, v)).collect();
        let _ = writeln!(out, "{}\t{}\t{:.9}\t{}", r + 1, e.path_id, e.importance, genes.join("->"));
    }
    out
}

/// Every consecutive pair of every ranked path, scored by the largest
/// importance among the paths containing it.
pub fn paths_to_edge_confidence(ranked: &RankedPaths) -> BTreeMap<(usize, usize), f64> {
    let mut out: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in &ranked.entries {
        for w in e.nodes.windows(2) {
            let c = out.entry((w[0], w[1])).or_insert(e.importance);
            *c = c.max(e.importance);
        }
    }
    out
}

/// Edges named by gene id (the expression-matrix namespace), sorted by
/// descending confidence then name.
pub fn named_network(edges: &BTreeMap<(usize, usize), f64>, graph: &GeneGraph) -> Vec<(String, String, f64)> {
    let mut out: Vec<(String, String, f64)> = edges
        .iter()
        .map(|(&(s, d), &c)| (graph.genes()[s].id.clone(), graph.genes()[d].id.clone(), c))
        .collect();
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| (&a.0, &a.1).cmp(&(&b.0, &b.1))));
    out
}

/// `src_gene\tdst_gene\tconfidence`.
pub fn network_tsv(edges: &[(String, String, f64)]) -> String {
    let mut out = String::from("src_gene\tdst_gene\tconfidence\n");
    for (s, d, c) in edges {
        let _ = writeln!(out, "{s}\t{d}\t{c:.9}");
    }
    out
}

/// Per-population summaries split by condition (label 1 is diseased).
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationProfile {
    pub population: String,
    pub count_diseased: usize,
    pub count_healthy: usize,
    /// All zeros when the population has no diseased cells.
    pub mean_expr_diseased: Vec<f64>,
    /// All zeros when the population has no healthy cells.
    pub mean_expr_healthy: Vec<f64>,
    pub embedding: Vec<f64>,
    /// Mean of the annotated cell times, if any.
    pub time: Option<f64>,
}

pub const DEFAULT_ALPHA: f64 = 0.5;

/// `α·|n_d − n_h| + Σ_j |mean_d[j] − mean_h[j]|`.
pub fn cell_importance(p: &PopulationProfile, alpha: f64) -> Result<f64, AnalysisError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
    }
    if p.mean_expr_diseased.len() != p.mean_expr_healthy.len() {
        return Err(AnalysisError::Data("mean expression vectors differ in length".into()));
    }
    let freq = (p.count_diseased as f64 - p.count_healthy as f64).abs();
    let expr: f64 = p
        .mean_expr_diseased
        .iter()
        .zip(&p.mean_expr_healthy)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(alpha * freq + expr)
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> (usize, Vec<f64>) {
    let mut acc = vec![0.0; width];
    let mut n = 0;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    (n, acc)
}

fn population_indices(dataset: &ExpressionDataset, population: &str) -> Vec<usize> {
    (0..dataset.len())
        .filter(|&i| dataset.cells[i].population.as_deref() == Some(population))
        .collect()
}

/// Mean final graph embedding over the cells of one population.
pub fn population_embedding(
    model: &Model,
    structure: &Structure,
    dataset: &ExpressionDataset,
    population: &str,
) -> Result<Vec<f64>, AnalysisError> {
    let idx = population_indices(dataset, population);
    if idx.is_empty() {
        return Err(AnalysisError::Data(format!("population {population} has no cells")));
    }
    let fwd = Forward::new(model, structure)?;
    let preds = fwd.predict_all(idx.iter().map(|&i| dataset.cells[i].expression.as_slice()))?;
    Ok(mean_rows(preds.iter().map(|p| p.graph_embedding.as_slice()), model.config.h_emb).1)
}

/// Profiles for every tagged population, in first-appearance order.
pub fn population_profiles(
    model: &Model,
    structure: &Structure,
    dataset: &ExpressionDataset,
) -> Result<Vec<PopulationProfile>, AnalysisError> {
    let n = structure.shape.n_genes;
    let mut out = Vec::new();
    for pop in dataset.populations() {
        let idx = population_indices(dataset, &pop);
        let cells = || idx.iter().map(|&i| &dataset.cells[i]);
        let (count_diseased, mean_expr_diseased) =
            mean_rows(cells().filter(|c| c.label == 1).map(|c| c.expression.as_slice()), n);
        let (count_healthy, mean_expr_healthy) =
            mean_rows(cells().filter(|c| c.label == 0).map(|c| c.expression.as_slice()), n);
        let times: Vec<f64> = cells().filter_map(|c| c.time).collect();
        let time = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
        out.push(PopulationProfile {
            embedding: population_embedding(model, structure, dataset, &pop)?,
            population: pop,
            count_diseased,
            count_healthy,
            mean_expr_diseased,
            mean_expr_healthy,
            time,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGraph {
    pub nodes: Vec<String>,
    pub mst_edges: Vec<TreeEdge>,
    /// One entry per tree edge, oriented toward `target`.
    pub oriented: Vec<OrientedEdge>,
    pub target: usize,
}

impl TrajectoryGraph {
    pub fn pruned_edges(&self) -> impl Iterator<Item = &OrientedEdge> {
        self.oriented.iter().filter(|e| e.retained)
    }
}

/// Cosine-distance MST over population embeddings, pruned by time toward
/// `target`.
pub fn infer_trajectory(profiles: &[PopulationProfile], target: &str) -> Result<TrajectoryGraph, AnalysisError> {
    let t = profiles
        .iter()
        .position(|p| p.population == target)
        .ok_or_else(|| AnalysisError::InvalidArgument(format!("unknown target population {target}")))?;
    let n = profiles.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&profiles[i].embedding, &profiles[j].embedding)?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mst = build_mst(&dist)?;
    let times: Vec<Option<f64>> = profiles.iter().map(|p| p.time).collect();
    let oriented = prune_by_time(&mst, &times, t)?;
    Ok(TrajectoryGraph {
        nodes: profiles.iter().map(|p| p.population.clone()).collect(),
        mst_edges: mst,
        oriented,
        target: t,
    })
}

/// `src_population\tdst_population\tdistance\tretained`.
pub fn trajectory_tsv(t: &TrajectoryGraph) -> String {
    let mut out = String::from("src_population\tdst_population\tdistance\tretained\n");
    for e in &t.oriented {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.9}\t{}",
            t.nodes[e.from],
            t.nodes[e.to],
            e.distance,
            u8::from(e.retained)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synthesize_dataset, Cell, SynthConfig};
    use crate::model::{ModelConfig, ModelShape};
    use crate::numerics::Tensor;
    use crate::text::mock_store;

    fn profile(nd: usize, nh: usize, d: Vec<f64>, h: Vec<f64>) -> PopulationProfile {
        PopulationProfile {
            population: "p".into(),
            count_diseased: nd,
            count_healthy: nh,
            mean_expr_diseased: d,
            mean_expr_healthy: h,
            embedding: vec![],
            time: None,
        }
    }

    #[test]
    fn cell_importance_fixture() {
        let p = profile(10, 6, vec![1.0, 2.0], vec![0.5, 1.5]);
        assert_eq!(cell_importance(&p, 0.5).unwrap(), 3.0);
        assert_eq!(cell_importance(&p, 0.0).unwrap(), 1.0);
        let swapped = profile(6, 10, vec![0.5, 1.5], vec![1.0, 2.0]);
        assert_eq!(cell_importance(&swapped, 0.5).unwrap(), 3.0);
        assert_eq!(cell_importance(&profile(4, 4, vec![1.0], vec![1.0]), 0.5).unwrap(), 0.0);
        assert!(cell_importance(&p, -1.0).is_err());
    }

    fn setup() -> (crate::graph::SynthOutput, Model, Structure) {
        let s = synthesize_dataset(&SynthConfig { n_genes: 8, n_paths: 3, n_cells: 40, ..Default::default() }).unwrap();
        let cfg = ModelConfig { layers: 1, h_emb: 8, heads: 2, d_k: 4, r: 2, u: 4, d_llm: 6, d_expand: 3, d_max: 8 };
        let store = mock_store(&s.graph, &s.paths, 6, 0).unwrap();
        let structure = Structure::new(&s.graph, &s.paths, &store, &cfg).unwrap();
        let model = Model::init(cfg, ModelShape::of(&s.graph, &s.paths), 1).unwrap();
        (s, model, structure)
    }

    #[test]
    fn ranking_examples() {
        let (s, _, _) = setup();
        let r = rank_paths(&[0.9, 0.2, 0.5], &s.paths, &s.graph, 2).unwrap();
        assert_eq!(r.entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 2]);
        assert!(r.note.is_none());
        let r = rank_paths(&[0.5; 3], &s.paths, &s.graph, 2).unwrap();
        assert_eq!(r.entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1]);
        let r = rank_paths(&[0.1, 0.2, 0.3], &s.paths, &s.graph, 5).unwrap();
        assert_eq!(r.entries.len(), 3);
        assert!(r.note.is_some());
        assert!(rank_paths(&[0.1, 0.2, 0.3], &s.paths, &s.graph, 0).is_err());
        let tsv = ranked_paths_tsv(&r, &s.graph);
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.lines().nth(1).unwrap().starts_with("1\t"));
        assert!(tsv.contains("->"));
    }

    #[test]
    fn extract_uses_learned_logits() {
        let (s, mut model, _) = setup();
        *model.params.get_mut("graph.m").unwrap() = Tensor::row_vector(vec![-1.0, 2.0, 0.5]);
        let r = extract_top_paths(&model, &s.paths, &s.graph, 3).unwrap();
        assert_eq!(r.entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert!(r.entries.windows(2).all(|w| w[0].importance >= w[1].importance));
    }

    fn ranked(paths: &[(Vec<usize>, f64)]) -> RankedPaths {
        RankedPaths {
            entries: paths
                .iter()
                .enumerate()
                .map(|(i, (n, w))| RankedPath { index: i, path_id: format!("p{i}"), importance: *w, nodes: n.clone(), text: String::new() })
                .collect(),
            note: None,
        }
    }

    #[test]
    fn edge_confidence_max_rule() {
        let r = ranked(&[(vec![0, 1, 2], 0.9), (vec![1, 2, 3], 0.5)]);
        let e = paths_to_edge_confidence(&r);
        assert_eq!(e[&(1, 2)], 0.9);
        assert_eq!(e[&(2, 3)], 0.5);
        assert_eq!(e.len(), 3);
        let r = ranked(&[(vec![0, 1, 2], 0.9), (vec![3, 4, 5, 6], 0.5)]);
        assert_eq!(paths_to_edge_confidence(&r).len(), 2 + 3);
        for c in paths_to_edge_confidence(&r).values() {
            assert!(r.entries.iter().any(|p| p.importance == *c));
        }
    }

    #[test]
    fn network_output_is_sorted() {
        let (s, _, _) = setup();
        let mut edges = BTreeMap::new();
        edges.insert((0, 1), 0.2);
        edges.insert((1, 2), 0.9);
        edges.insert((2, 3), 0.2);
        let named = named_network(&edges, &s.graph);
        assert_eq!(named[0].2, 0.9);
        assert!(named[1].0 <= named[2].0);
        assert!(network_tsv(&named).starts_with("src_gene\tdst_gene\tconfidence\n"));
    }

    #[test]
    fn population_embedding_is_a_mean() {
        let (s, model, structure) = setup();
        let mut ds = s.dataset.clone();
        ds.cells.truncate(3);
        for (i, c) in ds.cells.iter_mut().enumerate() {
            c.population = Some(if i == 0 { "solo".into() } else { "pair".into() });
        }
        let fwd = Forward::new(&model, &structure).unwrap();
        let solo = population_embedding(&model, &structure, &ds, "solo").unwrap();
        assert_eq!(solo, fwd.predict(&ds.cells[0].expression).unwrap().graph_embedding);
        let pair = population_embedding(&model, &structure, &ds, "pair").unwrap();
        let dup: Vec<Cell> = vec![ds.cells[1].clone(), ds.cells[1].clone(), ds.cells[2].clone(), ds.cells[2].clone()];
        let dup = ExpressionDataset::new(dup, s.graph.n()).unwrap();
        let twice = population_embedding(&model, &structure, &dup, "pair").unwrap();
        for (a, b) in pair.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_ne!(solo, pair);
        assert!(population_embedding(&model, &structure, &ds, "none").is_err());
    }

    #[test]
    fn trajectory_over_synthetic_populations() {
        let (s, model, structure) = setup();
        let profiles = population_profiles(&model, &structure, &s.dataset).unwrap();
        assert_eq!(profiles.len(), 4);
        let total: usize = profiles.iter().map(|p| p.count_diseased + p.count_healthy).sum();
        assert_eq!(total, s.dataset.len());
        let t = infer_trajectory(&profiles, "pop3").unwrap();
        assert_eq!(t.mst_edges.len(), 3);
        for e in t.pruned_edges() {
            assert!(profiles[e.from].time.unwrap() < profiles[e.to].time.unwrap());
        }
        let tsv = trajectory_tsv(&t);
        assert_eq!(tsv.lines().count(), 4);
        assert!(infer_trajectory(&profiles, "nope").is_err());
    }
}
