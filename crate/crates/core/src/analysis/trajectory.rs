use std::collections::VecDeque;

use super::AnalysisError;

/// `1 − cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::InvalidArgument(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(AnalysisError::InvalidArgument("cosine distance of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// Undirected tree edge `(i, j)` with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeEdge {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Minimum spanning tree by greedy edge insertion; equal weights are taken
/// in lexicographic `(i, j)` order.
pub fn build_mst(dist: &[Vec<f64>]) -> Result<Vec<TreeEdge>, AnalysisError> {
    let n = dist.len();
    if n < 2 {
        return Err(AnalysisError::InvalidArgument(format!("spanning tree over {n} nodes")));
    }
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(AnalysisError::InvalidArgument("distance matrix is not square".into()));
        }
        for j in i + 1..n {
            let (a, b) = (row[j], dist[j][i]);
            if !a.is_finite() || a != b {
                return Err(AnalysisError::InvalidArgument(format!(
                    "distance ({i}, {j}) must be finite and symmetric"
                )));
            }
            edges.push(TreeEdge { i, j, distance: a });
        }
    }
    edges.sort_by(|x, y| x.distance.total_cmp(&y.distance).then((x.i, x.j).cmp(&(y.i, y.j))));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut tree = Vec::with_capacity(n - 1);
    for e in edges {
        let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
        if a != b {
            parent[a] = b;
            tree.push(e);
            if tree.len() == n - 1 {
                break;
            }
        }
    }
    Ok(tree)
}

/// A tree edge oriented toward the target population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedEdge {
    pub from: usize,
    pub to: usize,
    pub distance: f64,
    pub retained: bool,
}

/// Orients every edge along the tree path toward `target` and keeps it iff
/// `Time(from) < Time(to)`.
pub fn prune_by_time(
    tree: &[TreeEdge],
    times: &[Option<f64>],
    target: usize,
) -> Result<Vec<OrientedEdge>, AnalysisError> {
    let n = times.len();
    if target >= n {
        return Err(AnalysisError::InvalidArgument(format!("target {target} of {n} nodes")));
    }
    let mut adj = vec![Vec::new(); n];
    for (k, e) in tree.iter().enumerate() {
        if e.i >= n || e.j >= n {
            return Err(AnalysisError::InvalidArgument(format!("edge ({}, {}) out of range", e.i, e.j)));
        }
        adj[e.i].push((e.j, k));
        adj[e.j].push((e.i, k));
    }
    // parent pointers toward the target
    let mut toward: Vec<Option<usize>> = vec![None; tree.len()];
    let mut seen = vec![false; n];
    seen[target] = true;
    let mut queue = VecDeque::from([target]);
    while let Some(v) = queue.pop_front() {
        for &(w, k) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                toward[k] = Some(w);
                queue.push_back(w);
            }
        }
    }
    let time = |v: usize| {
        times[v].ok_or_else(|| AnalysisError::Data(format!("population {v} has no time annotation")))
    };
    tree.iter()
        .zip(toward)
        .map(|(e, child)| {
            let child = child.ok_or_else(|| {
                AnalysisError::InvalidArgument(format!("edge ({}, {}) is not a tree edge", e.i, e.j))
            })?;
            let parent = if child == e.i { e.j } else { e.i };
            let (tf, tt) = (time(child)?, time(parent)?);
            Ok(OrientedEdge {
                from: child,
                to: parent,
                distance: e.distance,
                retained: tf < tt,
            })
        })
        .collect()
}
