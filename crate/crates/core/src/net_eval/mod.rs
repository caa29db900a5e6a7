//! Scoring an inferred network against a gold standard by the area under
//! its stepwise precision/recall curve (average precision).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path as FsPath;

#[derive(Debug, thiserror::Error)]
pub enum NetEvalError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("nothing to evaluate: {0}")]
    NothingToEvaluate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Edge = (String, String);

/// Inferred edges with confidences.
pub type Network = BTreeMap<Edge, f64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldStandard {
    pub edges: BTreeSet<Edge>,
    pub genes: BTreeSet<String>,
}

impl GoldStandard {
    pub fn new(edges: impl IntoIterator<Item = Edge>) -> Self {
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        let genes = edges.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        Self { edges, genes }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

const HEADER_WORDS: &[&str] = &[
    "regulator_gene",
    "regulator",
    "target_gene",
    "target",
    "source",
    "src",
    "src_gene",
    "tf",
    "gene1",
];

fn is_numeric(s: &str) -> bool {
    s.parse::<f64>().is_ok()
}

/// The first row is a header when it names a known column, or when it is
/// textual while the row after it holds numeric gene ids.
fn looks_like_header(first: &[&str], second: Option<&[&str]>) -> bool {
    if first.iter().any(|f| HEADER_WORDS.contains(&f.to_ascii_lowercase().as_str())) {
        return true;
    }
    let textual = first.iter().take(2).all(|f| !is_numeric(f));
    let next_numeric = second.is_some_and(|s| s.iter().take(2).all(|f| is_numeric(f)));
    textual && next_numeric
}

fn rows(text: &str) -> Vec<(usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').map(str::trim).collect()))
        .collect()
}

/// `regulator_gene\ttarget_gene` rows; the header is optional.
pub fn parse_gold_standard(text: &str, file: &str) -> Result<GoldStandard, NetEvalError> {
    let rows = rows(text);
    let skip = match rows.first() {
        Some((_, first)) => usize::from(looks_like_header(first, rows.get(1).map(|r| r.1.as_slice()))),
        None => 0,
    };
    let mut edges = Vec::new();
    for (line, f) in &rows[skip..] {
        if f.len() < 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(NetEvalError::Parse {
                file: file.into(),
                line: *line,
                msg: "expected regulator and target columns".into(),
            });
        }
        edges.push((f[0].to_string(), f[1].to_string()));
    }
    Ok(GoldStandard::new(edges))
}

pub fn load_gold_standard(file: &FsPath) -> Result<GoldStandard, NetEvalError> {
    let text = read(file)?;
    parse_gold_standard(&text, &file.display().to_string())
}

fn read(file: &FsPath) -> Result<String, NetEvalError> {
    std::fs::read_to_string(file).map_err(|source| NetEvalError::Io {
        path: file.display().to_string(),
        source,
    })
}

/// `src_gene\tdst_gene\tconfidence` rows, header optional. Repeated edges
/// keep the largest confidence.
pub fn parse_network(text: &str, file: &str) -> Result<Network, NetEvalError> {
    let mut out = Network::new();
    for (i, (line, f)) in rows(text).into_iter().enumerate() {
        let err = |msg: String| NetEvalError::Parse {
            file: file.into(),
            line,
            msg,
        };
        if f.len() < 3 {
            return Err(err("expected src, dst and confidence columns".into()));
        }
        let c = match f[2].parse::<f64>() {
            Ok(c) if c.is_finite() => c,
            _ if i == 0 => continue,
            _ => return Err(err(format!("bad confidence {:?}", f[2]))),
        };
        let e = out.entry((f[0].to_string(), f[1].to_string())).or_insert(c);
        *e = e.max(c);
    }
    Ok(out)
}

pub fn load_network(file: &FsPath) -> Result<Network, NetEvalError> {
    let text = read(file)?;
    parse_network(&text, &file.display().to_string())
}

fn canonical((a, b): &Edge) -> Edge {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Merges both directions of every pair, keeping the larger confidence.
pub fn symmetrize(inferred: &Network, gold: &GoldStandard) -> (Network, GoldStandard) {
    let mut net = Network::new();
    for (e, &c) in inferred {
        let v = net.entry(canonical(e)).or_insert(c);
        *v = v.max(c);
    }
    (net, GoldStandard::new(gold.edges.iter().map(canonical)))
}

/// Keeps edges whose endpoints both lie in the gold gene set and the
/// expressed gene set, for both networks.
pub fn filter_to_intersection(
    inferred: &Network,
    gold: &GoldStandard,
    expressed: &BTreeSet<String>,
) -> Result<(Network, GoldStandard), NetEvalError> {
    let keep: BTreeSet<&String> = gold.genes.iter().filter(|g| expressed.contains(*g)).collect();
    let ok = |(a, b): &Edge| keep.contains(a) && keep.contains(b);
    let net: Network = inferred.iter().filter(|(e, _)| ok(e)).map(|(e, &c)| (e.clone(), c)).collect();
    let g = GoldStandard::new(gold.edges.iter().filter(|e| ok(e)).cloned());
    if g.is_empty() {
        return Err(NetEvalError::NothingToEvaluate(format!(
            "no gold edge has both genes among the {} shared genes",
            keep.len()
        )));
    }
    Ok((net, g))
}

/// Descending confidence, ties by `(src, dst)`, optionally truncated.
pub fn rank_and_truncate(inferred: &Network, max_edges: Option<usize>) -> Vec<(Edge, f64)> {
    let mut v: Vec<(Edge, f64)> = inferred.iter().map(|(e, &c)| (e.clone(), c)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(m) = max_edges {
        v.truncate(m);
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub rank: usize,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub inferred_edges: usize,
    pub gold_edges: usize,
    pub points: Vec<PrPoint>,
    pub area: f64,
}

/// Precision and recall after each ranked edge; the area sums precision at
/// every hit, weighted by `1/|gold|`.
pub fn fscore_area(ranked: &[(Edge, f64)], gold: &GoldStandard) -> Result<EvalReport, NetEvalError> {
    if gold.is_empty() {
        return Err(NetEvalError::NothingToEvaluate("empty gold standard".into()));
    }
    let total = gold.len() as f64;
    let mut hits = 0usize;
    let mut area = 0.0;
    let mut points = Vec::with_capacity(ranked.len());
    for (t, (e, _)) in ranked.iter().enumerate() {
        let rank = t + 1;
        let hit = gold.edges.contains(e);
        if hit {
            hits += 1;
        }
        let precision = hits as f64 / rank as f64;
        if hit {
            area += precision / total;
        }
        points.push(PrPoint {
            rank,
            recall: hits as f64 / total,
            precision,
        });
    }
    Ok(EvalReport {
        inferred_edges: ranked.len(),
        gold_edges: gold.len(),
        points,
        area,
    })
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub max_edges: Option<usize>,
    pub undirected: bool,
}

/// Symmetrize (optional), filter, rank and score.
pub fn evaluate_network(
    inferred: &Network,
    gold: &GoldStandard,
    expressed: &BTreeSet<String>,
    opts: &EvalOptions,
) -> Result<EvalReport, NetEvalError> {
    let (net, gold) = if opts.undirected {
        symmetrize(inferred, gold)
    } else {
        (inferred.clone(), gold.clone())
    };
    let (net, gold) = filter_to_intersection(&net, &gold, expressed)?;
    fscore_area(&rank_and_truncate(&net, opts.max_edges), &gold)
}

/// PR points as TSV followed by `area=<value>`.
pub fn report_tsv(r: &EvalReport) -> String {
    let mut out = String::from("rank\trecall\tprecision\n");
    for p in &r.points {
        let _ = writeln!(out, "{}\t{:.6}\t{:.6}", p.rank, p.recall, p.precision);
    }
    let _ = writeln!(out, "# inferred_edges={} gold_edges={}", r.inferred_edges, r.gold_edges);
    let _ = writeln!(out, "area={:.4}", r.area);
    out
}
