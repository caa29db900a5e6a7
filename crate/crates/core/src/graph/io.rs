//! Tab-separated file formats for graphs, paths and expression data.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use super::{Cell, Edge, ExpressionDataset, Gene, GeneGraph, GraphError, Path, PathList};

fn read(path: &FsPath) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &FsPath, contents: &str) -> Result<(), GraphError> {
    let mut f = fs::File::create(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(contents.as_bytes()).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(file: &FsPath, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Yields `(1-based line number, line)` for non-blank lines.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn expect_header(file: &FsPath, text: &str, first: &str) -> Result<usize, GraphError> {
    match lines(text).next() {
        Some((no, l)) if l.split('\t').next() == Some(first) => Ok(no),
        Some((no, _)) => Err(parse_err(file, no, format!("expected header starting with `{first}`"))),
        None => Err(parse_err(file, 1, "empty file")),
    }
}

fn clean_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn load_gene_graph(nodes_file: &FsPath, edges_file: &FsPath) -> Result<GeneGraph, GraphError> {
    let text = read(nodes_file)?;
    let header = expect_header(nodes_file, &text, "gene_id")?;
    let mut genes = Vec::new();
    let mut seen = HashMap::new();
    for (no, line) in lines(&text).filter(|(no, _)| *no != header) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(parse_err(nodes_file, no, format!("expected 2-3 columns, found {}", cols.len())));
        }
        let id = cols[0].trim();
        if id.is_empty() {
            return Err(parse_err(nodes_file, no, "empty gene_id"));
        }
        if seen.insert(id.to_string(), no).is_some() {
            return Err(parse_err(nodes_file, no, format!("duplicate gene id `{id}`")));
        }
        let description = cols.get(2).map(|d| d.trim()).filter(|d| !d.is_empty());
        genes.push(Gene {
            id: id.to_string(),
            symbol: cols[1].trim().to_string(),
            description: description.map(str::to_string),
        });
    }

    let text = read(edges_file)?;
    let header = expect_header(edges_file, &text, "src_id")?;
    let index: HashMap<&str, usize> = genes.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect();
    let mut edges = Vec::new();
    let mut pairs = HashMap::new();
    for (no, line) in lines(&text).filter(|(no, _)| *no != header) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(parse_err(edges_file, no, format!("expected 3 columns, found {}", cols.len())));
        }
        let src = *index
            .get(cols[0])
            .ok_or_else(|| parse_err(edges_file, no, format!("unknown gene `{}`", cols[0])))?;
        let dst = *index
            .get(cols[1])
            .ok_or_else(|| parse_err(edges_file, no, format!("unknown gene `{}`", cols[1])))?;
        let edge_type: usize = cols[2]
            .parse()
            .map_err(|_| parse_err(edges_file, no, format!("bad edge type `{}`", cols[2])))?;
        if pairs.insert((src, dst), no).is_some() {
            return Err(parse_err(edges_file, no, "duplicate edge"));
        }
        edges.push(Edge { src, dst, edge_type });
    }
    GeneGraph::new(genes, edges, None)
}

pub fn save_gene_graph(graph: &GeneGraph, nodes_file: &FsPath, edges_file: &FsPath) -> Result<(), GraphError> {
    let mut s = String::from("gene_id\tsymbol\tdescription\n");
    for g in graph.genes() {
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            g.id,
            clean_field(&g.symbol),
            g.description.as_deref().map(clean_field).unwrap_or_default()
        ));
    }
    write(nodes_file, &s)?;
    let mut s = String::from("src_id\tdst_id\tedge_type\n");
    for e in graph.edges() {
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            graph.genes()[e.src].id,
            graph.genes()[e.dst].id,
            e.edge_type
        ));
    }
    write(edges_file, &s)
}

/// Reads `path_id\tgene,gene,...` lines. Lines starting with `#` are skipped.
pub fn load_paths(file: &FsPath, graph: &GeneGraph) -> Result<PathList, GraphError> {
    let text = read(file)?;
    let mut paths = Vec::new();
    let mut ids = HashMap::new();
    for (no, line) in lines(&text) {
        if line.starts_with('#') {
            continue;
        }
        let (id, genes) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(file, no, "expected `path_id<TAB>genes`"))?;
        let id = id.trim();
        if ids.insert(id.to_string(), no).is_some() {
            return Err(parse_err(file, no, format!("duplicate path id `{id}`")));
        }
        let nodes = genes
            .split(',')
            .map(|g| {
                let g = g.trim();
                graph
                    .gene_index(g)
                    .ok_or_else(|| parse_err(file, no, format!("unknown gene `{g}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        paths.push(Path {
            id: id.to_string(),
            nodes,
        });
    }
    Ok(PathList::new(paths))
}

pub fn save_paths(paths: &PathList, graph: &GeneGraph, file: &FsPath) -> Result<(), GraphError> {
    let mut s = String::new();
    for p in &paths.paths {
        let genes: Vec<&str> = p.nodes.iter().map(|&v| graph.genes()[v].id.as_str()).collect();
        s.push_str(&format!("{}\t{}\n", p.id, genes.join(",")));
    }
    write(file, &s)
}

/// Gene columns of an expression matrix, in file order.
pub fn read_expression_header(expression_file: &FsPath) -> Result<Vec<String>, GraphError> {
    let text = read(expression_file)?;
    expect_header(expression_file, &text, "cell_id")?;
    let (_, header) = lines(&text).next().expect("header checked");
    Ok(header.split('\t').skip(1).map(|s| s.trim().to_string()).collect())
}

/// Joins the expression matrix with the label table. Graph genes that the
/// matrix lacks are filled with 0.0.
pub fn load_dataset(
    expression_file: &FsPath,
    labels_file: &FsPath,
    graph: &GeneGraph,
) -> Result<ExpressionDataset, GraphError> {
    let text = read(labels_file)?;
    let header = expect_header(labels_file, &text, "cell_id")?;
    let mut labels: HashMap<String, (u8, Option<String>, Option<f64>)> = HashMap::new();
    for (no, line) in lines(&text).filter(|(no, _)| *no != header) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < 2 || cols.len() > 4 {
            return Err(parse_err(labels_file, no, format!("expected 2-4 columns, found {}", cols.len())));
        }
        let label = match cols[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(labels_file, no, format!("label must be 0 or 1, got `{other}`"))),
        };
        let population = cols.get(2).filter(|p| !p.is_empty()).map(|p| p.to_string());
        let time = match cols.get(3).filter(|t| !t.is_empty()) {
            Some(t) => Some(
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| parse_err(labels_file, no, format!("bad time `{t}`")))?,
            ),
            None => None,
        };
        if labels.insert(cols[0].to_string(), (label, population, time)).is_some() {
            return Err(parse_err(labels_file, no, format!("duplicate cell `{}`", cols[0])));
        }
    }

    let text = read(expression_file)?;
    let header_no = expect_header(expression_file, &text, "cell_id")?;
    let (_, header) = lines(&text).next().expect("header checked");
    let columns: Vec<Option<usize>> = header
        .split('\t')
        .skip(1)
        .map(|g| graph.gene_index(g.trim()))
        .collect();
    let mut covered = vec![false; graph.n()];
    for c in columns.iter().flatten() {
        covered[*c] = true;
    }
    let missing: Vec<&str> = covered
        .iter()
        .enumerate()
        .filter(|(_, &c)| !c)
        .map(|(i, _)| graph.genes()[i].id.as_str())
        .collect();
    if !missing.is_empty() {
        log::warn!(
            "{} graph genes absent from {}; using 0.0: {}",
            missing.len(),
            expression_file.display(),
            missing.join(",")
        );
    }

    let mut cells = Vec::new();
    for (no, line) in lines(&text).filter(|(no, _)| *no != header_no) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != columns.len() + 1 {
            return Err(parse_err(
                expression_file,
                no,
                format!("expected {} columns, found {}", columns.len() + 1, cols.len()),
            ));
        }
        let id = cols[0].trim();
        let mut expression = vec![0.0; graph.n()];
        for (value, col) in cols[1..].iter().zip(&columns) {
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| parse_err(expression_file, no, format!("bad value `{value}`")))?;
            if !v.is_finite() {
                return Err(parse_err(expression_file, no, "non-finite expression value"));
            }
            if let Some(c) = col {
                expression[*c] = v;
            }
        }
        let (label, population, time) = labels
            .remove(id)
            .ok_or_else(|| parse_err(expression_file, no, format!("cell `{id}` has no label")))?;
        cells.push(Cell {
            id: id.to_string(),
            expression,
            label,
            population,
            time,
        });
    }
    ExpressionDataset::new(cells, graph.n())
}

pub fn save_dataset(
    dataset: &ExpressionDataset,
    graph: &GeneGraph,
    expression_file: &FsPath,
    labels_file: &FsPath,
) -> Result<(), GraphError> {
    let mut s = String::from("cell_id");
    for g in graph.genes() {
        s.push('\t');
        s.push_str(&g.id);
    }
    s.push('\n');
    for c in &dataset.cells {
        s.push_str(&c.id);
        for v in &c.expression {
            s.push('\t');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    write(expression_file, &s)?;

    let mut s = String::from("cell_id\tlabel\tpopulation\ttime\n");
    for c in &dataset.cells {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            c.id,
            c.label,
            c.population.as_deref().unwrap_or(""),
            c.time.map(|t| t.to_string()).unwrap_or_default()
        ));
    }
    write(labels_file, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fixture(dir: &FsPath, nodes: &str, edges: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let n = dir.join("nodes.tsv");
        let e = dir.join("edges.tsv");
        fs::write(&n, nodes).unwrap();
        fs::write(&e, edges).unwrap();
        (n, e)
    }

    const NODES: &str = "gene_id\tsymbol\tdescription\nG1\tA\tfirst gene\nG2\tB\t\nG3\tC\n";

    #[test]
    fn three_node_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e) = fixture(dir.path(), NODES, "src_id\tdst_id\tedge_type\nG1\tG2\t0\nG2\tG3\t1\n");
        let g = load_gene_graph(&n, &e).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.adjacency(), vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]]);
        assert_eq!(g.genes()[0].description.as_deref(), Some("first gene"));
        assert_eq!(g.genes()[1].description, None);
        assert_eq!(g.num_edge_types(), 2);
    }

    #[test]
    fn unknown_endpoint_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e) = fixture(dir.path(), NODES, "src_id\tdst_id\tedge_type\nG1\tG2\t0\nG1\tG9\t0\n");
        match load_gene_graph(&n, &e) {
            Err(GraphError::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("G9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_gene_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e) = fixture(dir.path(), "gene_id\tsymbol\tdescription\nG1\tA\t\nG1\tB\t\n", "src_id\tdst_id\tedge_type\n");
        assert!(matches!(load_gene_graph(&n, &e), Err(GraphError::Parse { line: 3, .. })));
    }

    #[test]
    fn empty_edges_file() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e) = fixture(dir.path(), NODES, "src_id\tdst_id\tedge_type\n");
        let g = load_gene_graph(&n, &e).unwrap();
        assert_eq!((g.n(), g.edges().len()), (3, 0));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e) = fixture(dir.path(), NODES, "src_id\tdst_id\tedge_type\nG1\tG2\tx\n");
        assert!(matches!(load_gene_graph(&n, &e), Err(GraphError::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_expression_column_fills_zero() {
        let dir = tempfile::tempdir().unwrap();
        let (n, e) = fixture(dir.path(), NODES, "src_id\tdst_id\tedge_type\n");
        let g = load_gene_graph(&n, &e).unwrap();
        let x = dir.path().join("x.tsv");
        let l = dir.path().join("l.tsv");
        fs::write(&x, "cell_id\tG3\tEXTRA\tG1\nc1\t1.5\t9\t-2\n").unwrap();
        fs::write(&l, "cell_id\tlabel\tpopulation\ttime\nc1\t1\t\t\n").unwrap();
        let d = load_dataset(&x, &l, &g).unwrap();
        assert_eq!(d.cells[0].expression, vec![-2.0, 0.0, 1.5]);
        assert_eq!(d.cells[0].population, None);
        assert_eq!(read_expression_header(&x).unwrap(), vec!["G3", "EXTRA", "G1"]);

        fs::write(&l, "cell_id\tlabel\tpopulation\ttime\nc1\t2\t\t\n").unwrap();
        assert!(load_dataset(&x, &l, &g).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = crate::graph::SynthConfig {
            n_genes: 12,
            n_paths: 4,
            n_cells: 30,
            ..Default::default()
        };
        let out = crate::graph::synthesize_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = |f: &str| dir.path().join(f);
        save_gene_graph(&out.graph, &p("n.tsv"), &p("e.tsv")).unwrap();
        save_paths(&out.paths, &out.graph, &p("p.tsv")).unwrap();
        save_dataset(&out.dataset, &out.graph, &p("x.tsv"), &p("l.tsv")).unwrap();

        let g = load_gene_graph(&p("n.tsv"), &p("e.tsv")).unwrap();
        let paths = load_paths(&p("p.tsv"), &g).unwrap();
        let d = load_dataset(&p("x.tsv"), &p("l.tsv"), &g).unwrap();
        assert_eq!(g, out.graph);
        assert_eq!(paths, out.paths);
        assert_eq!(d, out.dataset);

        save_gene_graph(&g, &p("n2.tsv"), &p("e2.tsv")).unwrap();
        assert_eq!(fs::read(p("n.tsv")).unwrap(), fs::read(p("n2.tsv")).unwrap());
    }
}
