use crate::graph::{Gene, GeneGraph};

use super::EmbedError;

/// The gene's curated description, or `Gene <symbol> (<gene_id>).`
pub fn describe_gene(gene: &Gene) -> String {
    if let Some(d) = gene.description.as_deref().filter(|d| !d.trim().is_empty()) {
        return d.to_string();
    }
    let symbol = if gene.symbol.trim().is_empty() { &gene.id } else { &gene.symbol };
    format!("Gene {} ({}).", symbol, gene.id)
}

fn role(position: usize, len: usize) -> &'static str {
    if position == 0 {
        "receptor gene"
    } else if position + 1 == len {
        "target gene"
    } else {
        "signaling gene"
    }
}

/// Renders a path as one `connect to` clause per consecutive pair. Roles are
/// positional: first node receptor, last node target, the rest signaling.
pub fn describe_path(nodes: &[usize], graph: &GeneGraph) -> Result<String, EmbedError> {
    if nodes.len() < 2 {
        return Err(EmbedError::InvalidInput(format!(
            "path of length {} cannot be described",
            nodes.len()
        )));
    }
    let symbol = |v: usize| -> Result<&str, EmbedError> {
        let g = graph
            .genes()
            .get(v)
            .ok_or_else(|| EmbedError::InvalidInput(format!("node {v} not in graph")))?;
        Ok(if g.symbol.is_empty() { &g.id } else { &g.symbol })
    };
    let len = nodes.len();
    let mut clauses = Vec::with_capacity(len - 1);
    for i in 0..len - 1 {
        clauses.push(format!(
            "{} {} connect to {} {}",
            role(i, len),
            symbol(nodes[i])?,
            role(i + 1, len),
            symbol(nodes[i + 1])?
        ));
    }
    Ok(format!("In this pathway: {}.", clauses.join(", ")))
}
