//! `TNGM` checkpoints.
//!
//! Layout, little-endian: magic `TNGM`, u32 version, nine u64 config fields
//! (layers, h_emb, heads, d_k, r, u, d_llm, d_expand, d_max), four u64 shape
//! fields (genes, paths, edge types, max path length), u64 graph and path
//! fingerprints, u32 parameter count, then per parameter: u32 name length,
//! UTF-8 name, u32 rank, u64 dims, f64 values.

use std::path::Path as FsPath;

use sha2::{Digest, Sha256};

use super::TrainError;
use crate::graph::{GeneGraph, PathList};
use crate::model::{Model, ModelConfig, ModelShape, Params};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"TNGM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn truncate_digest(h: Sha256) -> u64 {
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Hash of gene ids, edges and the edge-type count.
pub fn graph_fingerprint(graph: &GeneGraph) -> u64 {
    let mut h = Sha256::new();
    h.update((graph.n() as u64).to_le_bytes());
    for g in graph.genes() {
        h.update(g.id.as_bytes());
        h.update([0u8]);
    }
    h.update((graph.num_edge_types() as u64).to_le_bytes());
    for e in graph.edges() {
        for x in [e.src, e.dst, e.edge_type] {
            h.update((x as u64).to_le_bytes());
        }
    }
    truncate_digest(h)
}

/// Hash of path ids and node sequences, in order.
pub fn path_fingerprint(paths: &PathList) -> u64 {
    let mut h = Sha256::new();
    h.update((paths.len() as u64).to_le_bytes());
    for p in &paths.paths {
        h.update(p.id.as_bytes());
        h.update([0u8]);
        h.update((p.nodes.len() as u64).to_le_bytes());
        for &v in &p.nodes {
            h.update((v as u64).to_le_bytes());
        }
    }
    truncate_digest(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub graph_fingerprint: u64,
    pub path_fingerprint: u64,
}

impl Checkpoint {
    pub fn new(model: Model, graph: &GeneGraph, paths: &PathList) -> Self {
        Self {
            model,
            graph_fingerprint: graph_fingerprint(graph),
            path_fingerprint: path_fingerprint(paths),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let c = &self.model.config;
        let s = &self.model.shape;
        for x in [c.layers, c.h_emb, c.heads, c.d_k, c.r, c.u, c.d_llm, c.d_expand, c.d_max] {
            out.extend_from_slice(&(x as u64).to_le_bytes());
        }
        for x in [s.n_genes, s.n_paths, s.n_edge_types, s.max_path_len] {
            out.extend_from_slice(&(x as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.graph_fingerprint.to_le_bytes());
        out.extend_from_slice(&self.path_fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TrainError::Format("bad magic, not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let mut f = [0usize; 9];
        for x in &mut f {
            *x = r.size()?;
        }
        let config = ModelConfig {
            layers: f[0],
            h_emb: f[1],
            heads: f[2],
            d_k: f[3],
            r: f[4],
            u: f[5],
            d_llm: f[6],
            d_expand: f[7],
            d_max: f[8],
        };
        let shape = ModelShape {
            n_genes: r.size()?,
            n_paths: r.size()?,
            n_edge_types: r.size()?,
            max_path_len: r.size()?,
        };
        let graph_fingerprint = r.u64()?;
        let path_fingerprint = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Params::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| TrainError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.size()).collect::<Result<Vec<_>, _>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| TrainError::Format(format!("{name}: shape overflow")))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| TrainError::Format("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| TrainError::Format(format!("{name}: {e}")))?;
            params.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        // the parameter layout must be what this architecture expects
        let reference = Model::init(config.clone(), shape, 0)
            .map_err(|e| TrainError::Format(format!("stored configuration: {e}")))?;
        let layout = |p: &Params| -> Vec<(String, Vec<usize>)> {
            p.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect()
        };
        if layout(&reference.params) != layout(&params) {
            return Err(TrainError::Format("parameter layout does not match the stored configuration".into()));
        }
        if let Some((name, _)) = params.iter().find(|(_, t)| !t.is_finite()) {
            return Err(TrainError::Format(format!("non-finite values in {name}")));
        }
        Ok(Self {
            model: Model { config, shape, params },
            graph_fingerprint,
            path_fingerprint,
        })
    }

    /// Refuses a checkpoint trained on a different graph or path list.
    pub fn verify(&self, graph: &GeneGraph, paths: &PathList) -> Result<(), TrainError> {
        let (g, p) = (graph_fingerprint(graph), path_fingerprint(paths));
        if g != self.graph_fingerprint {
            return Err(TrainError::Fingerprint(format!(
                "graph fingerprint {g:016x} does not match checkpoint {:016x}",
                self.graph_fingerprint
            )));
        }
        if p != self.path_fingerprint {
            return Err(TrainError::Fingerprint(format!(
                "path fingerprint {p:016x} does not match checkpoint {:016x}",
                self.path_fingerprint
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TrainError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn size(&mut self) -> Result<usize, TrainError> {
        usize::try_from(self.u64()?).map_err(|_| TrainError::Format("size exceeds platform".into()))
    }
}

pub fn save_checkpoint(
    model: &Model,
    graph: &GeneGraph,
    paths: &PathList,
    file: &FsPath,
) -> Result<(), TrainError> {
    let bytes = Checkpoint::new(model.clone(), graph, paths).to_bytes();
    std::fs::write(file, bytes).map_err(|e| TrainError::Io(format!("{}: {e}", file.display())))
}

pub fn read_checkpoint(file: &FsPath) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(file).map_err(|e| TrainError::Io(format!("{}: {e}", file.display())))?;
    Checkpoint::from_bytes(&bytes)
}

/// Reads a checkpoint and checks it against the inputs it will run on.
pub fn load_checkpoint(file: &FsPath, graph: &GeneGraph, paths: &PathList) -> Result<Model, TrainError> {
    let ck = read_checkpoint(file)?;
    ck.verify(graph, paths)?;
    Ok(ck.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synthesize_dataset, Path, SynthConfig};

    fn setup() -> (Model, GeneGraph, PathList) {
        let s = synthesize_dataset(&SynthConfig { n_cells: 10, ..Default::default() }).unwrap();
        let cfg = ModelConfig { d_llm: 6, h_emb: 8, heads: 2, d_k: 4, r: 2, u: 4, d_expand: 4, ..Default::default() };
        let model = Model::init(cfg, ModelShape::of(&s.graph, &s.paths), 3).unwrap();
        (model, s.graph, s.paths)
    }

    #[test]
    fn round_trip_is_lossless() {
        let (model, graph, paths) = setup();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("m.tngm");
        save_checkpoint(&model, &graph, &paths, &f).unwrap();
        assert_eq!(load_checkpoint(&f, &graph, &paths).unwrap(), model);
    }

    #[test]
    fn refuses_other_path_list() {
        let (model, graph, paths) = setup();
        let bytes = Checkpoint::new(model, &graph, &paths).to_bytes();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut other = paths.paths.clone();
        other.swap(0, 1);
        let other = PathList::new(other.into_iter().map(|p| Path { id: p.id, nodes: p.nodes }).collect());
        assert!(matches!(ck.verify(&graph, &other), Err(TrainError::Fingerprint(_))));
        assert!(ck.verify(&graph, &paths).is_ok());
    }

    #[test]
    fn rejects_corruption() {
        let (model, graph, paths) = setup();
        let bytes = Checkpoint::new(model, &graph, &paths).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(TrainError::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(TrainError::Format(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn fingerprints_are_stable_and_sensitive() {
        let (_, graph, paths) = setup();
        assert_eq!(graph_fingerprint(&graph), graph_fingerprint(&graph.clone()));
        let mut p2 = paths.paths.clone();
        p2[0].nodes.pop();
        assert_ne!(path_fingerprint(&paths), path_fingerprint(&PathList::new(p2)));
    }
}
