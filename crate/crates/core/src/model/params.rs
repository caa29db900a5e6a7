use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelShape};
use crate::numerics::Tensor;

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Same names and shapes, values replaced.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Self {
        debug_assert_eq!(tensors.len(), self.tensors.len());
        Self {
            names: self.names.clone(),
            tensors,
            index: self.index.clone(),
        }
    }

    pub fn total_size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

struct Init {
    rng: ChaCha8Rng,
    params: Params,
}

impl Init {
    fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.gen_range(-a..a)).collect();
        self.params
            .insert(name, Tensor::new(vec![fan_in, fan_out], data).expect("sized"));
    }

    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        self.params
            .insert(name, Tensor::new(vec![rows, cols], data).expect("sized"));
    }

    fn filled(&mut self, name: String, rows: usize, cols: usize, v: f64) {
        self.params.insert(name, Tensor::filled(&[rows, cols], v));
    }
}

pub(super) fn init_params(cfg: &ModelConfig, shape: &ModelShape, seed: u64) -> Params {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: Params::new(),
    };
    let h = cfg.h_emb;
    let hk = cfg.heads * cfg.d_k;

    init.xavier("expander.expr_w".into(), 1, cfg.d_expand);
    init.filled("expander.expr_b".into(), 1, cfg.d_expand, 0.0);
    init.xavier("expander.fuse_w".into(), cfg.fusion_input_width(), h);
    init.filled("expander.fuse_b".into(), 1, h, 0.0);
    init.normal("centrality.z_in".into(), cfg.d_max + 1, h, 0.1);
    init.normal("centrality.z_out".into(), cfg.d_max + 1, h, 0.1);
    init.normal("spatial.node_id".into(), shape.n_genes, h, 0.1);
    init.filled("spatial.scale".into(), 1, cfg.heads, 1.0);
    init.filled("edge.scalar".into(), shape.attention_edge_types(), cfg.heads, 0.0);

    for l in 0..cfg.layers {
        init.xavier(format!("gene.{l}.wq"), h, hk);
        init.xavier(format!("gene.{l}.wk"), h, hk);
        init.xavier(format!("gene.{l}.wv"), h, hk);
        init.xavier(format!("gene.{l}.wo"), hk, h);
        init.xavier(format!("gene.{l}.ffn_w1"), h, h);
        init.filled(format!("gene.{l}.ffn_b1"), 1, h, 0.0);
        init.xavier(format!("gene.{l}.ffn_w2"), h, h);
        init.filled(format!("gene.{l}.ffn_b2"), 1, h, 0.0);
    }
    for l in 0..cfg.layers {
        init.xavier(format!("path.{l}.wu"), h, cfg.u);
        init.filled(format!("path.{l}.bu"), 1, cfg.u, 0.0);
        init.normal(format!("path.{l}.pos"), shape.max_path_len.max(1), cfg.u, 0.1);
        init.normal(format!("path.{l}.pair"), shape.pair_edge_types(), cfg.u, 0.1);
        init.xavier(format!("path.{l}.ws1"), cfg.u, cfg.r);
        init.filled(format!("path.{l}.bs1"), 1, cfg.r, 0.0);
        init.xavier(format!("path.{l}.ws2"), cfg.r, cfg.r);
        init.filled(format!("path.{l}.bs2"), 1, cfg.r, 0.0);
        init.xavier(format!("path.{l}.cq"), h, hk);
        init.xavier(format!("path.{l}.ck"), cfg.d_llm, hk);
        init.xavier(format!("path.{l}.cv"), cfg.d_llm, hk);
        init.xavier(format!("path.{l}.co"), hk, h);
    }
    init.filled("graph.m".into(), 1, shape.n_paths, 0.0);
    init.xavier("graph.wp".into(), h, 2);
    init.params
}
