use super::gene_encoder::{self, Expander, GeneLayer};
use super::graph_encoder::{self, PathImportance, Prediction};
use super::path_encoder::{self, PathLayer};
use super::{Model, ModelError, Params, Structure};
use crate::graph::Cell;
use crate::numerics::{Gradients, Tape, Var};

/// Every parameter registered on a tape under its own name.
pub struct Bound<'p> {
    params: &'p Params,
    vars: Vec<Var>,
}

impl<'p> Bound<'p> {
    pub fn bind(tape: &mut Tape, params: &'p Params) -> Result<Self, ModelError> {
        let vars = params
            .iter()
            .map(|(name, t)| tape.param(name, t.clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self { params, vars })
    }

    pub fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::Structure(format!("missing parameter {name}")))
    }
}

/// Per-layer path-encoder state that does not depend on the cell.
#[derive(Clone, Debug)]
pub struct PathShared {
    pub layer: PathLayer,
    pub encodings: Var,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
}

/// Cell-independent intermediate values, computed once per tape.
#[derive(Clone, Debug)]
pub struct Shared {
    pub expander: Expander,
    pub centrality: Var,
    pub bias: Vec<Var>,
    pub gene_layers: Vec<GeneLayer>,
    pub path_layers: Vec<PathShared>,
    pub importance: Var,
    pub wp: Var,
}

#[derive(Clone, Debug)]
pub struct CellOutput {
    /// `1 × 2` class logits.
    pub logits: Var,
    /// `1 × h_emb` pooled embedding `G`.
    pub graph_embedding: Var,
    /// `g^l` for each layer.
    pub layer_embeddings: Vec<Var>,
    /// `P^l` for each layer.
    pub path_embeddings: Vec<Var>,
}

/// Forward and backward passes of a model over fixed inputs.
pub struct Forward<'a> {
    model: &'a Model,
    structure: &'a Structure,
}

impl<'a> Forward<'a> {
    pub fn new(model: &'a Model, structure: &'a Structure) -> Result<Self, ModelError> {
        model.config.validate()?;
        structure.check_shape(&model.shape)?;
        if structure.gene_text.cols() != model.config.d_llm {
            return Err(ModelError::Structure(format!(
                "sentence embeddings have width {}, model expects {}",
                structure.gene_text.cols(),
                model.config.d_llm
            )));
        }
        Ok(Self { model, structure })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Bound<'a>, ModelError> {
        Bound::bind(tape, &self.model.params)
    }

    pub fn shared(&self, tape: &mut Tape, b: &Bound) -> Result<Shared, ModelError> {
        let cfg = &self.model.config;
        let s = self.structure;
        let expander = Expander::bind(tape, b, &s.gene_text, cfg)?;
        let centrality = gene_encoder::centrality_table(tape, b, s)?;
        let bias = gene_encoder::build_attention_bias(tape, b, s, cfg)?;
        let gene_layers = (0..cfg.layers)
            .map(|l| GeneLayer::bind(b, l))
            .collect::<Result<_, _>>()?;
        let text = tape.constant(s.path_text.clone())?;
        let mut path_layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let layer = PathLayer::bind(b, l)?;
            let encodings = path_encoder::path_encodings(tape, &s.scatter, &layer)?;
            let (keys, values) = path_encoder::cross_projections(tape, text, &layer, cfg)?;
            path_layers.push(PathShared {
                layer,
                encodings,
                keys,
                values,
            });
        }
        let importance = graph_encoder::path_importance(tape, b.var("graph.m")?)?;
        Ok(Shared {
            expander,
            centrality,
            bias,
            gene_layers,
            path_layers,
            importance,
            wp: b.var("graph.wp")?,
        })
    }

    pub fn cell(&self, tape: &mut Tape, sh: &Shared, expression: &[f64]) -> Result<CellOutput, ModelError> {
        let cfg = &self.model.config;
        let x = gene_encoder::expand_input(tape, &sh.expander, expression)?;
        let mut h = gene_encoder::centrality_encode(tape, x, sh.centrality)?;
        let mut layer_embeddings = Vec::with_capacity(cfg.layers);
        let mut path_embeddings = Vec::with_capacity(cfg.layers);
        for (gl, ps) in sh.gene_layers.iter().zip(&sh.path_layers) {
            h = gene_encoder::gene_layer_forward(tape, h, &sh.bias, gl, cfg)?.h;
            let p = path_encoder::path_layer_forward(
                tape,
                h,
                &self.structure.scatter,
                &ps.layer,
                ps.encodings,
                &ps.keys,
                &ps.values,
                cfg,
            )?;
            layer_embeddings.push(graph_encoder::layer_graph_embedding(tape, sh.importance, p)?);
            path_embeddings.push(p);
        }
        let g = graph_encoder::jumping_knowledge(tape, &layer_embeddings)?;
        let logits = graph_encoder::classify(tape, g, sh.wp)?;
        Ok(CellOutput {
            logits,
            graph_embedding: g,
            layer_embeddings,
            path_embeddings,
        })
    }

    fn batch_loss_var<'c>(
        &self,
        tape: &mut Tape,
        cells: impl IntoIterator<Item = &'c Cell>,
    ) -> Result<Var, ModelError> {
        let b = self.bind(tape)?;
        let sh = self.shared(tape, &b)?;
        let mut total: Option<Var> = None;
        let mut count = 0usize;
        for c in cells {
            let out = self.cell(tape, &sh, &c.expression)?;
            let ce = tape.cross_entropy(out.logits, c.label as usize)?;
            total = Some(match total {
                Some(t) => tape.add(t, ce)?,
                None => ce,
            });
            count += 1;
        }
        let total = total.ok_or_else(|| ModelError::Config("empty batch".into()))?;
        Ok(tape.scale(total, 1.0 / count as f64)?)
    }

    /// Mean cross-entropy over `cells`.
    pub fn loss<'c>(&self, cells: impl IntoIterator<Item = &'c Cell>) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let loss = self.batch_loss_var(&mut tape, cells)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Mean cross-entropy and its gradient for every parameter, in
    /// parameter order.
    pub fn loss_and_grad<'c>(
        &self,
        cells: impl IntoIterator<Item = &'c Cell>,
    ) -> Result<(f64, Gradients), ModelError> {
        let mut tape = Tape::new();
        let loss = self.batch_loss_var(&mut tape, cells)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], grads))
    }

    pub fn predict(&self, expression: &[f64]) -> Result<Prediction, ModelError> {
        Ok(self.predict_all(std::iter::once(expression))?.remove(0))
    }

    /// Predictions for many cells, sharing the cell-independent work.
    pub fn predict_all<'c>(
        &self,
        expressions: impl IntoIterator<Item = &'c [f64]>,
    ) -> Result<Vec<Prediction>, ModelError> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let sh = self.shared(&mut tape, &b)?;
        let mark = tape.len();
        let mut out = Vec::new();
        for e in expressions {
            let o = self.cell(&mut tape, &sh, e)?;
            out.push(Prediction::from_logits(
                tape.value(o.logits).data(),
                tape.value(o.graph_embedding).data().to_vec(),
            )?);
            tape.truncate(mark);
        }
        Ok(out)
    }

    pub fn importance(&self) -> Result<PathImportance, ModelError> {
        let m = self
            .model
            .params
            .get("graph.m")
            .ok_or_else(|| ModelError::Structure("missing parameter graph.m".into()))?;
        Ok(PathImportance::from_logits(m.data()))
    }
}
