//! Dataset-global path importance, per-layer pooling, jumping-knowledge max
//! and the binary classification head.

use super::ModelError;
use crate::numerics::{sigmoid, softmax_rows, Tape, Tensor, Var};

/// `I = sigmoid(M)`, one value per path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathImportance {
    pub values: Vec<f64>,
}

impl PathImportance {
    pub fn from_logits(m: &[f64]) -> Self {
        Self {
            values: m.iter().map(|&x| sigmoid(x)).collect(),
        }
    }
}

/// Class probabilities `[p(label 0), p(label 1)]` and the pooled embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: [f64; 2],
    pub graph_embedding: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: &[f64], graph_embedding: Vec<f64>) -> Result<Self, ModelError> {
        if logits.len() != 2 {
            return Err(ModelError::Structure(format!("{} logits for a binary head", logits.len())));
        }
        let p = softmax_rows(&Tensor::row_vector(logits.to_vec()))?;
        Ok(Self {
            probs: [p.data()[0], p.data()[1]],
            graph_embedding,
        })
    }

    pub fn positive(&self) -> f64 {
        self.probs[1]
    }
}

/// `m` is the `1 × p` logit row.
pub fn path_importance(tape: &mut Tape, m: Var) -> Result<Var, ModelError> {
    Ok(tape.sigmoid(m)?)
}

/// `g = I·P`, a `1 × h_emb` row.
pub fn layer_graph_embedding(tape: &mut Tape, importance: Var, p: Var) -> Result<Var, ModelError> {
    Ok(tape.matmul(importance, p)?)
}

/// Element-wise maximum over layers.
pub fn jumping_knowledge(tape: &mut Tape, layers: &[Var]) -> Result<Var, ModelError> {
    if layers.is_empty() {
        return Err(ModelError::Config("jumping knowledge needs at least one layer".into()));
    }
    Ok(tape.max_of(layers)?)
}

/// Logits `G·W_p`; apply a softmax (or [`Prediction::from_logits`]) for
/// probabilities.
pub fn classify(tape: &mut Tape, g: Var, wp: Var) -> Result<Var, ModelError> {
    Ok(tape.matmul(g, wp)?)
}
