//! Splits, optimization, evaluation metrics and checkpoints.

mod adam;
mod checkpoint;
mod metrics;
mod split;

pub use adam::Adam;
pub use checkpoint::{
    graph_fingerprint, load_checkpoint, path_fingerprint, read_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use metrics::{auc_midrank, compute_metrics, confusion, Auc, Confusion, Metrics, THRESHOLD};
pub use split::{split_dataset, Split, DEFAULT_SPLIT};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Cell, ExpressionDataset, GeneGraph, PathList};
use crate::model::{Forward, Model, ModelConfig, ModelError, ModelShape, Structure};
use crate::numerics::NumericsError;
use crate::text::EmbeddingStore;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint mismatch: {0}")]
    Fingerprint(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TrainError {
    /// Whether the failure came from arithmetic rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. } | TrainError::Model(ModelError::Numerics(NumericsError::NonFinite(_)))
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub split_ratios: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            split_ratios: DEFAULT_SPLIT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        split::check_ratios(self.split_ratios)?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_auc: Auc,
}

pub fn history_tsv(history: &[HistoryRow]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_accuracy\tval_auc\n");
    for h in history {
        let _ = writeln!(out, "{}\t{:.9}\t{:.6}\t{}", h.epoch, h.train_loss, h.val_accuracy, h.val_auc);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy (the
    /// latest on ties), or the initial ones when no epoch ran.
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub best_epoch: Option<usize>,
}

/// Trains on `train` and selects by accuracy on `validation`.
pub fn train_cells(
    cfg: &TrainConfig,
    structure: &Structure,
    train: &[&Cell],
    validation: &[&Cell],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(TrainError::Data("training and validation sets must be nonempty".into()));
    }
    let mut model = Model::init(cfg.model.clone(), structure.shape, cfg.seed)?;
    Forward::new(&model, structure)?;
    let mut adam = Adam::new(cfg.learning_rate, model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let fwd = Forward::new(&model, structure)?;
            let result = fwd.loss_and_grad(chunk.iter().map(|&i| train[i]));
            let (loss, grads) = match result {
                Ok(v) => v,
                Err(ModelError::Numerics(NumericsError::NonFinite(d))) => {
                    return Err(TrainError::NonFinite { epoch, step, detail: d })
                }
                Err(e) => return Err(e.into()),
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            adam.step(model.params.tensors_mut(), &grads.grads);
        }
        let (metrics, _) = evaluate(&model, structure, validation)?;
        log::debug!("epoch {epoch}: loss {:.5} val acc {:.4}", loss_sum / train.len() as f64, metrics.accuracy);
        history.push(HistoryRow {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy: metrics.accuracy,
            val_auc: metrics.auc.clone(),
        });
        if best.as_ref().is_none_or(|b| metrics.accuracy >= b.0) {
            best = Some((metrics.accuracy, epoch, model.clone()));
        }
    }
    Ok(match best {
        Some((_, epoch, m)) => TrainOutcome {
            model: m,
            history,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            model,
            history,
            best_epoch: None,
        },
    })
}

/// Result of a full run: selected model, split used and test metrics.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub split: Split,
    pub test_metrics: Metrics,
    pub test_predictions: Vec<CellPrediction>,
}

/// Builds the structure, splits the dataset, trains and scores the test set.
pub fn train(
    cfg: &TrainConfig,
    graph: &GeneGraph,
    paths: &PathList,
    dataset: &ExpressionDataset,
    store: &EmbeddingStore,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let structure = Structure::new(graph, paths, store, &cfg.model)?;
    if structure.shape != ModelShape::of(graph, paths) {
        return Err(TrainError::Data("structure shape mismatch".into()));
    }
    let split = split_dataset(dataset.len(), cfg.split_ratios, cfg.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset.cells[i]).collect::<Vec<_>>();
    let outcome = train_cells(cfg, &structure, &pick(&split.train), &pick(&split.validation))?;
    let (test_metrics, test_predictions) = evaluate(&outcome.model, &structure, &pick(&split.test))?;
    Ok(TrainRun {
        outcome,
        split,
        test_metrics,
        test_predictions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellPrediction {
    pub cell_id: String,
    pub label: u8,
    pub prob_positive: f64,
}

impl CellPrediction {
    pub fn predicted(&self) -> u8 {
        u8::from(self.prob_positive >= THRESHOLD)
    }
}

pub fn predictions_tsv(preds: &[CellPrediction]) -> String {
    let mut out = String::from("cell_id\tlabel\tprob_positive\tpredicted\n");
    for p in preds {
        let _ = writeln!(out, "{}\t{}\t{:.12}\t{}", p.cell_id, p.label, p.prob_positive, p.predicted());
    }
    out
}

pub fn metrics_from_predictions(preds: &[CellPrediction]) -> Result<Metrics, TrainError> {
    let scores: Vec<f64> = preds.iter().map(|p| p.prob_positive).collect();
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    compute_metrics(&scores, &labels)
}

/// Metrics and per-cell probabilities for `cells`.
pub fn evaluate(
    model: &Model,
    structure: &Structure,
    cells: &[&Cell],
) -> Result<(Metrics, Vec<CellPrediction>), TrainError> {
    if cells.is_empty() {
        return Err(TrainError::Data("cannot evaluate an empty split".into()));
    }
    let fwd = Forward::new(model, structure)?;
    let preds = fwd.predict_all(cells.iter().map(|c| c.expression.as_slice()))?;
    let preds: Vec<CellPrediction> = cells
        .iter()
        .zip(preds)
        .map(|(c, p)| CellPrediction {
            cell_id: c.id.clone(),
            label: c.label,
            prob_positive: p.positive(),
        })
        .collect();
    Ok((metrics_from_predictions(&preds)?, preds))
}
