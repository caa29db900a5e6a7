use std::fmt;

use super::TrainError;

/// Decision threshold on the positive-class probability.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Rank AUC, or the reason it is undefined.
#[derive(Clone, Debug, PartialEq)]
pub enum Auc {
    Value(f64),
    Undefined(String),
}

impl Auc {
    pub fn value(&self) -> Option<f64> {
        match self {
            Auc::Value(v) => Some(*v),
            Auc::Undefined(_) => None,
        }
    }
}

impl fmt::Display for Auc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auc::Value(v) => write!(f, "{v:.6}"),
            Auc::Undefined(_) => f.write_str("NA"),
        }
    }
}

/// Ratios with a zero denominator are reported as 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc: Auc,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    pub fn from_confusion(c: Confusion, auc: Auc) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            confusion: c,
            accuracy: ratio(c.tp + c.tn, c.total()),
            recall,
            precision,
            specificity: ratio(c.tn, c.tn + c.fp),
            f1,
            auc,
        }
    }

    pub const HEADER: &'static str = "accuracy\trecall\tprecision\tspecificity\tf1\tauc";

    pub fn tsv_fields(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.accuracy, self.recall, self.precision, self.specificity, self.f1, self.auc
        )
    }
}

pub fn confusion(scores: &[f64], labels: &[u8]) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= THRESHOLD, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Mann-Whitney AUC with tied scores given their average rank.
pub fn auc_midrank(scores: &[f64], labels: &[u8]) -> Auc {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Auc::Undefined(format!("single-class split ({pos} positive, {neg} negative)"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Auc::Value(u / (pos * neg) as f64)
}

/// All metrics from positive-class probabilities.
pub fn compute_metrics(scores: &[f64], labels: &[u8]) -> Result<Metrics, TrainError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(TrainError::Data(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(TrainError::Data(format!("non-finite score {s}")));
    }
    Ok(Metrics::from_confusion(confusion(scores, labels), auc_midrank(scores, labels)))
}
