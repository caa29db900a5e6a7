use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;

/// Disjoint index sets covering a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.1, 0.2];

pub(crate) fn check_ratios(ratios: [f64; 3]) -> Result<(), TrainError> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    Ok(())
}

/// Validation and test sizes are `floor(n·ratio)` (at least one cell each),
/// train takes the remainder. The permutation is deterministic in `seed`;
/// indices within each part are ascending.
pub fn split_dataset(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split, TrainError> {
    check_ratios(ratios)?;
    if n < 3 {
        return Err(TrainError::Data(format!("cannot split {n} cells three ways")));
    }
    let part = |r: f64| (((n as f64) * r + 1e-9).floor() as usize).max(1);
    let n_val = part(ratios[1]);
    let n_test = part(ratios[2]);
    if n_val + n_test >= n {
        return Err(TrainError::Data(format!("{n} cells leave no training data")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let n_train = n - n_val - n_test;
    let take = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        train: take(0..n_train),
        validation: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}
