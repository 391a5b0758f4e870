use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded k-fold partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }
}

fn shuffled(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Shuffles `0..n` and deals it into `k` folds whose sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 || k > n {
        return Err(Error::Contract(format!(
            "fold count {k} out of range for {n} rows (need 2 <= k <= n)"
        )));
    }
    let idx = shuffled(n, seed, 0);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(SplitPlan { seed, folds })
}

/// Seeded `(train, validation)` split of `0..n`, validation getting
/// `round(n * fraction)` rows. Both lists ascending.
pub fn train_validation_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Contract(format!(
            "validation fraction {fraction} outside [0, 1)"
        )));
    }
    let idx = shuffled(n, seed, 1);
    let n_val = (n as f64 * fraction).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Mini-batches over `0..n` for one epoch: a fresh permutation per
/// `(seed, epoch)` pair, the last batch possibly short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let bs = batch_size.max(1);
    // stream 0 and 1 are used by the fold and holdout splitters
    shuffled(n, seed, epoch + 2)
        .chunks(bs)
        .map(<[usize]>::to_vec)
        .collect()
}
