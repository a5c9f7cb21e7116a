//! Seeded hold-out splits and k-fold partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::RulClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shuffles `0..n` with `seed` and takes the first `round(test_frac * n)`
/// positions as the test set. Both index lists come back in shuffled order.
pub fn train_test_split(n: usize, test_frac: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidFraction(test_frac));
    }
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    let n_test = ((test_frac * n as f64).round() as usize).clamp(1, n - 1);
    let train = idx.split_off(n_test);
    Ok(SplitIndices {
        train,
        test: idx,
        seed,
    })
}

/// Partitions `0..n` into `k` test folds.
///
/// Plain folds are contiguous chunks of the (optionally shuffled) index list,
/// the first `n % k` one element larger. Stratified folds group indices by
/// class, shuffle within each class, and deal the concatenated list out
/// round-robin, so every fold holds each class to within one sample of its
/// global share. Test and train lists are sorted ascending.
pub fn kfold(
    n: usize,
    k: usize,
    shuffle: bool,
    seed: u64,
    stratify: Option<&[RulClass]>,
) -> Result<Vec<SplitIndices>> {
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut rng = rng(seed);
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];

    match stratify {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            if shuffle {
                idx.shuffle(&mut rng);
            }
            let mut start = 0;
            for (f, fold) in tests.iter_mut().enumerate() {
                let size = n / k + usize::from(f < n % k);
                fold.extend_from_slice(&idx[start..start + size]);
                start += size;
            }
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::LengthMismatch(labels.len(), n));
            }
            let mut dealt = Vec::with_capacity(n);
            for class in RulClass::ALL {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                if shuffle {
                    members.shuffle(&mut rng);
                }
                dealt.extend(members);
            }
            for (pos, i) in dealt.into_iter().enumerate() {
                tests[pos % k].push(i);
            }
        }
    }

    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; n];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..n).filter(|&i| !in_test[i]).collect();
            SplitIndices { train, test, seed }
        })
        .collect())
}
