// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProbeDataset;
use crate::error::{Error, Result};

/// Disjoint, exhaustive train/eval partition of `0..N`.
///
/// Indices keep the order of the permutation that produced them, so a prefix
/// of `train` is itself a uniformly random subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Random partition with `round(train_fraction * n)` training examples.
pub fn make_split(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} examples")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} leaves one side of a {n}-example split empty"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let eval = perm.split_off(n_train);
    Ok(Split { train: perm, eval })
}

/// Copy of `ds` whose activations (every layer) are row-permuted by `perm`:
/// output row `i` is input row `perm[i]`. References, labels and every other
/// payload keep their order.
pub fn permute_rows(ds: &ProbeDataset, perm: &[usize]) -> Result<ProbeDataset> {
    let n = ds.num_examples();
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: perm.len(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("not a permutation"));
        }
    }
    let mut out = ds.clone();
    for acts in out.activations.values_mut() {
        *acts = acts.gather_rows(perm);
    }
    out.refresh_checksums();
    Ok(out)
}

/// The shuffled-embedding baseline dataset: activations permuted by one
/// uniform random permutation shared by all layers.
pub fn permute_for_baseline(ds: &ProbeDataset, seed: u64) -> ProbeDataset {
    let mut perm: Vec<usize> = (0..ds.num_examples()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    permute_rows(ds, &perm).expect("shuffled identity is a permutation")
}
