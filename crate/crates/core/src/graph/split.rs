use rand::seq::SliceRandom;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Disjoint train/validation/test node sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    /// Restricts the split to the nodes of a client and maps ids to local
    /// ids through `global_to_local`.
    pub fn restrict(&self, global_to_local: impl Fn(usize) -> Option<usize>) -> DataSplit {
        let map = |ids: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = ids.iter().filter_map(|&u| global_to_local(u)).collect();
            out.sort_unstable();
            out
        };
        DataSplit {
            train: map(&self.train),
            val: map(&self.val),
            test: map(&self.test),
        }
    }
}

/// Label-stratified split: within each class, `round(frac * n_c)` nodes go
/// to train and validation, the rest to test, each part keeping at least
/// one node.
pub fn make_split(g: &Graph, train_frac: f64, val_frac: f64, seed: u64) -> Result<DataSplit> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive with train + val < 1, got {train_frac} + {val_frac}"
        )));
    }
    let mut split = DataSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..g.num_classes() {
        let mut members: Vec<usize> = (0..g.num_nodes()).filter(|&u| g.labels()[u] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} nodes; stratified split needs at least 3",
                members.len()
            )));
        }
        members.shuffle(&mut stream(seed, &[tag::SPLIT, c as u64]));
        let m = members.len();
        let n_train = ((train_frac * m as f64).round() as usize).clamp(1, m - 2);
        let n_val = ((val_frac * m as f64).round() as usize).clamp(1, m - n_train - 1);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
