use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::EpochRecord;
use crate::error::{Error, Result};
use crate::rng;

/// Indices into the epoch list, each partition sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified random split inside every (subject, label) group: `test` takes
/// `round(n * (1 - train_frac))` epochs, then `val` takes
/// `round(remaining * val_frac)` of what is left, and the rest trains.
pub fn split_within_subject(epochs: &[EpochRecord], train_frac: f64, val_frac: f64, seed: u64) -> Result<Split> {
    if !(0.0 < train_frac && train_frac <= 1.0) || !(0.0..1.0).contains(&val_frac) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < train_frac <= 1 and 0 <= val_frac < 1, got {train_frac} and {val_frac}"
        )));
    }
    let mut groups: BTreeMap<(&str, u16), Vec<usize>> = BTreeMap::new();
    for (i, e) in epochs.iter().enumerate() {
        groups.entry((e.subject_id.as_str(), e.label)).or_default().push(i);
    }
    let mut split = Split::default();
    for ((subject, label), mut idx) in groups {
        let n = idx.len();
        let n_test = (n as f64 * (1.0 - train_frac)).round() as usize;
        let n_val = ((n - n_test) as f64 * val_frac).round() as usize;
        let n_train = n.saturating_sub(n_test + n_val);
        let starved = n_train == 0 || (train_frac < 1.0 && n_test == 0) || (val_frac > 0.0 && n_val == 0);
        if starved {
            return Err(Error::Data(format!(
                "subject {subject} class {label} has {n} epochs, too few for the requested split"
            )));
        }
        idx.shuffle(&mut rng::stream(seed, &format!("split/{subject}/{label}")));
        split.test.extend_from_slice(&idx[..n_test]);
        split.val.extend_from_slice(&idx[n_test..n_test + n_val]);
        split.train.extend_from_slice(&idx[n_test + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
