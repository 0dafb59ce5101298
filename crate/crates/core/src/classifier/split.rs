use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::grade::DamageGrade;
use crate::rng::stream_rng;

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

/// Stratified random split. Returns ascending row indices `(train, test)`.
///
/// Each grade contributes `round(ratio · n_grade)` rows to the training set.
/// Every grade must be present.
pub fn split_train_test(
    labels: &[DamageGrade],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Parse(format!("train ratio {ratio} outside [0, 1]")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for g in DamageGrade::ALL {
        let mut rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == g)
            .map(|(i, _)| i)
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyClass(g.name().to_string()));
        }
        rows.shuffle(&mut stream_rng(seed, &[0x5911, g.index() as u64]));
        let n_train = ((ratio * rows.len() as f64).round() as usize).min(rows.len());
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
