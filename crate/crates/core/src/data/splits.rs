use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Range<usize>,
    pub validation: Range<usize>,
}

/// Expanding-window folds over `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

/// Walk-forward cross-validation plan.
///
/// The index range is cut into `k + 1` contiguous blocks of `n / (k + 1)`
/// samples (the remainder goes to the last block). Fold `i` trains on blocks
/// `0..=i` and validates on block `i + 1`.
pub fn walk_forward_splits(n: usize, k: usize) -> Result<FoldPlan, DataError> {
    if k < 2 {
        return Err(DataError::Invalid(format!("walk-forward needs k >= 2, got {k}")));
    }
    if n < k + 1 {
        return Err(DataError::Invalid(format!("{k} folds need at least {} samples, got {n}", k + 1)));
    }
    let block = n / (k + 1);
    let folds = (0..k)
        .map(|i| {
            let split = (i + 1) * block;
            let end = if i + 1 == k { n } else { split + block };
            Fold {
                train: 0..split,
                validation: split..end,
            }
        })
        .collect();
    Ok(FoldPlan { k, folds })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous train/validation/test ranges in temporal order.
pub fn train_val_test_split(n: usize, fractions: [f64; 3]) -> Result<SplitRanges, DataError> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let a = (n as f64 * fractions[0]).round() as usize;
    let b = ((n as f64 * (fractions[0] + fractions[1])).round() as usize).min(n);
    let out = SplitRanges {
        train: 0..a,
        validation: a..b,
        test: b..n,
    };
    for (name, r) in [("train", &out.train), ("validation", &out.validation), ("test", &out.test)] {
        if r.is_empty() {
            return Err(DataError::Invalid(format!("{name} split is empty for n = {n}, fractions {fractions:?}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_samples_three_folds() {
        let plan = walk_forward_splits(12, 3).unwrap();
        let got: Vec<_> = plan.folds.iter().map(|f| (f.train.clone(), f.validation.clone())).collect();
        assert_eq!(got, vec![(0..3, 3..6), (0..6, 6..9), (0..9, 9..12)]);
    }

    #[test]
    fn too_many_folds() {
        assert!(walk_forward_splits(3, 3).is_err());
        assert!(walk_forward_splits(100, 1).is_err());
    }

    #[test]
    fn fixed_fraction_splits() {
        let s = train_val_test_split(100, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!((s.train, s.validation, s.test), (0..80, 80..90, 90..100));
        let s = train_val_test_split(10, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!((s.train, s.validation, s.test), (0..6, 6..8, 8..10));
        assert!(train_val_test_split(3, [0.8, 0.1, 0.1]).is_err());
        assert!(train_val_test_split(100, [0.8, 0.1, 0.2]).is_err());
    }
}
