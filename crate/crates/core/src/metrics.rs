//! Average class-wise accuracy (mean of per-class recalls).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Per-class recall over the given number of classes. Classes with zero truths
/// get `None`.
pub fn per_class_recall(
    predictions: &[usize],
    truths: &[usize],
    n_classes: usize,
) -> Result<Vec<Option<f64>>> {
    if predictions.len() != truths.len() {
        return Err(invalid("predictions and truths differ in length"));
    }
    let mut correct = vec![0usize; n_classes];
    let mut total = vec![0usize; n_classes];
    for (&p, &t) in predictions.iter().zip(truths.iter()) {
        if t >= n_classes {
            return Err(invalid("truth label outside class range"));
        }
        total[t] += 1;
        if p == t {
            correct[t] += 1;
        }
    }
    Ok((0..n_classes)
        .map(|c| {
            if total[c] == 0 {
                None
            } else {
                Some(correct[c] as f64 / total[c] as f64)
            }
        })
        .collect())
}

/// Mean of per-class recalls over `class_subset`. Classes with zero truths in
/// the subset are excluded from the mean; an entirely empty subset is an error.
pub fn aca(predictions: &[usize], truths: &[usize], class_subset: &[usize]) -> Result<f64> {
    let n_classes = class_subset.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let recalls = per_class_recall(predictions, truths, n_classes)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for &c in class_subset {
        if let Some(r) = recalls[c] {
            sum += r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("empty evaluation subset"));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_hand_count() {
        // recalls: class 0 -> 1/2, class 1 -> 2/2
        let truths = [0, 0, 1, 1];
        let preds = [0, 1, 1, 1];
        let v = aca(&preds, &truths, &[0, 1]).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let truths = [0, 1, 2, 2];
        let v = aca(&truths, &truths, &[0, 1, 2]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn empty_subset_is_an_error() {
        let truths = [0, 0];
        let preds = [0, 0];
        // class 1 has zero truths, so the subset {1} is empty after exclusion
        assert!(aca(&preds, &truths, &[1]).is_err());
    }

    #[test]
    fn duplicating_a_class_leaves_aca_unchanged() {
        let truths = [0, 1, 1];
        let preds = [0, 1, 0];
        let base = aca(&preds, &truths, &[0, 1]).unwrap();
        let truths2 = [0, 0, 0, 1, 1];
        let preds2 = [0, 0, 0, 1, 0];
        let dup = aca(&preds2, &truths2, &[0, 1]).unwrap();
        assert!((base - dup).abs() < 1e-15);
    }
}
