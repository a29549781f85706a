//! Zero-shot prototype scoring (with per-class projection routing) and
//! few-shot support sampling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, CoreError, Result};
use crate::mat::Mat;
use crate::mathx::softmax_inplace;
use crate::prototypes::{PrototypeBank, Space};
use crate::rng::{mix_seed, SeedRng};

/// Softmax-over-cosine scores and argmax predictions for `targets`.
///
/// `projections` maps each projection space to the unit-norm image embeddings
/// in that space; every target class must resolve to a bank prototype whose
/// space is present. Mixed routing computes each class's cosine in its own
/// space before the joint softmax.
pub fn zero_shot_predict(
    projections: &BTreeMap<Space, Mat>,
    bank: &PrototypeBank,
    targets: &[String],
) -> Result<(Mat, Vec<usize>)> {
    if targets.is_empty() {
        return Err(invalid("no target classes"));
    }
    let n = projections
        .values()
        .next()
        .ok_or_else(|| invalid("no projections supplied"))?
        .rows;
    for m in projections.values() {
        if m.rows != n {
            return Err(invalid("projection batches differ in length"));
        }
    }
    let mut scores = Mat::zeros(n, targets.len());
    for (c, name) in targets.iter().enumerate() {
        let entry = bank
            .get(name)
            .ok_or_else(|| CoreError::NotFound(format!("prototype for class '{name}'")))?;
        let proj = projections.get(&entry.space).ok_or_else(|| {
            CoreError::NotFound(format!(
                "projection space {:?} needed by class '{name}'",
                entry.space
            ))
        })?;
        if proj.cols != entry.vector.len() {
            return Err(invalid(format!("dimension mismatch for class '{name}'")));
        }
        for i in 0..n {
            let cos: f64 = proj
                .row(i)
                .iter()
                .zip(entry.vector.iter())
                .map(|(a, b)| a * b)
                .sum();
            *scores.at_mut(i, c) = cos;
        }
    }
    for i in 0..n {
        softmax_inplace(scores.row_mut(i));
    }
    let predictions = argmax_rows(&scores);
    Ok((scores, predictions))
}

/// Row-wise argmax (first maximum wins ties).
pub fn argmax_rows(scores: &Mat) -> Vec<usize> {
    (0..scores.rows)
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Seed-deterministic support sampling: exactly `k` indices per class in
/// `class_subset`, drawn without replacement from `labels`.
pub fn sample_few_shot(
    labels: &[usize],
    k: usize,
    class_subset: &[usize],
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    let mut deficient: Vec<usize> = Vec::new();
    let mut support = Vec::with_capacity(k * class_subset.len());
    for (ci, &class) in class_subset.iter().enumerate() {
        let pool: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if pool.len() < k {
            deficient.push(class);
            continue;
        }
        let mut rng = SeedRng::new(mix_seed(seed, 0x7368_6f74 ^ ci as u64));
        let picks = rng.choose_k(pool.len(), k);
        for p in picks {
            support.push(pool[p]);
        }
    }
    if !deficient.is_empty() {
        return Err(invalid(format!(
            "insufficient samples for classes {deficient:?} (need {k} each)"
        )));
    }
    Ok(support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototypes::{bank_from_weights, Space};

    fn basis_bank(d: usize) -> (PrototypeBank, Vec<String>) {
        let mut w = Mat::zeros(d, d);
        for i in 0..d {
            *w.at_mut(i, i) = 1.0;
        }
        let names: Vec<String> = (0..d).map(|i| format!("c{i}")).collect();
        (bank_from_weights(&w, &names, Space::Shared).unwrap(), names)
    }

    #[test]
    fn orthonormal_prototypes_basis_image() {
        let (bank, names) = basis_bank(3);
        let mut projections = BTreeMap::new();
        projections.insert(
            Space::Shared,
            Mat::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap(),
        );
        let (scores, preds) = zero_shot_predict(&projections, &bank, &names).unwrap();
        assert_eq!(preds, vec![0]);
        let expected = crate::mathx::softmax(&[1.0, 0.0, 0.0]);
        for (s, e) in scores.row(0).iter().zip(expected.iter()) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class_is_a_named_error() {
        let (bank, _) = basis_bank(2);
        let mut projections = BTreeMap::new();
        projections.insert(Space::Shared, Mat::zeros(1, 2));
        let err = zero_shot_predict(&projections, &bank, &[String::from("ghost")]).unwrap_err();
        assert!(format!("{err}").contains("ghost"));
    }

    #[test]
    fn few_shot_counts_and_determinism() {
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let s1 = sample_few_shot(&labels, 16, &[0, 1, 2, 3, 4], 9).unwrap();
        let s2 = sample_few_shot(&labels, 16, &[0, 1, 2, 3, 4], 9).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 80);
        let mut sorted = s1.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 80, "support drawn without replacement");
    }

    #[test]
    fn few_shot_insufficient_lists_classes() {
        let labels = vec![0, 0, 1];
        let err = sample_few_shot(&labels, 2, &[0, 1], 0).unwrap_err();
        assert!(format!("{err}").contains('1'));
    }
}
