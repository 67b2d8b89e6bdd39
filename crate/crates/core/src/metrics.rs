//! ROC-AUC and threshold metrics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

fn check_inputs(scores: &[f64], labels: &[usize]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve: the Mann–Whitney statistic with ties counted
/// half, computed from average ranks.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (doubled) ranks of positives; doubling keeps tie averages integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j averaged: (i+1+j)/2, doubled: i+1+j
        let avg2 = (i + 1 + j) as u128;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += avg2 * pos_in_tie;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    // U = R_pos - p(p+1)/2; all terms doubled.
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// TP / (TP + FN); undefined without positives.
    pub sensitivity: Option<f64>,
    /// TP / (TP + FP); undefined when nothing is called positive.
    pub ppv: Option<f64>,
}

/// Confusion counts with `score >= threshold` called positive.
pub fn threshold_metrics(scores: &[f64], labels: &[usize], threshold: f64) -> Result<ThresholdMetrics> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(ThresholdMetrics {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        sensitivity: ratio(tp, fn_),
        ppv: ratio(tp, fp),
    })
}

/// O(n²) pair enumeration; kept as the reference for [`roc_auc`].
pub fn pairwise_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels".into()));
    }
    let mut credit = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                credit += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    Ok(credit / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn threshold_examples() {
        let m = threshold_metrics(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!((m.sensitivity, m.ppv), (Some(1.0), Some(1.0)));
        let m = threshold_metrics(&[0.1, 0.2, 0.3], &[1, 0, 1], 0.5).unwrap();
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.ppv, None);
        // TP=3, FP=1, FN=1, TN=1
        let m = threshold_metrics(&[0.9, 0.8, 0.7, 0.6, 0.2, 0.1], &[1, 1, 1, 0, 1, 0], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 1, 1, 1));
        assert_eq!(m.sensitivity, Some(0.75));
        assert_eq!(m.ppv, Some(0.75));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..8).prop_map(|v| v as f64 / 8.0), n),
                prop::collection::vec(0usize..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_pairwise_enumeration((scores, labels) in instance()) {
            let pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = pairwise_auc(&scores, &labels).unwrap();
            prop_assert!((fast - slow).abs() <= 1e-12);
        }

        #[test]
        fn invariant_under_increasing_transform((scores, labels) in instance()) {
            let pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + s).collect();
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&t, &labels).unwrap());
        }

        #[test]
        fn complement_sums_to_one(n in 2usize..50, seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
            scores.shuffle(&mut rng);
            let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
            let flipped: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant((scores, labels) in instance(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let s2: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&s2, &l2).unwrap());
            prop_assert_eq!(
                threshold_metrics(&scores, &labels, 0.5).unwrap(),
                threshold_metrics(&s2, &l2, 0.5).unwrap()
            );
        }
    }
}
