//! Classification metrics over probability scores.

use crate::error::{Error, Result};

/// ROC area via the Mann-Whitney rank statistic. Tied scores are given
/// their average rank, so every positive/negative tie contributes one half.
pub fn evaluate_auc(scores: &[f32], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("labels", scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "AUC undefined for a single class ({n_pos} positive, {n_neg} negative)"
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Data(format!("score {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares their mean.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum += mean_rank;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Percentage of clips where `(p >= threshold)` matches the label.
pub fn accuracy_at_threshold(scores: &[f32], labels: &[u8], threshold: f32) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| (p >= threshold) == (l == 1))
        .count();
    Ok(100.0 * correct as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        let s = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(evaluate_auc(&s, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(evaluate_auc(&s, &[1, 1, 0, 0]).unwrap(), 0.0);
        assert_eq!(evaluate_auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(evaluate_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn threshold_boundary_is_positive() {
        assert_eq!(accuracy_at_threshold(&[0.5], &[1], 0.5).unwrap(), 100.0);
        assert_eq!(accuracy_at_threshold(&[0.5], &[0], 0.5).unwrap(), 0.0);
        assert_eq!(
            accuracy_at_threshold(&[0.9, 0.1, 0.7, 0.2], &[1, 0, 0, 0], 0.5).unwrap(),
            75.0
        );
    }
}
