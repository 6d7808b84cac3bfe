//! Evaluation metrics: accuracy, macro-averaged precision/recall/F1, the
//! confusion matrix behind them, and RMSE for the horizon regressor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K x K` counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.count(i, i)).sum()
    }
}

/// Classification metrics in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

/// Computes the report over parallel prediction/label sequences.
///
/// A class whose precision or recall denominator is zero contributes 0 to
/// the macro averages rather than being excluded.
pub fn classification_report(preds: &[usize], labels: &[usize], classes: usize) -> Result<ClassificationReport> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::EmptyDataset);
    }
    let mut confusion = ConfusionMatrix::new(classes);
    for (&p, &l) in preds.iter().zip(labels) {
        assert!(p < classes && l < classes, "class index out of range");
        confusion.record(l, p);
    }
    let total = confusion.total() as f64;
    let accuracy = confusion.trace() as f64 / total;
    let (mut psum, mut rsum, mut fsum) = (0.0, 0.0, 0.0);
    for k in 0..classes {
        let tp = confusion.count(k, k) as f64;
        let predicted_k: f64 = (0..classes).map(|t| confusion.count(t, k) as f64).sum();
        let actual_k: f64 = (0..classes).map(|p| confusion.count(k, p) as f64).sum();
        let precision = if predicted_k > 0.0 { tp / predicted_k } else { 0.0 };
        let recall = if actual_k > 0.0 { tp / actual_k } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        psum += precision;
        rsum += recall;
        fsum += f1;
    }
    let k = classes as f64;
    Ok(ClassificationReport {
        accuracy,
        macro_precision: psum / k,
        macro_recall: rsum / k,
        macro_f1: fsum / k,
        confusion,
    })
}

/// Root mean squared error over parallel sequences.
pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::EmptyDataset);
    }
    let mse: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        let r = classification_report(&labels, &labels, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.confusion.trace(), 6);
    }

    #[test]
    fn all_predictions_one_class_on_balanced_labels() {
        // hand-enumerated confusion matrix: 2 of each class, all predicted 0
        let labels = vec![0, 0, 1, 1, 2, 2];
        let preds = vec![0; 6];
        let r = classification_report(&preds, &labels, 3).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_precision - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn total_miss_two_classes() {
        let r = classification_report(&[1, 0], &[0, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn accuracy_equals_trace_over_total() {
        let preds = vec![0, 1, 2, 2, 1, 0, 0, 2];
        let labels = vec![0, 1, 1, 2, 1, 2, 0, 0];
        let r = classification_report(&preds, &labels, 3).unwrap();
        assert_eq!(
            r.accuracy,
            r.confusion.trace() as f64 / r.confusion.total() as f64
        );
    }

    #[test]
    fn permutation_invariance() {
        let preds = vec![0, 1, 2, 2, 1, 0];
        let labels = vec![0, 1, 1, 2, 1, 2];
        let a = classification_report(&preds, &labels, 3).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let preds_p: Vec<usize> = perm.iter().map(|&i| preds[i]).collect();
        let labels_p: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let b = classification_report(&preds_p, &labels_p, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn macro_f1_is_one_iff_diagonal_with_all_classes() {
        let r = classification_report(&[0, 0, 0], &[0, 0, 0], 2).unwrap();
        // class 1 never appears: macro F1 must be below 1
        assert!(r.macro_f1 < 1.0);
        assert!(r.macro_f1 >= 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(classification_report(&[], &[], 3).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let shifted = rmse(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((shifted - 3.0).abs() < 1e-12);
        let mixed = rmse(&[1.0, 2.0], &[3.0, 6.0]).unwrap();
        assert!((mixed - 10.0f64.sqrt()).abs() < 1e-12);
    }
}
