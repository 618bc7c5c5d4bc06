//! Confusion-matrix based classification metrics.
//!
//! Per-class precision, recall and F1 are zero whenever their denominator
//! is zero. Weighted averages weight class `j` by its support `n_j / N`;
//! macro averages divide by the class count `K`. The primary macro F1 is
//! the harmonic mean of macro precision and macro recall; the mean of the
//! per-class F1 scores is reported alongside it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×K` counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<Prf>,
    pub supports: Vec<u64>,
    pub weighted: Prf,
    pub macro_avg: Prf,
    /// Mean of the per-class F1 scores.
    pub macro_f1_mean: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::dim(
                "confusion",
                &[classes, classes],
                &[counts.len()],
            ));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, j: usize) -> u64 {
        self.get(j, j)
    }

    /// Row sum `n_j`.
    pub fn support(&self, j: usize) -> u64 {
        (0..self.classes).map(|p| self.get(j, p)).sum()
    }

    pub fn predicted_count(&self, j: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, j)).sum()
    }

    pub fn false_positives(&self, j: usize) -> u64 {
        self.predicted_count(j) - self.true_positives(j)
    }

    pub fn false_negatives(&self, j: usize) -> u64 {
        self.support(j) - self.true_positives(j)
    }

    fn require_samples(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::data("metrics of an empty confusion matrix")),
            n => Ok(n),
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        let n = self.require_samples()?;
        let trace: u64 = (0..self.classes).map(|j| self.get(j, j)).sum();
        Ok(trace as f64 / n as f64)
    }

    pub fn class_metrics(&self, j: usize) -> Prf {
        let tp = self.true_positives(j) as f64;
        let precision = ratio(tp, self.predicted_count(j) as f64);
        let recall = ratio(tp, self.support(j) as f64);
        Prf {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }

    pub fn weighted(&self) -> Result<Prf> {
        let n = self.require_samples()? as f64;
        let mut acc = Prf {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
        for j in 0..self.classes {
            let w = self.support(j) as f64;
            let m = self.class_metrics(j);
            acc.precision += m.precision * w;
            acc.recall += m.recall * w;
            acc.f1 += m.f1 * w;
        }
        acc.precision /= n;
        acc.recall /= n;
        acc.f1 /= n;
        Ok(acc)
    }

    /// Macro precision and recall with F1 as their harmonic mean.
    pub fn macro_avg(&self) -> Result<Prf> {
        self.require_samples()?;
        let k = self.classes as f64;
        let (p, r) = (0..self.classes)
            .map(|j| self.class_metrics(j))
            .fold((0.0, 0.0), |(p, r), m| (p + m.precision, r + m.recall));
        let (p, r) = (p / k, r / k);
        Ok(Prf {
            precision: p,
            recall: r,
            f1: harmonic(p, r),
        })
    }

    pub fn macro_f1_mean(&self) -> Result<f64> {
        self.require_samples()?;
        let sum: f64 = (0..self.classes).map(|j| self.class_metrics(j).f1).sum();
        Ok(sum / self.classes as f64)
    }

    pub fn report(&self) -> Result<MetricsReport> {
        Ok(MetricsReport {
            accuracy: self.accuracy()?,
            per_class: (0..self.classes).map(|j| self.class_metrics(j)).collect(),
            supports: (0..self.classes).map(|j| self.support(j)).collect(),
            weighted: self.weighted()?,
            macro_avg: self.macro_avg()?,
            macro_f1_mean: self.macro_f1_mean()?,
        })
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Tallies `(truth, predicted)` pairs into a `classes × classes` matrix.
pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::data(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::data(format!(
                "label pair ({t}, {p}) out of range for {classes} classes"
            )));
        }
        cm.record(t, p);
    }
    Ok(cm)
}

pub fn report(truth: &[usize], predicted: &[usize], classes: usize) -> Result<MetricsReport> {
    confusion(truth, predicted, classes)?.report()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> ConfusionMatrix {
        confusion(&[0, 0, 0, 1], &[0, 0, 1, 1], 2).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let id = confusion(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(
            id,
            ConfusionMatrix::from_counts(2, vec![1, 0, 0, 1]).unwrap()
        );
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        assert_eq!(
            fixture(),
            ConfusionMatrix::from_counts(2, vec![2, 1, 0, 1]).unwrap()
        );
        assert!(confusion(&[0], &[], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            confusion(&[0, 1], &[0, 1], 2).unwrap().accuracy().unwrap(),
            1.0
        );
        assert_eq!(
            confusion(&[0, 1], &[1, 0], 2).unwrap().accuracy().unwrap(),
            0.0
        );
        assert_eq!(fixture().accuracy().unwrap(), 0.75);
        assert!(ConfusionMatrix::new(2).accuracy().is_err());
    }

    #[test]
    fn weighted_fixture() {
        let cm = fixture();
        let c0 = cm.class_metrics(0);
        let c1 = cm.class_metrics(1);
        assert_eq!((c0.precision, c1.precision), (1.0, 0.5));
        assert!((c0.recall - 2.0 / 3.0).abs() < 1e-15 && c1.recall == 1.0);
        assert!((c0.f1 - 0.8).abs() < 1e-15 && (c1.f1 - 2.0 / 3.0).abs() < 1e-15);
        let w = cm.weighted().unwrap();
        assert!((w.f1 - (0.8 * 3.0 + 2.0 / 3.0) / 4.0).abs() < 1e-15);
        assert!((w.f1 - 0.76667).abs() < 1e-5);
        assert!((w.recall - cm.accuracy().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn macro_fixture() {
        let m = fixture().macro_avg().unwrap();
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.f1 - 0.78947).abs() < 1e-5);
        let mean = fixture().macro_f1_mean().unwrap();
        assert!((mean - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate() {
        let r = report(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        for v in [
            r.accuracy,
            r.weighted.precision,
            r.weighted.recall,
            r.weighted.f1,
            r.macro_avg.f1,
        ] {
            assert_eq!(v, 1.0);
        }
        let single = report(&[0, 0], &[0, 0], 1).unwrap();
        assert_eq!(single.macro_avg.f1, 1.0);
        assert_eq!(single.weighted.f1, 1.0);
    }

    #[test]
    fn zero_denominators_score_zero() {
        // Class 1 is never predicted and never occurs.
        let cm = confusion(&[0, 0], &[0, 0], 2).unwrap();
        let c1 = cm.class_metrics(1);
        assert_eq!((c1.precision, c1.recall, c1.f1), (0.0, 0.0, 0.0));
        let all_wrong = confusion(&[0, 1], &[1, 0], 2).unwrap();
        assert_eq!(all_wrong.macro_avg().unwrap().f1, 0.0);
    }
}
