//! Thresholded real/fake metrics. Fake is the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{MaflError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&l| l > 1) {
        Some(i) => Err(MaflError::Label(format!(
            "label {} at position {i} is not 0 or 1",
            labels[i]
        ))),
        None => Ok(()),
    }
}

/// Counts with `score >= threshold` predicted fake.
pub fn confusion_counts(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if scores.len() != labels.len() {
        return Err(MaflError::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MaflError::Input("NaN score".into()));
    }
    let preds: Vec<u8> = scores.iter().map(|&s| (s >= threshold) as u8).collect();
    confusion_from_predictions(&preds, labels)
}

pub fn confusion_from_predictions(preds: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(MaflError::Input(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    check_labels(preds)?;
    let mut c = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio was 0/0 and reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassMetrics> {
    let total = c.total();
    if total == 0 {
        return Err(MaflError::Input("no samples to evaluate".into()));
    }
    let mut degenerate = false;
    let acc = (c.tp + c.tn) as f64 / total as f64;
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    Ok(ClassMetrics {
        acc,
        precision,
        recall,
        f1,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn count_examples() {
        let c = confusion_counts(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 0, fn_: 0 });
        let half = confusion_counts(&[0.5], &[0], 0.5).unwrap();
        assert_eq!(half.fp, 1);
        let c = confusion_from_predictions(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 1, fn_: 1 });
        assert!(matches!(confusion_counts(&[0.1], &[], 0.5), Err(MaflError::Input(_))));
    }

    #[test]
    fn metric_examples() {
        let m = classification_metrics(&ConfusionCounts { tp: 1, tn: 1, fp: 0, fn_: 0 }).unwrap();
        assert_eq!((m.acc, m.f1), (1.0, 1.0));
        let m = classification_metrics(&ConfusionCounts { tp: 1, tn: 1, fp: 1, fn_: 1 }).unwrap();
        assert_eq!((m.acc, m.precision, m.recall, m.f1), (0.5, 0.5, 0.5, 0.5));
        assert!(!m.degenerate);
        let m = classification_metrics(&ConfusionCounts { tp: 0, tn: 3, fp: 0, fn_: 2 }).unwrap();
        assert_eq!((m.precision, m.f1), (0.0, 0.0));
        assert!(m.degenerate);
        assert!(classification_metrics(&ConfusionCounts::default()).is_err());
    }

    proptest! {
        #[test]
        fn identities_hold_on_integer_counts(tp in 0u64..50, tn in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let c = ConfusionCounts { tp, tn, fp, fn_ };
            prop_assume!(c.total() > 0);
            let m = classification_metrics(&c).unwrap();
            prop_assert_eq!(m.acc, (tp + tn) as f64 / c.total() as f64);
            if m.precision + m.recall > 0.0 {
                prop_assert_eq!(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall));
            }
            for v in [m.acc, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
