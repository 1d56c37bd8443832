//! Confusion matrices and the accuracy / F1 figures derived from them.

use crate::error::{Error, Result};

/// `counts[true_class][predicted_class]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
        if predictions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(k);
        for (&p, &t) in predictions.iter().zip(labels) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    /// Builds a matrix from rows of counts.
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<ConfusionMatrix> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix rows must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::Label(format!(
                "class pair ({truth}, {predicted}) outside 0..{}",
                self.k
            )));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    /// Entrywise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Shape(format!("cannot merge {}-class and {}-class matrices", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|j| self.get(c, j)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, c)).sum()
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Data("confusion matrix is empty".into()))
        } else {
            Ok(())
        }
    }
}

pub fn accuracy_of(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

/// F1 of one class; precision, recall or F1 with a zero denominator count as 0.
pub fn f1_of_class(cm: &ConfusionMatrix, class: usize) -> Result<f64> {
    cm.nonempty()?;
    if class >= cm.k {
        return Err(Error::Label(format!("class {class} outside 0..{}", cm.k)));
    }
    let tp = cm.get(class, class) as f64;
    let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
    let precision = ratio(tp, cm.col_sum(class));
    let recall = ratio(tp, cm.row_sum(class));
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// F1 over true/false positives and false negatives pooled across classes.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    let tp = cm.trace();
    // Every off-diagonal count is one false positive (for the predicted
    // class) and one false negative (for the true class).
    let off = cm.total() - tp;
    let (fp, fn_) = (off, off);
    let den = 2 * tp + fp + fn_;
    Ok(if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 })
}

/// Four-decimal rendering used in every CSV and console table.
pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}
