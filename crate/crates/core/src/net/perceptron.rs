use crate::error::{shape_err, Error, Result};

/// Threshold unit over binary inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceptron {
    weights: Vec<f64>,
    threshold: f64,
}

impl Perceptron {
    pub fn new(weights: Vec<f64>, threshold: f64) -> Result<Perceptron> {
        if weights.is_empty() {
            return Err(Error::Parameter("perceptron needs at least one weight".into()));
        }
        if !threshold.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("perceptron weights and threshold must be finite".into()));
        }
        Ok(Perceptron { weights, threshold })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// 1 when the weighted sum strictly exceeds the threshold, else 0.
    pub fn output(&self, x: &[bool]) -> Result<u8> {
        if x.len() != self.weights.len() {
            return Err(shape_err!("perceptron has {} weights, got {} inputs", self.weights.len(), x.len()));
        }
        let sum: f64 = self.weights.iter().zip(x).filter(|(_, &on)| on).map(|(w, _)| w).sum();
        Ok(u8::from(sum > self.threshold))
    }
}
