use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over every element of `(prediction - target)^2`.
    Mse,
    /// Mean over samples of `-sum(target * ln(prediction))`.
    CrossEntropy,
}

fn check(kind: LossKind, prediction: &Tensor, target: &Tensor) -> Result<()> {
    if prediction.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    if kind == LossKind::CrossEntropy {
        let width = target.len() / samples(target);
        for (i, row) in target.values().chunks(width).enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::Data(format!("cross-entropy target row {i} is not one-hot")));
            }
        }
        if prediction.values().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("cross-entropy predictions must lie in [0, 1]".into()));
        }
    }
    Ok(())
}

/// Rows of a 1-D tensor count as a single sample.
fn samples(t: &Tensor) -> usize {
    if t.shape().len() == 1 {
        1
    } else {
        t.batch_size()
    }
}

pub fn loss(kind: LossKind, prediction: &Tensor, target: &Tensor) -> Result<f64> {
    check(kind, prediction, target)?;
    let (p, t) = (prediction.values(), target.values());
    Ok(match kind {
        LossKind::Mse => p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64,
        LossKind::CrossEntropy => {
            let s: f64 = p
                .iter()
                .zip(t)
                .filter(|(_, &b)| b != 0.0)
                .map(|(&a, &b)| -b * a.clamp(PROB_FLOOR, 1.0).ln())
                .sum();
            s / samples(prediction) as f64
        }
    })
}

/// dLoss/dPrediction, same shape as `prediction`.
pub fn loss_gradient(kind: LossKind, prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    check(kind, prediction, target)?;
    let (p, t) = (prediction.values(), target.values());
    let g: Vec<f64> = match kind {
        LossKind::Mse => {
            let n = p.len() as f64;
            p.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / n).collect()
        }
        LossKind::CrossEntropy => {
            let n = samples(prediction) as f64;
            p.iter()
                .zip(t)
                .map(|(&a, &b)| {
                    if b == 0.0 {
                        0.0
                    } else {
                        -b / a.clamp(PROB_FLOOR, 1.0) / n
                    }
                })
                .collect()
        }
    };
    Tensor::new(prediction.shape().to_vec(), g)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut v = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
        }
        v[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], v)
}
