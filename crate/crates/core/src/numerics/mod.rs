//! Dense linear algebra, the Q-network MLP and its optimizer.

mod matrix;
mod mlp;
mod optim;

pub use matrix::DenseMatrix;
pub use mlp::{Activation, ForwardTrace, MlpGrads, MlpParams};
pub use optim::{opt_step, OptKind, OptState};

use crate::error::{Error, Result};

/// Numerically stable `ln Σ exp(v_i)`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("logsumexp of an empty vector".into()));
    }
    Ok(logsumexp_nonempty(values))
}

pub(crate) fn logsumexp_nonempty(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() == 1 || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `softmax(v)` computed with the same max shift as [`logsumexp`].
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
