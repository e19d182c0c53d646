use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    #[default]
    Sgd,
    SgdMomentum,
}

/// Minibatch SGD, optionally with heavy-ball momentum.
///
/// SGD: `θ ← θ − lr·g`. Momentum: `v ← μ·v + g`, then `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct OptState {
    pub kind: OptKind,
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: MlpGrads,
}

impl OptState {
    pub fn new(kind: OptKind, learning_rate: f64, momentum: f64, params: &MlpParams) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0,1), got {momentum}")));
        }
        Ok(Self {
            kind,
            learning_rate,
            momentum,
            velocity: MlpGrads::zeros_like(params),
        })
    }

    pub fn sgd(learning_rate: f64, params: &MlpParams) -> Result<Self> {
        Self::new(OptKind::Sgd, learning_rate, 0.0, params)
    }

    pub fn velocity(&self) -> &MlpGrads {
        &self.velocity
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if !grads.matches_shape(params) || !self.velocity.matches_shape(params) {
            return Err(Error::Dimension(
                "gradient/velocity shapes do not match parameters".into(),
            ));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFinite(format!("gradient of layer {layer}")));
        }
        let lr = self.learning_rate;
        match self.kind {
            OptKind::Sgd => {
                for (w, g) in params.weights_mut().iter_mut().zip(&grads.weights) {
                    for (p, d) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *p -= lr * d;
                    }
                }
                for (b, g) in params.biases_mut().iter_mut().zip(&grads.biases) {
                    for (p, d) in b.iter_mut().zip(g) {
                        *p -= lr * d;
                    }
                }
            }
            OptKind::SgdMomentum => {
                let mu = self.momentum;
                for ((w, v), g) in params
                    .weights_mut()
                    .iter_mut()
                    .zip(self.velocity.weights.iter_mut())
                    .zip(&grads.weights)
                {
                    for ((p, vi), d) in w
                        .as_mut_slice()
                        .iter_mut()
                        .zip(v.as_mut_slice())
                        .zip(g.as_slice())
                    {
                        *vi = mu * *vi + d;
                        *p -= lr * *vi;
                    }
                }
                for ((b, v), g) in params
                    .biases_mut()
                    .iter_mut()
                    .zip(self.velocity.biases.iter_mut())
                    .zip(&grads.biases)
                {
                    for ((p, vi), d) in b.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = mu * *vi + d;
                        *p -= lr * *vi;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`OptState::step`].
pub fn opt_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut OptState) -> Result<()> {
    state.step(params, grads)
}
