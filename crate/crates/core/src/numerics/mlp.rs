//! Fully-connected feed-forward network with hand-derived backpropagation.
//!
//! Weight matrix `i` has shape `(layer_dims[i], layer_dims[i + 1])` so a batch
//! of row inputs maps as `X · W + b`. Hidden layers apply the configured
//! activation; the output layer is linear.
//!
//! Flattening order (used by checkpoints and gradient checks): layers in
//! order, each weight matrix row-major, then that layer's bias.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<DenseMatrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Gradient of a scalar loss with respect to every parameter of an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Intermediates of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activations of every layer; the last entry is the network output.
    pub pre_activations: Vec<DenseMatrix>,
    /// Post-activation hidden outputs (one per hidden layer).
    pub hidden: Vec<DenseMatrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DenseMatrix {
        self.pre_activations.last().expect("at least one layer")
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    pub fn new(
        layer_dims: Vec<usize>,
        weights: Vec<DenseMatrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        check_dims(&layer_dims)?;
        let n = layer_dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::Dimension(format!(
                "{} layers need {n} weight matrices and biases, got {} and {}",
                n,
                weights.len(),
                biases.len()
            )));
        }
        for i in 0..n {
            let want = (layer_dims[i], layer_dims[i + 1]);
            if weights[i].shape() != want {
                return Err(Error::Dimension(format!(
                    "weight {i} has shape {:?}, expected {want:?}",
                    weights[i].shape()
                )));
            }
            if biases[i].len() != layer_dims[i + 1] {
                return Err(Error::Dimension(format!(
                    "bias {i} has length {}, expected {}",
                    biases[i].len(),
                    layer_dims[i + 1]
                )));
            }
            if biases[i].iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("bias {i}")));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| DenseMatrix::zeros(w[0], w[1]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// He-uniform weights for ReLU, Xavier-uniform for tanh; zero biases.
    pub fn init<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_dims, activation)?;
        for w in params.weights.iter_mut() {
            let (fan_in, fan_out) = (w.rows() as f64, w.cols() as f64);
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
            for v in w.as_mut_slice() {
                *v = dist.sample(rng);
            }
        }
        Ok(params)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} flattened parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flattened parameters".into()));
        }
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = b.len();
            b.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    /// Overwrites `self` with `other`'s values without reallocating.
    pub fn copy_from(&mut self, other: &MlpParams) {
        debug_assert_eq!(self.layer_dims, other.layer_dims);
        for (dst, src) in self.weights.iter_mut().zip(&other.weights) {
            dst.as_mut_slice().copy_from_slice(src.as_slice());
        }
        for (dst, src) in self.biases.iter_mut().zip(&other.biases) {
            dst.copy_from_slice(src);
        }
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    fn check_input(&self, inputs: &DenseMatrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        Ok(())
    }

    /// Row `i` of the result holds the outputs for input row `i`.
    pub fn forward(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(inputs)?;
        let mut act = affine(inputs, &self.weights[0], &self.biases[0]);
        for (w, b) in self.weights.iter().zip(&self.biases).skip(1) {
            let a = self.activation;
            act.as_mut_slice().iter_mut().for_each(|z| *z = a.apply(*z));
            act = affine(&act, w, b);
        }
        Ok(act)
    }

    /// Single-row convenience wrapper around [`MlpParams::forward`].
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = DenseMatrix::new(1, input.len(), input.to_vec())?;
        Ok(self.forward(&x)?.into_vec())
    }

    pub fn forward_trace(&self, inputs: &DenseMatrix) -> Result<ForwardTrace> {
        self.check_input(inputs)?;
        let n = self.weights.len();
        let mut pre_activations = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n - 1);
        let mut z = affine(inputs, &self.weights[0], &self.biases[0]);
        for (w, b) in self.weights.iter().zip(&self.biases).skip(1) {
            let mut a = z.clone();
            let act = self.activation;
            a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            pre_activations.push(z);
            z = affine(&a, w, b);
            hidden.push(a);
        }
        pre_activations.push(z);
        Ok(ForwardTrace {
            pre_activations,
            hidden,
        })
    }

    /// Gradient of a loss given `∂loss/∂output`, recomputing the forward pass.
    pub fn backward(&self, inputs: &DenseMatrix, output_grads: &DenseMatrix) -> Result<MlpGrads> {
        let trace = self.forward_trace(inputs)?;
        self.backward_with_trace(inputs, &trace, output_grads)
    }

    pub fn backward_with_trace(
        &self,
        inputs: &DenseMatrix,
        trace: &ForwardTrace,
        output_grads: &DenseMatrix,
    ) -> Result<MlpGrads> {
        let out_shape = trace.output().shape();
        if output_grads.shape() != out_shape {
            return Err(Error::Dimension(format!(
                "output gradient shape {:?} does not match output shape {out_shape:?}",
                output_grads.shape()
            )));
        }
        let n = self.weights.len();
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = output_grads.clone();
        for layer in (0..n).rev() {
            let layer_input = if layer == 0 {
                inputs
            } else {
                &trace.hidden[layer - 1]
            };
            accumulate_outer(&mut grads.weights[layer], layer_input, &delta);
            for r in 0..delta.rows() {
                for (gb, d) in grads.biases[layer].iter_mut().zip(delta.row(r)) {
                    *gb += d;
                }
            }
            if layer > 0 {
                let w = &self.weights[layer];
                let z = &trace.pre_activations[layer - 1];
                let mut prev = DenseMatrix::zeros(delta.rows(), w.rows());
                for r in 0..delta.rows() {
                    let d_row = delta.row(r);
                    let z_row = z.row(r);
                    let p_row = prev.row_mut(r);
                    for (j, p) in p_row.iter_mut().enumerate() {
                        let w_row = w.row(j);
                        let s: f64 = w_row.iter().zip(d_row).map(|(a, b)| a * b).sum();
                        *p = s * self.activation.derivative(z_row[j]);
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }
}

/// `x · w + b` broadcast over rows.
fn affine(x: &DenseMatrix, w: &DenseMatrix, b: &[f64]) -> DenseMatrix {
    let mut out = x.matmul(w).expect("shapes validated by caller");
    for r in 0..out.rows() {
        for (o, bias) in out.row_mut(r).iter_mut().zip(b) {
            *o += bias;
        }
    }
    out
}

/// `grad += inputᵀ · delta`.
fn accumulate_outer(grad: &mut DenseMatrix, input: &DenseMatrix, delta: &DenseMatrix) {
    let cols = grad.cols();
    for r in 0..input.rows() {
        let x = input.row(r);
        let d = delta.row(r);
        let g = grad.as_mut_slice();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (gij, dj) in g[i * cols..(i + 1) * cols].iter_mut().zip(d) {
                *gij += xi * dj;
            }
        }
    }
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    /// Index of the first layer holding a non-finite gradient entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.weights
            .iter()
            .zip(&self.biases)
            .position(|(w, b)| !w.is_finite() || b.iter().any(|v| !v.is_finite()))
    }

    pub fn matches_shape(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.shape() == w.shape())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(g, b)| g.len() == b.len())
    }
}
