//! Fully connected network `R^{D+1} -> R^{D+1}` with hand-written
//! backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EfmError, Result};
use crate::field::VectorField;
use crate::rng::Stream;
use crate::types::{ExtendedPoint, FieldVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// SiLU, `y * sigmoid(y)`.
    SmoothRelu,
}

impl Activation {
    fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => y.tanh(),
            Activation::SmoothRelu => y / (1.0 + (-y).exp()),
        }
    }

    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = y.tanh();
                1.0 - t * t
            }
            Activation::SmoothRelu => {
                let s = 1.0 / (1.0 + (-y).exp());
                s * (1.0 + y * (1.0 - s))
            }
        }
    }
}

/// One affine layer, `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter-shaped storage: network weights, gradients, optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<Layer>,
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Parameters) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All entries, layer by layer, weights (row-major) before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for l in &self.layers {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.len());
        let mut it = values.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|w| w.is_finite()) && l.bias.iter().all(|b| b.is_finite()))
    }

    pub(crate) fn zip_mut_with(&mut self, other: &Parameters, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut a.weight).and(&b.weight).for_each(|x, &y| f(x, y));
            Zip::from(&mut a.bias).and(&b.bias).for_each(|x, &y| f(x, y));
        }
    }
}

/// The learned approximation of the normalized capacitor field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldApproximator {
    layer_dims: Vec<usize>,
    activation: Activation,
    pub params: Parameters,
}

impl FieldApproximator {
    /// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization of every
    /// weight and bias.
    pub fn new(layer_dims: &[usize], activation: Activation, stream: &mut Stream) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation)?;
        for l in &mut net.params.layers {
            let bound = 1.0 / (l.weight.ncols() as f64).sqrt();
            l.weight.iter_mut().for_each(|w| *w = stream.random_range(-bound..bound));
            l.bias.iter_mut().for_each(|b| *b = stream.random_range(-bound..bound));
        }
        Ok(net)
    }

    /// Network with hidden widths `hidden` between `D+1` inputs and outputs.
    pub fn for_capacitor(dim_d: usize, hidden: &[usize], activation: Activation, stream: &mut Stream) -> Result<Self> {
        let mut dims = vec![dim_d + 1];
        dims.extend_from_slice(hidden);
        dims.push(dim_d + 1);
        Self::new(&dims, activation, stream)
    }

    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(EfmError::ShapeMismatch(format!("invalid layer dims {layer_dims:?}")));
        }
        if layer_dims[0] != *layer_dims.last().unwrap() {
            return Err(EfmError::ShapeMismatch(format!(
                "input and output widths differ in {layer_dims:?}"
            )));
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            params: Parameters { layers },
        })
    }

    /// Rebuilds a network from parameters, checking that shapes chain.
    pub fn from_parameters(layer_dims: &[usize], activation: Activation, params: Parameters) -> Result<Self> {
        let template = Self::zeros(layer_dims, activation)?;
        if !template.params.same_shape(&params) {
            return Err(EfmError::ShapeMismatch(
                "parameter shapes do not match layer dims".into(),
            ));
        }
        if !params.is_finite() {
            return Err(EfmError::InvalidArgument("non-finite parameters".into()));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            params,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn forward(&self, point: &ExtendedPoint) -> Result<FieldVector> {
        if point.as_slice().len() != self.input_dim() {
            return Err(EfmError::DimensionMismatch {
                expected: self.input_dim(),
                got: point.as_slice().len(),
            });
        }
        Ok(FieldVector(self.forward_one(point.as_slice())))
    }

    fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.params.layers.len() - 1;
        for (i, l) in self.params.layers.iter().enumerate() {
            let mut y = l.bias.to_vec();
            for (r, row) in l.weight.outer_iter().enumerate() {
                y[r] += row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
            }
            if i < last {
                y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = y;
        }
        h
    }

    /// Forward pass over a batch, one input per row.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(EfmError::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        Ok(self.forward_cached(inputs).0)
    }

    /// Output plus the per-layer inputs and pre-activations needed by the
    /// backward pass.
    fn forward_cached(&self, inputs: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let last = self.params.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last);
        let mut h = inputs.to_owned();
        for (i, l) in self.params.layers.iter().enumerate() {
            let mut y = h.dot(&l.weight.t());
            y += &l.bias;
            layer_inputs.push(h);
            if i < last {
                let act = y.mapv(|v| self.activation.apply(v));
                pre.push(y);
                h = act;
            } else {
                h = y;
            }
        }
        (h, layer_inputs, pre)
    }

    /// Mean squared error `mean_b |f(x_b) - t_b|^2` and its gradient.
    pub fn loss_and_gradient(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Parameters)> {
        if inputs.nrows() == 0 {
            return Err(EfmError::EmptyBatch);
        }
        if inputs.ncols() != self.input_dim() || targets.dim() != (inputs.nrows(), self.input_dim()) {
            return Err(EfmError::ShapeMismatch(format!(
                "batch {:?} / targets {:?} for input width {}",
                inputs.dim(),
                targets.dim(),
                self.input_dim()
            )));
        }
        let b = inputs.nrows() as f64;
        let (out, layer_inputs, pre) = self.forward_cached(inputs);
        let diff = &out - &targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;

        let mut grads = Vec::with_capacity(self.params.layers.len());
        let mut delta = diff * (2.0 / b);
        for i in (0..self.params.layers.len()).rev() {
            let l = &self.params.layers[i];
            let gw = delta.t().dot(&layer_inputs[i]);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Layer { weight: gw, bias: gb });
            if i > 0 {
                let mut back = delta.dot(&l.weight);
                Zip::from(&mut back)
                    .and(&pre[i - 1])
                    .for_each(|g, &y| *g *= self.activation.derivative(y));
                delta = back;
            }
        }
        grads.reverse();
        Ok((loss, Parameters { layers: grads }))
    }

    /// Loss only, for finite-difference checks.
    pub fn loss(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward_batch(inputs)?;
        let diff = &out - &targets;
        Ok(diff.iter().map(|d| d * d).sum::<f64>() / inputs.nrows().max(1) as f64)
    }
}

impl VectorField for FieldApproximator {
    fn ambient_dim(&self) -> usize {
        self.input_dim()
    }

    fn field_into(&self, point: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.forward_one(point));
    }
}
