//! Fully connected networks in `f64` with hand-written backpropagation,
//! Adam and Polyak averaging.

mod adam;
mod weights;

pub use adam::{AdamConfig, AdamState, L2Mode};
pub use weights::{read_weights, write_weights, WeightsError};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bound of the uniform initialization of the last layer.
pub const OUTPUT_INIT_BOUND: f64 = 3e-3;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("a network needs at least one layer (got {0} dims)")]
    TooFewDims(usize),
    #[error("{dims} dims need {} activations, got {activations}", dims - 1)]
    ActivationCount { dims: usize, activations: usize },
    #[error("layer sizes must be positive")]
    ZeroDim,
    #[error("expected {expected} inputs, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("network architectures differ")]
    ArchitectureMismatch,
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite parameter at index {index}")]
    NonFiniteParameter { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    /// Sigmoid on unit 0 and tanh on every other unit.
    VelocityHead,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Linear => 3,
            Activation::VelocityHead => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Linear,
            4 => Activation::VelocityHead,
            _ => return None,
        })
    }

    fn unit(self, unit: usize) -> Self {
        match self {
            Activation::VelocityHead if unit == 0 => Activation::Sigmoid,
            Activation::VelocityHead => Activation::Tanh,
            a => a,
        }
    }

    /// Applies the activation of output unit `unit`.
    pub fn apply(self, unit: usize, z: f64) -> f64 {
        match self.unit(unit) {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            _ => z,
        }
    }

    /// Derivative expressed through pre-activation `z` and output `y`.
    pub fn derivative(self, unit: usize, z: f64, y: f64) -> f64 {
        match self.unit(unit) {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            _ => 1.0,
        }
    }
}

/// Row-major dense matrix; rows are samples in batch operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `[self | other]`, row by row.
    pub fn hconcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hconcat row count");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Splits columns into `[.., at)` and `[at, ..)`.
    pub fn split_cols(&self, at: usize) -> (Matrix, Matrix) {
        assert!(at <= self.cols, "split past last column");
        let mut left = Matrix::zeros(self.rows, at);
        let mut right = Matrix::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            let row = self.row(r);
            left.row_mut(r).copy_from_slice(&row[..at]);
            right.row_mut(r).copy_from_slice(&row[at..]);
        }
        (left, right)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Weights and biases uniform on `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, bound: f64, rng: &mut R) -> Self {
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self, NnError> {
        if weights.len() != inputs * outputs {
            return Err(NnError::DimensionMismatch {
                expected: inputs * outputs,
                actual: weights.len(),
            });
        }
        if bias.len() != outputs {
            return Err(NnError::DimensionMismatch {
                expected: outputs,
                actual: bias.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weight(&self, output: usize, input: usize) -> f64 {
        self.weights[output * self.inputs + input]
    }

    fn forward(&self, x: &Matrix) -> (Matrix, Matrix) {
        let mut pre = Matrix::zeros(x.rows, self.outputs);
        let mut out = Matrix::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            let xr = x.row(r);
            let zr = pre.row_mut(r);
            for (o, z) in zr.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                *z = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
            let yr = out.row_mut(r);
            for o in 0..self.outputs {
                yr[o] = self.activation.apply(o, pre.data[r * self.outputs + o]);
            }
        }
        (pre, out)
    }
}

/// Gradient of a scalar with respect to every layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Parameters in canonical order: per layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= factor);
        }
    }
}

/// Per-layer inputs and pre-activations retained by a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("cache holds at least one layer")
    }

    /// Pre-activations of the output layer.
    pub fn output_pre(&self) -> &Matrix {
        self.pre.last().expect("cache holds at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::TooFewDims(layers.len()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(NnError::DimensionMismatch {
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
            return Err(NnError::ZeroDim);
        }
        Ok(Self { layers })
    }

    fn check_shape(dims: &[usize], activations: &[Activation]) -> Result<(), NnError> {
        if dims.len() < 2 {
            return Err(NnError::TooFewDims(dims.len()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(NnError::ActivationCount {
                dims: dims.len(),
                activations: activations.len(),
            });
        }
        if dims.contains(&0) {
            return Err(NnError::ZeroDim);
        }
        Ok(())
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self, NnError> {
        Self::check_shape(dims, activations)?;
        Self::from_layers(
            dims.windows(2)
                .zip(activations)
                .map(|(d, &a)| Dense::zeros(d[0], d[1], a))
                .collect(),
        )
    }

    /// Hidden layers uniform on `±1/sqrt(fan_in)`, the last layer uniform on
    /// `±OUTPUT_INIT_BOUND`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self, NnError> {
        Self::check_shape(dims, activations)?;
        let last = activations.len() - 1;
        Self::from_layers(
            dims.windows(2)
                .zip(activations)
                .enumerate()
                .map(|(i, (d, &a))| {
                    let bound = if i == last { OUTPUT_INIT_BOUND } else { 1.0 / (d[0] as f64).sqrt() };
                    Dense::uniform(d[0], d[1], a, bound, rng)
                })
                .collect(),
        )
    }

    /// Every layer uniform on `±1/sqrt(fan_in)`; for stacks whose output feeds
    /// another network.
    pub fn init_hidden<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self, NnError> {
        Self::check_shape(dims, activations)?;
        Self::from_layers(
            dims.windows(2)
                .zip(activations)
                .map(|(d, &a)| Dense::uniform(d[0], d[1], a, 1.0 / (d[0] as f64).sqrt(), rng))
                .collect(),
        )
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in canonical order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation)
    }

    fn check_input(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    /// Output for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input.len())?;
        let mut x = Matrix::from_vec(1, input.len(), input.to_vec());
        for l in &self.layers {
            x = l.forward(&x).1;
        }
        Ok(x.data)
    }

    /// Batch output without retaining intermediates.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(x.cols)?;
        let mut a = self.layers[0].forward(x).1;
        for l in &self.layers[1..] {
            a = l.forward(&a).1;
        }
        Ok(a)
    }

    /// Batch output with the cache `backward` needs.
    pub fn forward_batch(&self, x: &Matrix) -> Result<ForwardCache, NnError> {
        self.check_input(x.cols)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        for l in &self.layers {
            let (pre, out) = l.forward(&a);
            cache.inputs.push(a);
            cache.pre.push(pre);
            a = out.clone();
            cache.outputs.push(out);
        }
        Ok(cache)
    }

    /// Reverse pass for the scalar `sum(output_gradient * output)` summed over
    /// the batch. Returns parameter gradients and the input gradient.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<(Gradients, Matrix), NnError> {
        self.backward_with_pre(cache, output_gradient, None)
    }

    /// As [`Mlp::backward`], with `pre_gradient` added to the gradient with
    /// respect to the output layer's pre-activations.
    pub fn backward_with_pre(
        &self,
        cache: &ForwardCache,
        output_gradient: &Matrix,
        pre_gradient: Option<&Matrix>,
    ) -> Result<(Gradients, Matrix), NnError> {
        if cache.inputs.len() != self.layers.len() {
            return Err(NnError::ArchitectureMismatch);
        }
        let out = cache.output();
        if output_gradient.rows != out.rows || output_gradient.cols != out.cols {
            return Err(NnError::DimensionMismatch {
                expected: out.cols,
                actual: output_gradient.cols,
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = output_gradient.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[k];
            let z = &cache.pre[k];
            let y = &cache.outputs[k];
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            let mut delta = upstream;
            for r in 0..delta.rows {
                for o in 0..n_out {
                    let i = r * n_out + o;
                    delta.data[i] *= layer.activation.derivative(o, z.data[i], y.data[i]);
                }
            }
            if let (Some(pg), true) = (pre_gradient, k + 1 == self.layers.len()) {
                if pg.rows != delta.rows || pg.cols != delta.cols {
                    return Err(NnError::DimensionMismatch {
                        expected: delta.cols,
                        actual: pg.cols,
                    });
                }
                for (d, g) in delta.data.iter_mut().zip(&pg.data) {
                    *d += g;
                }
            }
            let g = &mut grads.layers[k];
            let mut dx = Matrix::zeros(delta.rows, n_in);
            for r in 0..delta.rows {
                let xr = x.row(r);
                let dr = delta.row(r);
                let dxr = &mut dx.data[r * n_in..(r + 1) * n_in];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let gw = &mut g.weights[o * n_in..(o + 1) * n_in];
                    let w = &layer.weights[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        gw[i] += d * xr[i];
                        dxr[i] += d * w[i];
                    }
                }
            }
            upstream = dx;
        }
        Ok((grads, upstream))
    }

    pub fn check_finite(&self) -> Result<(), NnError> {
        match self.params().position(|p| !p.is_finite()) {
            Some(index) => Err(NnError::NonFiniteParameter { index }),
            None => Ok(()),
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), NnError> {
    if !target.same_architecture(online) {
        return Err(NnError::ArchitectureMismatch);
    }
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}
