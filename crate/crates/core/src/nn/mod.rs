//! Dense feed-forward networks with hand-written backpropagation.
//!
//! The network family is fixed: SELU on every hidden layer, identity on the
//! output layer. Both gradients needed downstream are exact: parameter
//! gradients of the mean-absolute-error loss (training) and input gradients of
//! a linear functional of the output (Hamiltonian dynamics).

mod adam;
mod schedule;
mod train;

pub use adam::AdamState;
pub use schedule::PlateauScheduler;
pub use train::{train, train_with_progress, TrainConfig, TrainData, TrainHistory};


use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => selu(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x` given `y = apply(x)`; avoids a second
    /// exponential.
    #[inline]
    fn derivative_given(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Selu if x > 0.0 => SELU_LAMBDA,
            Activation::Selu => y + SELU_LAMBDA * SELU_ALPHA,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Selu => 1,
            Activation::Identity => 0,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Activation::Selu),
            0 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// `w^T v`, accumulated over contiguous rows of a row-major `w`.
fn transpose_times(w: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(w.ncols());
    for (row, &c) in w.rows().into_iter().zip(v) {
        if c != 0.0 {
            out.scaled_add(c, &row);
        }
    }
    out
}

/// Fully connected network. `weights[l]` has shape `(dims[l + 1], dims[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden: Activation,
    output: Activation,
}

/// Parameter-shaped tensors: gradients, Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub(crate) fn check_shape(&self, model: &Mlp) -> Result<()> {
        if self.weights.len() != model.weights.len() || self.biases.len() != model.biases.len() {
            return Err(Error::dims("gradient layer count", model.weights.len(), self.weights.len()));
        }
        for (g, w) in self.weights.iter().zip(&model.weights) {
            if g.shape() != w.shape() {
                return Err(Error::dims("gradient weight size", w.len(), g.len()));
            }
        }
        for (g, b) in self.biases.iter().zip(&model.biases) {
            if g.len() != b.len() {
                return Err(Error::dims("gradient bias size", b.len(), g.len()));
            }
        }
        Ok(())
    }
}

/// Intermediate values of a single-input forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    // pre-activations and activations per layer; the last activation is the output
    pre: Vec<Array1<f64>>,
    post: Vec<Array1<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("at least one layer").as_slice().expect("contiguous")
    }
}

impl Mlp {
    /// LeCun-normal initialisation (std `1/sqrt(fan_in)`), zero biases.
    pub fn new_lecun<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        validate_dims(dims)?;
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| normal.sample(rng)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
            hidden: Activation::Selu,
            output: Activation::Identity,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(Mlp {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|p| Array2::zeros((p[1], p[0]))).collect(),
            biases: dims.windows(2).map(|p| Array1::zeros(p[1])).collect(),
            hidden: Activation::Selu,
            output: Activation::Identity,
        })
    }

    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Invalid("need one bias vector per weight matrix".into()));
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *dims.last().unwrap() {
                return Err(Error::dims("weight input width", *dims.last().unwrap(), w.ncols()));
            }
            if b.len() != w.nrows() {
                return Err(Error::dims("bias length", w.nrows(), b.len()));
            }
            dims.push(w.nrows());
        }
        validate_dims(&dims)?;
        let model = Mlp {
            dims,
            weights,
            biases,
            hidden,
            output,
        };
        if !model.is_finite() {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(model)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn with_activations(mut self, hidden: Activation, output: Activation) -> Self {
        self.hidden = hidden;
        self.output = output;
        self
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(input)?.output().to_vec())
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), input.len()));
        }
        let x = Array1::from(input.to_vec());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post: Vec<Array1<f64>> = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w.dot(post.last().unwrap_or(&x)) + b;
            let f = self.activation(l);
            post.push(z.mapv(|v| f.apply(v)));
            pre.push(z);
        }
        Ok(Trace { pre, post })
    }

    /// Gradient of `cotangent · forward(input)` with respect to the input.
    pub fn grad_input(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_traced(input)?;
        self.backprop_input(&trace, cotangent)
    }

    pub fn backprop_input(&self, trace: &Trace, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.output_dim() {
            return Err(Error::dims("output cotangent", self.output_dim(), cotangent.len()));
        }
        let mut delta = Array1::from(cotangent.to_vec());
        for l in (0..self.weights.len()).rev() {
            let f = self.activation(l);
            Zip::from(&mut delta)
                .and(&trace.pre[l])
                .and(&trace.post[l])
                .for_each(|d, &z, &a| *d *= f.derivative_given(z, a));
            delta = transpose_times(&self.weights[l], &delta);
        }
        Ok(delta.to_vec())
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), inputs.ncols()));
        }
        let mut act = inputs.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = act.dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            let f = self.activation(l);
            z.mapv_inplace(|v| f.apply(v));
            act = z;
        }
        Ok(act)
    }

    /// Mean absolute error over batch and outputs plus `l2_weight * sum(w^2)`,
    /// with its exact (sub)gradient. The subgradient of `|r|` at `r = 0` is 0.
    pub fn grad_params(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        l2_weight: f64,
    ) -> Result<(f64, Gradients)> {
        let batch = inputs.nrows();
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if inputs.ncols() != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), inputs.ncols()));
        }
        if targets.nrows() != batch {
            return Err(Error::dims("target rows", batch, targets.nrows()));
        }
        if targets.ncols() != self.output_dim() {
            return Err(Error::dims("target width", self.output_dim(), targets.ncols()));
        }

        let n_layers = self.weights.len();
        // activations[0] is the input; pre[l] feeds activations[l + 1]
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(n_layers + 1);
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        activations.push(inputs.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[l].dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            let f = self.activation(l);
            activations.push(z.mapv(|v| f.apply(v)));
            pre.push(z);
        }

        let scale = 1.0 / (batch * self.output_dim()) as f64;
        let output = &activations[n_layers];
        let mut abs_sum = 0.0;
        let mut delta = Array2::zeros(output.raw_dim());
        Zip::from(&mut delta)
            .and(output)
            .and(targets)
            .for_each(|d, &p, &t| {
                let r = p - t;
                abs_sum += r.abs();
                *d = if r > 0.0 {
                    scale
                } else if r < 0.0 {
                    -scale
                } else {
                    0.0
                };
            });
        let l2_sum: f64 = self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum();
        let loss = abs_sum * scale + l2_weight * l2_sum;

        let mut grads = Gradients::zeros_like(self);
        for l in (0..n_layers).rev() {
            let f = self.activation(l);
            if f != Activation::Identity {
                Zip::from(&mut delta)
                    .and(&pre[l])
                    .and(&activations[l + 1])
                    .for_each(|d, &z, &a| *d *= f.derivative_given(z, a));
            }
            grads.weights[l] = delta.t().dot(&activations[l]);
            if l2_weight != 0.0 {
                grads.weights[l].scaled_add(2.0 * l2_weight, &self.weights[l]);
            }
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.weights[l]);
            }
        }
        Ok((loss, grads))
    }

    /// Data-term mean absolute error, no regularisation.
    pub fn mean_abs_error(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let pred = self.forward_batch(inputs)?;
        if pred.shape() != targets.shape() {
            return Err(Error::dims("target width", pred.ncols(), targets.ncols()));
        }
        let sum: f64 = Zip::from(&pred)
            .and(targets)
            .fold(0.0, |acc, &p, &t| acc + (p - t).abs());
        Ok(sum / pred.len() as f64)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Invalid("a network needs at least an input and an output layer".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Invalid("layer widths must be positive".into()));
    }
    Ok(())
}
