//! Small dense networks: batched forward pass, reverse-mode gradients and Adam.
//!
//! Layer `k` maps a row batch `x` to `x · W_k + b_k`, with `W_k` of shape
//! `(dims[k], dims[k + 1])`. Every layer but the last applies a rectifier; the
//! last applies the configured [`OutputActivation`].
//!
//! Snapshots serialize as `{ "dims": [...], "output": "tanh" | "identity",
//! "params": [...] }` where `params` concatenates, layer by layer, the weight
//! matrix in row-major order followed by the bias vector.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    /// Squashes every output component into `[-1, 1]`.
    Tanh,
}

impl OutputActivation {
    fn apply(self, z: &mut Array2<f64>) {
        if let OutputActivation::Tanh = self {
            z.mapv_inplace(f64::tanh);
        }
    }

    /// Multiplies `upstream` by the activation derivative, given post-activation `y`.
    fn backprop(self, y: &Array2<f64>, upstream: &mut Array2<f64>) {
        if let OutputActivation::Tanh = self {
            Zip::from(upstream).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
        }
    }
}

/// A multilayer perceptron with rectifier hidden units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatParams", into = "FlatParams")]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output: OutputActivation,
}

/// Per-layer intermediates kept by [`Mlp::forward_trace`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[k]` is the batch fed into layer `k` (post-rectifier for `k > 0`).
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Post-rectifier activations of every hidden layer.
    pub fn hidden(&self) -> &[Array2<f64>] {
        &self.inputs[1..]
    }
}

/// Parameter-shaped gradient (or moment) buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatParams", into = "FlatParams")]
pub struct Gradients {
    dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(
            "a network needs at least input and output dims".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig("layer dims must be positive".into()));
    }
    Ok(())
}

impl Gradients {
    pub fn zeros(dims: &[usize]) -> Self {
        let weights = dims
            .windows(2)
            .map(|w| Array2::zeros((w[0], w[1])))
            .collect();
        let biases = dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|&v| v == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }

    /// Flattened in snapshot order.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }
}

fn flatten(weights: &[Array2<f64>], biases: &[Array1<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in weights.iter().zip(biases) {
        out.extend(w.iter().copied());
        out.extend(b.iter().copied());
    }
    out
}

fn unflatten(dims: &[usize], values: &[f64]) -> Result<(Vec<Array2<f64>>, Vec<Array1<f64>>)> {
    check_dims(dims)?;
    let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if values.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "parameter snapshot",
            expected,
            actual: values.len(),
        });
    }
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    let mut offset = 0;
    for w in dims.windows(2) {
        let n = w[0] * w[1];
        let mat = Array2::from_shape_vec((w[0], w[1]), values[offset..offset + n].to_vec())
            .expect("shape checked above");
        offset += n;
        biases.push(Array1::from(values[offset..offset + w[1]].to_vec()));
        offset += w[1];
        weights.push(mat);
    }
    Ok((weights, biases))
}

/// Serialized form shared by networks and gradient buffers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatParams {
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputActivation>,
    pub params: Vec<f64>,
}

impl From<Mlp> for FlatParams {
    fn from(net: Mlp) -> Self {
        FlatParams {
            params: flatten(&net.weights, &net.biases),
            dims: net.dims,
            output: Some(net.output),
        }
    }
}

impl TryFrom<FlatParams> for Mlp {
    type Error = Error;

    fn try_from(flat: FlatParams) -> Result<Self> {
        let (weights, biases) = unflatten(&flat.dims, &flat.params)?;
        Ok(Mlp {
            dims: flat.dims,
            weights,
            biases,
            output: flat.output.unwrap_or(OutputActivation::Identity),
        })
    }
}

impl From<Gradients> for FlatParams {
    fn from(g: Gradients) -> Self {
        FlatParams {
            params: flatten(&g.weights, &g.biases),
            dims: g.dims,
            output: None,
        }
    }
}

impl TryFrom<FlatParams> for Gradients {
    type Error = Error;

    fn try_from(flat: FlatParams) -> Result<Self> {
        let (weights, biases) = unflatten(&flat.dims, &flat.params)?;
        Ok(Gradients {
            dims: flat.dims,
            weights,
            biases,
        })
    }
}

impl Mlp {
    /// Builds a network with weights and biases drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((w[0], w[1]), || {
                rng.random_range(-bound..=bound)
            }));
            biases.push(Array1::from_shape_simple_fn(w[1], || {
                rng.random_range(-bound..=bound)
            }));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            output,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        output: OutputActivation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidConfig(
                "need one bias vector per weight matrix".into(),
            ));
        }
        let mut dims = vec![weights[0].nrows()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != dims[k] {
                return Err(Error::DimensionMismatch {
                    context: "weight rows",
                    expected: dims[k],
                    actual: w.nrows(),
                });
            }
            if b.len() != w.ncols() {
                return Err(Error::DimensionMismatch {
                    context: "bias length",
                    expected: w.ncols(),
                    actual: b.len(),
                });
            }
            dims.push(w.ncols());
        }
        check_dims(&dims)?;
        Ok(Self {
            dims,
            weights,
            biases,
            output,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims checked at construction")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
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

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameters flattened in snapshot order.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        let (weights, biases) = unflatten(&self.dims, values)?;
        self.weights = weights;
        self.biases = biases;
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a row batch (one sample per row).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut h = x.to_owned();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w);
            z += b;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                self.output.apply(&mut z);
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps the per-layer inputs needed by [`Mlp::backward`].
    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<ForwardTrace> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        inputs.push(x.to_owned());
        let mut output = None;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = inputs[k].dot(w);
            z += b;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
                inputs.push(z);
            } else {
                self.output.apply(&mut z);
                output = Some(z);
            }
        }
        Ok(ForwardTrace {
            inputs,
            output: output.expect("at least one layer"),
        })
    }

    /// Reverse pass. `upstream` is dLoss/dOutput per sample; parameter
    /// gradients are summed over the batch. Returns the input gradient too.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if upstream.dim() != trace.output.dim() {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: trace.output.len(),
                actual: upstream.len(),
            });
        }
        let mut delta = upstream.clone();
        self.output.backprop(&trace.output, &mut delta);
        let mut grads = Gradients::zeros(&self.dims);
        for k in (0..self.weights.len()).rev() {
            let input = &trace.inputs[k];
            grads.weights[k] = input.t().dot(&delta);
            grads.biases[k] = delta.sum_axis(Axis(0));
            let mut prev = delta.dot(&self.weights[k].t());
            if k > 0 {
                Zip::from(&mut prev)
                    .and(input)
                    .for_each(|d, &a| if a <= 0.0 { *d = 0.0 });
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// `self ← rate · source + (1 − rate) · self`, parameter-wise.
    pub fn soft_update_from(&mut self, source: &Mlp, rate: f64) {
        debug_assert_eq!(self.dims, source.dims);
        for (t, s) in self.weights.iter_mut().zip(&source.weights) {
            Zip::from(t).and(s).for_each(|t, &s| *t = rate * s + (1.0 - rate) * *t);
        }
        for (t, s) in self.biases.iter_mut().zip(&source.biases) {
            Zip::from(t).and(s).for_each(|t, &s| *t = rate * s + (1.0 - rate) * *t);
        }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl AdamState {
    pub fn new(dims: &[usize], learning_rate: f64) -> Self {
        Self::with_betas(dims, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(dims: &[usize], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: Gradients::zeros(dims),
            second_moment: Gradients::zeros(dims),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second_moment
    }

    /// One bias-corrected Adam step. Non-finite gradients leave both the
    /// network and the state untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.dims != net.dims || self.first_moment.dims != net.dims {
            return Err(Error::DimensionMismatch {
                context: "adam parameter shapes",
                expected: net.num_params(),
                actual: grads.to_flat().len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam gradient"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for k in 0..net.weights.len() {
            Zip::from(&mut net.weights[k])
                .and(&mut self.first_moment.weights[k])
                .and(&mut self.second_moment.weights[k])
                .and(&grads.weights[k])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut net.biases[k])
                .and(&mut self.first_moment.biases[k])
                .and(&mut self.second_moment.biases[k])
                .and(&grads.biases[k])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}
