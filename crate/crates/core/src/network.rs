//! Forward-only multilayer perceptron with optional input decorrelation.
//!
//! Layer `l` computes `a_l = W_l · x̄_{l-1}` and `x_l = f(a_l)`, where
//! `x̄_{l-1} = R_l · x_{l-1}` when the layer has a decorrelator and
//! `x̄_{l-1} = x_{l-1}` otherwise. There are no bias terms. A noisy pass adds
//! a noise vector to every pre-activation before the nonlinearity, and the
//! trace stores the perturbed pre-activation.
//!
//! Per-sample functions ([`forward_clean`], [`forward_noisy`]) operate on
//! vectors; [`forward_batch`] runs the same computation over a row-per-sample
//! matrix with GEMM kernels and is what the training loop uses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{gemm, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(
                Error::InvalidParameter(format!("leaky slope must lie in (0, 1), got {slope}")),
            ),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative at pre-activation `x`; the kink takes the right-hand slope.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`.
    pub weights: Matrix,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    layers: Vec<Layer>,
    decorrelators: Vec<Option<Matrix>>,
}

impl NetworkState {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            check_len("layer chaining", w[0].weights.rows(), w[1].weights.cols())?;
        }
        for l in &layers {
            l.activation.validate()?;
        }
        let decorrelators = vec![None; layers.len()];
        Ok(Self {
            layers,
            decorrelators,
        })
    }

    /// Attaches identity decorrelators to every layer, or to every layer but
    /// the first when `include_input` is false.
    pub fn enable_decorrelation(&mut self, include_input: bool) {
        for (l, layer) in self.layers.iter().enumerate() {
            self.decorrelators[l] = if l == 0 && !include_input {
                None
            } else {
                Some(Matrix::identity(layer.weights.cols()))
            };
        }
    }

    pub fn set_decorrelator(&mut self, layer: usize, r: Option<Matrix>) -> Result<()> {
        if let Some(r) = &r {
            let n = self.layers[layer].weights.cols();
            check_len("decorrelator rows", n, r.rows())?;
            check_len("decorrelator cols", n, r.cols())?;
        }
        self.decorrelators[layer] = r;
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn decorrelator(&self, layer: usize) -> Option<&Matrix> {
        self.decorrelators[layer].as_ref()
    }

    pub fn decorrelator_mut(&mut self, layer: usize) -> Option<&mut Matrix> {
        self.decorrelators[layer].as_mut()
    }

    pub fn has_decorrelation(&self) -> bool {
        self.decorrelators.iter().any(Option::is_some)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows())
    }

    /// Output width of every layer.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weights.rows()).collect()
    }

    /// Input width followed by every layer's output width.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layer_sizes());
        w
    }

    /// Total number of units across all layers.
    pub fn total_units(&self) -> usize {
        self.layer_sizes().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite())
            && self.decorrelators.iter().flatten().all(Matrix::is_finite)
    }
}

/// Uniform fan-in scaled initialization: every weight of a layer with fan-in
/// `n` is drawn from `U(−√(6/n), √(6/n))`. Decorrelation starts disabled.
pub fn init_weights<R: Rng + ?Sized>(
    widths: &[usize],
    hidden: Activation,
    output: Activation,
    rng: &mut R,
) -> Result<NetworkState> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "need at least two positive widths, got {widths:?}"
        )));
    }
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (l, w) in widths.windows(2).enumerate() {
        let bound = (6.0 / w[0] as f64).sqrt();
        let weights = Matrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound));
        let activation = if l + 2 == widths.len() { output } else { hidden };
        layers.push(Layer {
            weights,
            activation,
        });
    }
    NetworkState::new(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Input actually fed to `W_l`: decorrelated when the layer has `R_l`.
    pub input_used: Vector,
    /// `a_l`, or `ã_l + ε_l` for a noisy pass.
    pub pre_activation: Vector,
    pub output: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("trace has layers").output
    }

    pub fn total_units(&self) -> usize {
        self.layers.iter().map(|l| l.pre_activation.len()).sum()
    }
}

/// `R · x`.
pub fn decorrelate(r: &Matrix, x: &[f64]) -> Result<Vector> {
    r.matvec(x)
}

pub fn forward_clean(net: &NetworkState, x0: &[f64]) -> Result<ForwardTrace> {
    forward(net, x0, None)
}

pub fn forward_noisy(net: &NetworkState, x0: &[f64], noise: &[Vec<f64>]) -> Result<ForwardTrace> {
    check_len("noise layers", net.layers.len(), noise.len())?;
    for (l, n) in net.layers.iter().zip(noise) {
        check_len("noise width", l.weights.rows(), n.len())?;
    }
    forward(net, x0, Some(noise))
}

fn forward(net: &NetworkState, x0: &[f64], noise: Option<&[Vec<f64>]>) -> Result<ForwardTrace> {
    check_len("network input", net.input_dim(), x0.len())?;
    let mut traces = Vec::with_capacity(net.layers.len());
    let mut x: Vector = x0.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        let input_used = match &net.decorrelators[l] {
            Some(r) => r.matvec(&x)?,
            None => x,
        };
        let mut pre = layer.weights.matvec(&input_used)?;
        if let Some(noise) = noise {
            for (a, e) in pre.iter_mut().zip(&noise[l]) {
                *a += e;
            }
        }
        let output: Vector = pre.iter().map(|&a| layer.activation.apply(a)).collect();
        x = output.clone();
        traces.push(LayerTrace {
            input_used,
            pre_activation: pre,
            output,
        });
    }
    Ok(ForwardTrace { layers: traces })
}

/// Off-diagonal second-moment matrix `⟨x̄x̄ᵀ − diag(x̄²)⟩` of a batch; the
/// diagonal is exactly zero.
pub fn decorrelation_matrix(batch: &[Vec<f64>]) -> Result<Matrix> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let n = first.len();
    let mut m = Matrix::zeros(n, n);
    for x in batch {
        check_len("decorrelation batch", n, x.len())?;
        m.add_outer(1.0, x, x)?;
    }
    m.scale(1.0 / batch.len() as f64);
    for i in 0..n {
        m[(i, i)] = 0.0;
    }
    Ok(m)
}

/// `R − ε·M·R` with `M` from [`decorrelation_matrix`]. Every `x̄` in the
/// batch must have been computed with the current `R`.
pub fn decorrelation_update(r: &Matrix, batch: &[Vec<f64>], eps: f64) -> Result<Matrix> {
    check_eps(eps)?;
    let m = decorrelation_matrix(batch)?;
    check_len("decorrelator size", r.rows(), m.rows())?;
    let mut out = r.clone();
    gemm(-eps, &m, false, r, false, 1.0, &mut out)?;
    Ok(out)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "decorrelation rate must be > 0, got {eps}"
        )))
    }
}

/// Batched form of [`decorrelation_update`] over a row-per-sample matrix of
/// decorrelated inputs. Updates `r` in place.
pub fn decorrelation_update_batch(r: &mut Matrix, xbar: &Matrix, eps: f64) -> Result<()> {
    check_eps(eps)?;
    let (b, n) = xbar.shape();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    check_len("decorrelator size", r.rows(), n)?;
    let inv_b = 1.0 / b as f64;
    let mut mr = Matrix::zeros(n, n);
    if b < n {
        // M·R = (1/B)·X̄ᵀ(X̄R) − D·R: two rank-B products instead of n³ work.
        let mut y = Matrix::zeros(b, n);
        gemm(1.0, xbar, false, r, false, 0.0, &mut y)?;
        gemm(inv_b, xbar, true, &y, false, 0.0, &mut mr)?;
        for i in 0..n {
            let d: f64 = (0..b).map(|s| xbar[(s, i)] * xbar[(s, i)]).sum::<f64>() * inv_b;
            if d != 0.0 {
                let ri = r.row(i);
                for (o, &v) in mr.row_mut(i).iter_mut().zip(ri) {
                    *o -= d * v;
                }
            }
        }
    } else {
        let mut m = Matrix::zeros(n, n);
        gemm(inv_b, xbar, true, xbar, false, 0.0, &mut m)?;
        for i in 0..n {
            m[(i, i)] = 0.0;
        }
        gemm(1.0, &m, false, r, false, 0.0, &mut mr)?;
    }
    r.add_scaled(-eps, &mr)
}

/// Frobenius norm of the off-diagonal part of the empirical (mean-removed)
/// covariance of the rows of `x`.
pub fn off_diagonal_covariance(x: &Matrix) -> Result<f64> {
    let (b, n) = x.shape();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut centered = x.clone();
    for j in 0..n {
        let m = (0..b).map(|s| x[(s, j)]).sum::<f64>() / b as f64;
        for s in 0..b {
            centered[(s, j)] -= m;
        }
    }
    let mut cov = Matrix::zeros(n, n);
    gemm(1.0 / b as f64, &centered, true, &centered, false, 0.0, &mut cov)?;
    Ok(cov.off_diagonal_sq().sqrt())
}

#[derive(Debug, Clone)]
pub struct BatchLayerTrace {
    pub input_used: Matrix,
    pub pre_activation: Matrix,
    pub output: Matrix,
}

/// Row-per-sample counterpart of [`ForwardTrace`].
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub layers: Vec<BatchLayerTrace>,
}

impl BatchTrace {
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("trace has layers").output
    }

    /// Per-sample view, for cross-checking against the vector path.
    pub fn sample(&self, s: usize) -> ForwardTrace {
        ForwardTrace {
            layers: self
                .layers
                .iter()
                .map(|l| LayerTrace {
                    input_used: l.input_used.row(s).to_vec(),
                    pre_activation: l.pre_activation.row(s).to_vec(),
                    output: l.output.row(s).to_vec(),
                })
                .collect(),
        }
    }
}

/// Applies the first layer's decorrelator (if any) to a batch of inputs.
pub fn first_layer_input(net: &NetworkState, x: &Matrix) -> Result<Matrix> {
    check_len("network input", net.input_dim(), x.cols())?;
    Ok(match &net.decorrelators[0] {
        Some(r) => {
            let mut out = Matrix::zeros(x.rows(), r.rows());
            gemm(1.0, x, false, r, true, 0.0, &mut out)?;
            out
        }
        None => x.clone(),
    })
}

/// Batched forward pass. `noise`, if given, holds one `batch × width`
/// matrix per layer.
pub fn forward_batch(net: &NetworkState, x: &Matrix, noise: Option<&[Matrix]>) -> Result<BatchTrace> {
    let first = first_layer_input(net, x)?;
    forward_batch_from(net, first, noise)
}

/// Batched forward pass from an already decorrelated first-layer input, so
/// two passes over the same batch can share it.
pub fn forward_batch_from(net: &NetworkState, first_input: Matrix, noise: Option<&[Matrix]>) -> Result<BatchTrace> {
    let b = first_input.rows();
    if let Some(noise) = noise {
        check_len("noise layers", net.layers.len(), noise.len())?;
        for (l, n) in net.layers.iter().zip(noise) {
            check_len("noise rows", b, n.rows())?;
            check_len("noise width", l.weights.rows(), n.cols())?;
        }
    }
    let mut traces: Vec<BatchLayerTrace> = Vec::with_capacity(net.layers.len());
    let mut input_used = first_input;
    for (l, layer) in net.layers.iter().enumerate() {
        if l > 0 {
            let prev = &traces[l - 1].output;
            input_used = match &net.decorrelators[l] {
                Some(r) => {
                    let mut out = Matrix::zeros(b, r.rows());
                    gemm(1.0, prev, false, r, true, 0.0, &mut out)?;
                    out
                }
                None => prev.clone(),
            };
        }
        let mut pre = match noise {
            Some(noise) => noise[l].clone(),
            None => Matrix::zeros(b, layer.weights.rows()),
        };
        let beta = if noise.is_some() { 1.0 } else { 0.0 };
        gemm(1.0, &input_used, false, &layer.weights, true, beta, &mut pre)?;
        let mut output = pre.clone();
        let act = layer.activation;
        if act != Activation::Linear {
            output.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        traces.push(BatchLayerTrace {
            input_used,
            pre_activation: pre,
            output,
        });
        input_used = Matrix::zeros(0, 0);
    }
    Ok(BatchTrace { layers: traces })
}
