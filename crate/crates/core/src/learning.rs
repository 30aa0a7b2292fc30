//! Weight-update rules, losses and optimizers.
//!
//! All update sets follow the descent convention: the optimizer subtracts
//! them (`W ← W − η·ΔW`), so a BP update is the loss gradient itself.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::network::{BatchTrace, ForwardTrace, NetworkState};
use crate::numerics::{argmax, dot, gemm, sq_norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

const PROB_FLOOR: f64 = 1e-12;

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

fn loss_unchecked(kind: LossKind, target: &[f64], output: &[f64]) -> f64 {
    match kind {
        LossKind::SquaredError => target.iter().zip(output).map(|(t, y)| (t - y) * (t - y)).sum(),
        LossKind::CrossEntropy => {
            let m = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = output.iter().map(|&l| (l - m).exp()).sum();
            target
                .iter()
                .zip(output)
                .filter(|(t, _)| **t != 0.0)
                .map(|(t, &l)| -t * ((l - m).exp() / z).max(PROB_FLOOR).ln())
                .sum()
        }
    }
}

/// Squared error `Σ(y* − y)²`, or cross-entropy of `softmax(output)` against
/// a one-hot (or probability) target.
pub fn loss(kind: LossKind, target: &[f64], output: &[f64]) -> Result<f64> {
    check_len("loss target", output.len(), target.len())?;
    Ok(loss_unchecked(kind, target, output))
}

/// `∂L/∂output`.
pub fn loss_grad(kind: LossKind, target: &[f64], output: &[f64]) -> Result<Vec<f64>> {
    check_len("loss target", output.len(), target.len())?;
    Ok(match kind {
        LossKind::SquaredError => output.iter().zip(target).map(|(y, t)| 2.0 * (y - t)).collect(),
        LossKind::CrossEntropy => {
            let mass: f64 = target.iter().sum();
            softmax(output).iter().zip(target).map(|(p, t)| mass * p - t).collect()
        }
    })
}

/// Per-row losses of a batch.
pub fn batch_losses(kind: LossKind, targets: &Matrix, outputs: &Matrix) -> Result<Vec<f64>> {
    check_len("batch targets rows", outputs.rows(), targets.rows())?;
    check_len("batch targets cols", outputs.cols(), targets.cols())?;
    Ok((0..outputs.rows())
        .map(|s| loss_unchecked(kind, targets.row(s), outputs.row(s)))
        .collect())
}

fn batch_loss_grad(kind: LossKind, targets: &Matrix, outputs: &Matrix) -> Matrix {
    let mut g = outputs.clone();
    for s in 0..g.rows() {
        let t = targets.row(s);
        let row = g.row_mut(s);
        match kind {
            LossKind::SquaredError => {
                for (y, t) in row.iter_mut().zip(t) {
                    *y = 2.0 * (*y - t);
                }
            }
            LossKind::CrossEntropy => {
                let logits = row.to_vec();
                softmax_into(&logits, row);
                let mass: f64 = t.iter().sum();
                for (p, t) in row.iter_mut().zip(t) {
                    *p = mass * *p - t;
                }
            }
        }
    }
    g
}

/// Number of rows whose output argmax equals the target argmax.
pub fn correct_count(targets: &Matrix, outputs: &Matrix) -> usize {
    (0..outputs.rows())
        .filter(|&s| argmax(outputs.row(s)) == argmax(targets.row(s)))
        .count()
}

/// One `ΔW` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSet {
    pub layers: Vec<Matrix>,
}

impl UpdateSet {
    pub fn zeros_like(net: &NetworkState) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.layers.iter_mut().for_each(|m| m.scale(alpha));
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &UpdateSet) -> Result<()> {
        check_len("update layers", self.layers.len(), other.layers.len())?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(alpha, b)?;
        }
        Ok(())
    }

    fn check_against(&self, net: &NetworkState) -> Result<()> {
        check_len("update layers", net.layers().len(), self.layers.len())?;
        for (u, l) in self.layers.iter().zip(net.layers()) {
            check_len("update rows", l.weights.rows(), u.rows())?;
            check_len("update cols", l.weights.cols(), u.cols())?;
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers.iter().map(Matrix::frobenius_sq).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }
}

fn check_traces(a: &ForwardTrace, b: &ForwardTrace) -> Result<()> {
    check_len("trace layers", a.layers.len(), b.layers.len())?;
    for (x, y) in a.layers.iter().zip(&b.layers) {
        check_len("trace width", x.pre_activation.len(), y.pre_activation.len())?;
        check_len("trace input", x.input_used.len(), y.input_used.len())?;
    }
    Ok(())
}

/// Node perturbation: `ΔW_l = σ⁻²·ΔL·ε_l·x̄_{l−1}ᵀ` with `ΔL = L(noisy) − L(clean)`
/// and `x̄_{l−1}` taken from the clean pass.
pub fn np_update(
    clean: &ForwardTrace,
    noisy: &ForwardTrace,
    noise: &[Vec<f64>],
    sigma: f64,
    kind: LossKind,
    target: &[f64],
) -> Result<UpdateSet> {
    check_sigma(sigma)?;
    check_traces(clean, noisy)?;
    check_len("noise layers", clean.layers.len(), noise.len())?;
    let dl = loss(kind, target, noisy.output())? - loss(kind, target, clean.output())?;
    let c = dl / (sigma * sigma);
    let mut layers = Vec::with_capacity(noise.len());
    for (lt, eps) in clean.layers.iter().zip(noise) {
        check_len("noise width", lt.pre_activation.len(), eps.len())?;
        let mut m = Matrix::zeros(eps.len(), lt.input_used.len());
        m.add_outer(c, eps, &lt.input_used)?;
        layers.push(m);
    }
    Ok(UpdateSet { layers })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("noise sigma must be > 0, got {sigma}")))
    }
}

/// Which pass supplies the `x̄_{l−1}` factor of an ANP update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnpInput {
    #[default]
    Pass1,
    /// Average of the two passes' inputs.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnpOutcome {
    Applied(UpdateSet),
    /// Both passes produced identical pre-activations; there is no direction
    /// to normalize.
    Skipped,
}

/// Activity-based node perturbation:
/// `ΔW_l = N·ΔL·Δα_l/‖Δα‖²·x̄_{l−1}ᵀ`, with `Δα = α⁽¹⁾ − α⁽²⁾`,
/// `ΔL = L⁽¹⁾ − L⁽²⁾`, the norm over all layers and `N` the unit count.
pub fn anp_update(
    pass1: &ForwardTrace,
    pass2: &ForwardTrace,
    kind: LossKind,
    target: &[f64],
    input: AnpInput,
) -> Result<AnpOutcome> {
    check_traces(pass1, pass2)?;
    let dalpha: Vec<Vec<f64>> = pass1
        .layers
        .iter()
        .zip(&pass2.layers)
        .map(|(a, b)| a.pre_activation.iter().zip(&b.pre_activation).map(|(u, v)| u - v).collect())
        .collect();
    let denom: f64 = dalpha.iter().map(|d| sq_norm(d)).sum();
    if denom == 0.0 {
        return Ok(AnpOutcome::Skipped);
    }
    let n = pass1.total_units() as f64;
    let dl = loss(kind, target, pass1.output())? - loss(kind, target, pass2.output())?;
    let c = n * dl / denom;
    let mut layers = Vec::with_capacity(dalpha.len());
    for ((d, l1), l2) in dalpha.iter().zip(&pass1.layers).zip(&pass2.layers) {
        let x: Vec<f64> = match input {
            AnpInput::Pass1 => l1.input_used.clone(),
            AnpInput::Mean => l1.input_used.iter().zip(&l2.input_used).map(|(a, b)| 0.5 * (a + b)).collect(),
        };
        let mut m = Matrix::zeros(d.len(), x.len());
        m.add_outer(c, d, &x)?;
        layers.push(m);
    }
    Ok(AnpOutcome::Applied(UpdateSet { layers }))
}

/// Exact gradient of the loss for one sample, decorrelators held fixed.
pub fn bp_update(net: &NetworkState, x0: &[f64], target: &[f64], kind: LossKind) -> Result<UpdateSet> {
    let trace = crate::network::forward_clean(net, x0)?;
    let mut delta = loss_grad(kind, target, trace.output())?;
    let mut layers = vec![Matrix::zeros(0, 0); net.layers().len()];
    for l in (0..net.layers().len()).rev() {
        let layer = &net.layers()[l];
        let lt = &trace.layers[l];
        for (d, &a) in delta.iter_mut().zip(&lt.pre_activation) {
            *d *= layer.activation.derivative(a);
        }
        let mut g = Matrix::zeros(delta.len(), lt.input_used.len());
        g.add_outer(1.0, &delta, &lt.input_used)?;
        layers[l] = g;
        if l > 0 {
            delta = layer.weights.matvec_transposed(&delta)?;
            if let Some(r) = net.decorrelator(l) {
                delta = r.matvec_transposed(&delta)?;
            }
        }
    }
    Ok(UpdateSet { layers })
}

fn check_batch(trace: &BatchTrace, targets: &Matrix) -> Result<()> {
    check_len("batch targets rows", trace.output().rows(), targets.rows())?;
    check_len("batch targets cols", trace.output().cols(), targets.cols())?;
    if targets.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// `Σ_s c_s·D_s ⊗ X_s` over rows, as one GEMM: `(diag(c)·D)ᵀ·X`.
fn weighted_outer_sum(coef: &[f64], d: &Matrix, x: &Matrix) -> Result<Matrix> {
    let mut scaled = d.clone();
    for (s, &c) in coef.iter().enumerate() {
        scaled.row_mut(s).iter_mut().for_each(|v| *v *= c);
    }
    let mut out = Matrix::zeros(d.cols(), x.cols());
    gemm(1.0, &scaled, true, x, false, 0.0, &mut out)?;
    Ok(out)
}

/// Batch mean of [`np_update`]. `noise[l]` is `batch × width`.
pub fn np_update_batch(
    clean: &BatchTrace,
    noisy: &BatchTrace,
    noise: &[Matrix],
    sigma: f64,
    kind: LossKind,
    targets: &Matrix,
) -> Result<UpdateSet> {
    check_sigma(sigma)?;
    check_batch(clean, targets)?;
    check_batch(noisy, targets)?;
    check_len("noise layers", clean.layers.len(), noise.len())?;
    let b = targets.rows();
    let lc = batch_losses(kind, targets, clean.output())?;
    let ln = batch_losses(kind, targets, noisy.output())?;
    let coef: Vec<f64> = ln.iter().zip(&lc).map(|(n, c)| (n - c) / (sigma * sigma * b as f64)).collect();
    let layers = clean
        .layers
        .iter()
        .zip(noise)
        .map(|(lt, eps)| weighted_outer_sum(&coef, eps, &lt.input_used))
        .collect::<Result<_>>()?;
    Ok(UpdateSet { layers })
}

/// Batch-averaged ANP update and the number of skipped samples. Skipped
/// samples are left out of the average; `None` means every sample skipped.
pub fn anp_update_batch(
    pass1: &BatchTrace,
    pass2: &BatchTrace,
    kind: LossKind,
    targets: &Matrix,
    input: AnpInput,
) -> Result<(Option<UpdateSet>, usize)> {
    check_batch(pass1, targets)?;
    check_batch(pass2, targets)?;
    check_len("trace layers", pass1.layers.len(), pass2.layers.len())?;
    let b = targets.rows();
    let dalpha: Vec<Matrix> = pass1
        .layers
        .iter()
        .zip(&pass2.layers)
        .map(|(a, c)| {
            let mut d = a.pre_activation.clone();
            d.add_scaled(-1.0, &c.pre_activation)?;
            Ok(d)
        })
        .collect::<Result<_>>()?;
    let n_units: usize = dalpha.iter().map(Matrix::cols).sum();
    let l1 = batch_losses(kind, targets, pass1.output())?;
    let l2 = batch_losses(kind, targets, pass2.output())?;
    let mut coef = vec![0.0; b];
    let mut skipped = 0;
    for s in 0..b {
        let denom: f64 = dalpha.iter().map(|d| sq_norm(d.row(s))).sum();
        if denom == 0.0 {
            skipped += 1;
        } else {
            coef[s] = n_units as f64 * (l1[s] - l2[s]) / denom;
        }
    }
    if skipped == b {
        return Ok((None, skipped));
    }
    let used = (b - skipped) as f64;
    coef.iter_mut().for_each(|c| *c /= used);
    let mut layers = Vec::with_capacity(dalpha.len());
    for ((d, t1), t2) in dalpha.iter().zip(&pass1.layers).zip(&pass2.layers) {
        let m = match input {
            AnpInput::Pass1 => weighted_outer_sum(&coef, d, &t1.input_used)?,
            AnpInput::Mean => {
                let mut x = t1.input_used.clone();
                x.add_scaled(1.0, &t2.input_used)?;
                x.scale(0.5);
                weighted_outer_sum(&coef, d, &x)?
            }
        };
        layers.push(m);
    }
    Ok((Some(UpdateSet { layers }), skipped))
}

/// Batch-mean gradient from a clean batch trace.
pub fn bp_update_batch(net: &NetworkState, trace: &BatchTrace, targets: &Matrix, kind: LossKind) -> Result<UpdateSet> {
    check_batch(trace, targets)?;
    check_len("trace layers", net.layers().len(), trace.layers.len())?;
    let b = targets.rows();
    let inv_b = 1.0 / b as f64;
    let mut delta = batch_loss_grad(kind, targets, trace.output());
    let mut layers = vec![Matrix::zeros(0, 0); net.layers().len()];
    for l in (0..net.layers().len()).rev() {
        let layer = &net.layers()[l];
        let lt = &trace.layers[l];
        let act = layer.activation;
        for (d, &a) in delta.as_mut_slice().iter_mut().zip(lt.pre_activation.as_slice()) {
            *d *= act.derivative(a);
        }
        let mut g = Matrix::zeros(delta.cols(), lt.input_used.cols());
        gemm(inv_b, &delta, true, &lt.input_used, false, 0.0, &mut g)?;
        layers[l] = g;
        if l > 0 {
            let mut back = Matrix::zeros(b, layer.weights.cols());
            gemm(1.0, &delta, false, &layer.weights, false, 0.0, &mut back)?;
            if let Some(r) = net.decorrelator(l) {
                let mut through = Matrix::zeros(b, r.cols());
                gemm(1.0, &back, false, r, false, 0.0, &mut through)?;
                back = through;
            }
            delta = back;
        }
    }
    Ok(UpdateSet { layers })
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("learning rate must be > 0, got {eta}")))
    }
}

/// `W ← W − η·ΔW`.
pub fn sgd_step(net: &mut NetworkState, updates: &UpdateSet, eta: f64) -> Result<()> {
    check_eta(eta)?;
    updates.check_against(net)?;
    for (layer, u) in net.layers_mut().iter_mut().zip(&updates.layers) {
        layer.weights.add_scaled(-eta, u)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &NetworkState) -> Self {
        let sizes: Vec<usize> = net.layers().iter().map(|l| l.weights.as_slice().len()).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam step using `updates` as the gradient.
    pub fn step(&mut self, updates: &UpdateSet, eta: f64, net: &mut NetworkState) -> Result<()> {
        check_eta(eta)?;
        updates.check_against(net)?;
        check_len("adam layers", self.m.len(), updates.layers.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eh) = (self.beta1, self.beta2, self.eps_hat);
        for (((layer, u), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&updates.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(u.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= eta * (*m / c1) / ((*v / c2).sqrt() + eh);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Plain,
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Plain,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &NetworkState) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(net)),
            OptimizerKind::Plain => Optimizer::Plain,
        }
    }

    pub fn step(&mut self, updates: &UpdateSet, eta: f64, net: &mut NetworkState) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(updates, eta, net),
            Optimizer::Plain => sgd_step(net, updates, eta),
        }
    }
}

/// Cosine similarity of the flattened update sets.
pub fn alignment(a: &UpdateSet, b: &UpdateSet) -> Result<f64> {
    check_len("alignment layers", a.layers.len(), b.layers.len())?;
    let mut ab = 0.0;
    for (x, y) in a.layers.iter().zip(&b.layers) {
        check_len("alignment shape", x.as_slice().len(), y.as_slice().len())?;
        ab += dot(x.as_slice(), y.as_slice());
    }
    let (na, nb) = (a.sq_norm(), b.sq_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroUpdate);
    }
    Ok((ab / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
