use std::fmt;
use std::str::FromStr;

use super::regression::weighted_gram;
use super::{sigmoid, softplus, Dataset, Objective, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::extend;
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Hidden-layer nonlinearity. All variants are twice differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Identity => s,
            Activation::Tanh => s.tanh(),
            Activation::Sigmoid => sigmoid(s),
            Activation::Softplus => softplus(s),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - s.tanh().powi(2),
            Activation::Sigmoid => {
                let y = sigmoid(s);
                y * (1.0 - y)
            }
            Activation::Softplus => sigmoid(s),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softplus" => Ok(Activation::Softplus),
            "relu" => Err(Error::validation(
                "relu has no second derivative at 0; use tanh, sigmoid or softplus",
            )),
            other => Err(Error::validation(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-example loss on the network output.
///
/// `CrossEntropy` treats every output as an independent logit:
/// `Σ_k ln(1 + e^{ŷ_k}) − y_k ŷ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

impl LossKind {
    pub fn value(self, out: &[f64], y: &[f64]) -> f64 {
        match self {
            LossKind::SquaredError => {
                0.5 * out
                    .iter()
                    .zip(y)
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
            }
            LossKind::CrossEntropy => out.iter().zip(y).map(|(&z, &t)| softplus(z) - t * z).sum(),
        }
    }

    pub fn derivative(self, out: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            LossKind::SquaredError => out.iter().zip(y).map(|(o, t)| o - t).collect(),
            LossKind::CrossEntropy => out.iter().zip(y).map(|(&z, &t)| sigmoid(z) - t).collect(),
        }
    }

    /// `∂²L/∂ŷ_k²`; the loss is separable across outputs.
    pub fn second_derivative(self, out: &[f64], k: usize) -> f64 {
        match self {
            LossKind::SquaredError => 1.0,
            LossKind::CrossEntropy => sigmoid(out[k]) * sigmoid(-out[k]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_error" | "mse" => Ok(LossKind::SquaredError),
            "cross_entropy" | "bce" => Ok(LossKind::CrossEntropy),
            other => Err(Error::validation(format!("unknown loss '{other}'"))),
        }
    }
}

/// Architecture of a fully connected network.
///
/// Layers are numbered `1..=L`; layer `ℓ` maps `h^(ℓ-1)` (width
/// `widths[ℓ-1]`) to `h^(ℓ)` (width `widths[ℓ]`), with `h^(0) = x`. Hidden
/// layers apply `activation`; the output layer is affine and the loss acts on
/// its pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
    loss: LossKind,
}

/// Pre-activations and activations of one forward pass.
struct Trace {
    /// `pre[ℓ - 1]` is `a^(ℓ)`.
    pre: Vec<Vec<f64>>,
    /// `acts[ℓ]` is `h^(ℓ)`; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
}

/// Hessian of the mean loss with respect to one unit's `ŵ = [b_i, w_iᵀ]`,
/// assembled as `H_e · diag(S) · H_eᵀ`.
#[derive(Debug, Clone)]
pub struct LayerHessianParts {
    /// `[eᵀ; H]` built from the layer inputs `h_j^(ℓ-1)`.
    pub h_e: Matrix,
    /// `S_jj = L''(ŵᵀĥ_j) / N`.
    pub s: Vec<f64>,
    pub hessian: Matrix,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, loss: LossKind) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::validation("a network needs at least one layer"));
        }
        if widths.contains(&0) {
            return Err(Error::validation("layer widths must be at least 1"));
        }
        Ok(Self {
            widths,
            activation,
            loss,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    /// Number of affine layers `L`.
    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Offset of `W^(ℓ)` in the flat parameter vector.
    pub fn weight_offset(&self, layer: usize) -> usize {
        self.widths[..layer]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Offset of `b^(ℓ)` in the flat parameter vector.
    pub fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.widths[layer - 1] * self.widths[layer]
    }

    fn check_unit(&self, layer: usize, unit: usize) -> Result<()> {
        if layer == 0 || layer > self.layers() {
            return Err(Error::validation(format!(
                "layer {layer} out of range 1..={}",
                self.layers()
            )));
        }
        if unit >= self.widths[layer] {
            return Err(Error::validation(format!(
                "unit {unit} out of range for layer {layer} of width {}",
                self.widths[layer]
            )));
        }
        Ok(())
    }

    /// Flat indices of `[b_i^(ℓ), w_i^(ℓ)]` for layer `ℓ`, unit `i` (0-based).
    pub fn unit_param_indices(&self, layer: usize, unit: usize) -> Result<Vec<usize>> {
        self.check_unit(layer, unit)?;
        let fan_in = self.widths[layer - 1];
        let w0 = self.weight_offset(layer) + unit * fan_in;
        Ok(std::iter::once(self.bias_offset(layer) + unit)
            .chain(w0..w0 + fan_in)
            .collect())
    }

    /// Normal weights with variance `1/fan_in`, zero biases.
    pub fn init_params(&self, rng: &mut SplitMix64) -> ParamVector {
        let mut p = vec![0.0; self.param_count()];
        for layer in 1..=self.layers() {
            let fan_in = self.widths[layer - 1];
            let scale = 1.0 / (fan_in as f64).sqrt();
            let off = self.weight_offset(layer);
            for w in &mut p[off..off + fan_in * self.widths[layer]] {
                *w = scale * rng.normal();
            }
        }
        p
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::validation(format!(
                "parameter vector has length {}, network expects {}",
                p.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.features() != self.widths[0] {
            return Err(Error::validation(format!(
                "data has {} features, network input width is {}",
                data.features(),
                self.widths[0]
            )));
        }
        let out = self.widths[self.layers()];
        if data.outputs() != out {
            return Err(Error::validation(format!(
                "data has {} target rows, network output width is {out}",
                data.outputs()
            )));
        }
        Ok(())
    }

    /// `W^(ℓ) h + b^(ℓ)`.
    fn affine(&self, p: &[f64], layer: usize, h: &[f64]) -> Vec<f64> {
        let fan_in = self.widths[layer - 1];
        let w = &p[self.weight_offset(layer)..];
        let b = &p[self.bias_offset(layer)..];
        (0..self.widths[layer])
            .map(|i| {
                b[i] + w[i * fan_in..(i + 1) * fan_in]
                    .iter()
                    .zip(h)
                    .map(|(a, x)| a * x)
                    .sum::<f64>()
            })
            .collect()
    }

    fn activate(&self, layer: usize, a: &[f64]) -> Vec<f64> {
        if layer == self.layers() {
            a.to_vec()
        } else {
            a.iter().map(|&s| self.activation.apply(s)).collect()
        }
    }

    fn forward(&self, p: &[f64], x: &[f64]) -> Trace {
        let mut pre = Vec::with_capacity(self.layers());
        let mut acts = vec![x.to_vec()];
        for layer in 1..=self.layers() {
            let a = self.affine(p, layer, &acts[layer - 1]);
            acts.push(self.activate(layer, &a));
            pre.push(a);
        }
        Trace { pre, acts }
    }

    /// Runs the network from a given `a^(ℓ)` and returns the pre-activations
    /// of layers `ℓ..=L`.
    fn forward_from(&self, p: &[f64], layer: usize, a: Vec<f64>) -> Vec<Vec<f64>> {
        let mut pre = vec![a];
        for next in layer + 1..=self.layers() {
            let h = self.activate(next - 1, pre.last().expect("nonempty"));
            pre.push(self.affine(p, next, &h));
        }
        pre
    }

    /// `∂L/∂a^(k)` for `k = from..=L`, given pre-activations of those layers.
    fn backward(&self, p: &[f64], from: usize, pre: &[Vec<f64>], y: &[f64]) -> Vec<Vec<f64>> {
        let depth = self.layers();
        let mut deltas = vec![Vec::new(); depth - from + 1];
        deltas[depth - from] = self.loss.derivative(&pre[depth - from], y);
        for layer in (from + 1..=depth).rev() {
            let fan_in = self.widths[layer - 1];
            let w = &p[self.weight_offset(layer)..];
            let upper = &deltas[layer - from];
            let below = &pre[layer - 1 - from];
            let d: Vec<f64> = (0..fan_in)
                .map(|k| {
                    let back: f64 = upper
                        .iter()
                        .enumerate()
                        .map(|(i, di)| w[i * fan_in + k] * di)
                        .sum();
                    back * self.activation.derivative(below[k])
                })
                .collect();
            deltas[layer - 1 - from] = d;
        }
        deltas
    }

    pub fn loss_on(&self, p: &[f64], data: &Dataset) -> Result<f64> {
        self.check_params(p)?;
        self.check_data(data)?;
        let total: f64 = (0..data.samples())
            .map(|j| {
                let trace = self.forward(p, &data.input(j));
                self.loss
                    .value(&trace.pre[self.layers() - 1], &data.target(j))
            })
            .sum();
        Ok(total / data.samples() as f64)
    }

    /// Backpropagated gradient of the mean loss.
    pub fn gradient_on(&self, p: &[f64], data: &Dataset) -> Result<ParamVector> {
        self.check_params(p)?;
        self.check_data(data)?;
        let big_n = data.samples() as f64;
        let mut g = vec![0.0; p.len()];
        for j in 0..data.samples() {
            let trace = self.forward(p, &data.input(j));
            let deltas = self.backward(p, 1, &trace.pre, &data.target(j));
            for layer in 1..=self.layers() {
                let fan_in = self.widths[layer - 1];
                let h = &trace.acts[layer - 1];
                let w0 = self.weight_offset(layer);
                let b0 = self.bias_offset(layer);
                for (i, &d) in deltas[layer - 1].iter().enumerate() {
                    let d = d / big_n;
                    g[b0 + i] += d;
                    for (k, &hk) in h.iter().enumerate() {
                        g[w0 + i * fan_in + k] += d * hk;
                    }
                }
            }
        }
        Ok(g)
    }

    /// Network outputs, one column per sample.
    pub fn predict(&self, p: &[f64], inputs: &Matrix) -> Result<Matrix> {
        self.check_params(p)?;
        let out = self.widths[self.layers()];
        let cols: Vec<Vec<f64>> = (0..inputs.cols())
            .map(|j| {
                self.forward(p, &inputs.column(j))
                    .pre
                    .pop()
                    .expect("nonempty")
            })
            .collect();
        Ok(Matrix::from_fn(out, inputs.cols(), |i, j| cols[j][i]))
    }

    /// Inputs `H = [h_1^(ℓ-1), …, h_N^(ℓ-1)]` seen by layer `ℓ`.
    pub fn layer_inputs(&self, p: &[f64], data: &Dataset, layer: usize) -> Result<Matrix> {
        self.check_params(p)?;
        self.check_data(data)?;
        self.check_unit(layer, 0)?;
        let cols: Vec<Vec<f64>> = (0..data.samples())
            .map(|j| self.forward(p, &data.input(j)).acts.swap_remove(layer - 1))
            .collect();
        Ok(Matrix::from_fn(
            self.widths[layer - 1],
            data.samples(),
            |i, j| cols[j][i],
        ))
    }

    /// Hessian of the mean loss in one unit's `[b, w]`, in the structured form
    /// `H_e S H_eᵀ`.
    ///
    /// `L''` is the second derivative of each example's loss along that unit's
    /// pre-activation. It is exact for the output layer; hidden layers use a
    /// five-point stencil (step `1e-3`) on the backpropagated `∂L/∂a`.
    pub fn layer_hessian(
        &self,
        p: &[f64],
        data: &Dataset,
        layer: usize,
        unit: usize,
    ) -> Result<LayerHessianParts> {
        self.check_params(p)?;
        self.check_data(data)?;
        self.check_unit(layer, unit)?;
        let big_n = data.samples() as f64;
        let mut inputs = Vec::with_capacity(data.samples());
        let mut s = Vec::with_capacity(data.samples());
        for j in 0..data.samples() {
            let mut trace = self.forward(p, &data.input(j));
            let y = data.target(j);
            let a_layer = trace.pre.swap_remove(layer - 1);
            let a = a_layer[unit];
            let step = 1e-3;
            let slope = |shift: f64| {
                let mut shifted = a_layer.clone();
                shifted[unit] = a + shift;
                let pre = self.forward_from(p, layer, shifted);
                self.backward(p, layer, &pre, &y)[0][unit]
            };
            let second = if layer == self.layers() {
                self.loss.second_derivative(&a_layer, unit)
            } else {
                (8.0 * (slope(step) - slope(-step)) - (slope(2.0 * step) - slope(-2.0 * step)))
                    / (12.0 * step)
            };
            if !second.is_finite() {
                return Err(Error::numerical(format!(
                    "second derivative at sample {j} is not finite"
                )));
            }
            s.push(second / big_n);
            inputs.push(trace.acts.swap_remove(layer - 1));
        }
        let h = Matrix::from_fn(self.widths[layer - 1], data.samples(), |i, j| inputs[j][i]);
        let h_e = extend(&h)?;
        let hessian = weighted_gram(&h_e, &s);
        Ok(LayerHessianParts { h_e, s, hessian })
    }
}

/// A network bound to its training data.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    data: Dataset,
}

impl Mlp {
    pub fn new(spec: MlpSpec, data: Dataset) -> Result<Self> {
        spec.check_data(&data)?;
        if spec.loss == LossKind::CrossEntropy
            && data
                .targets()
                .as_slice()
                .iter()
                .any(|&y| !(0.0..=1.0).contains(&y))
        {
            return Err(Error::validation(
                "cross-entropy targets must lie in [0, 1]",
            ));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn layer_hessian(&self, p: &[f64], layer: usize, unit: usize) -> Result<LayerHessianParts> {
        self.spec.layer_hessian(p, &self.data, layer, unit)
    }
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss(&self, p: &[f64]) -> Result<f64> {
        self.spec.loss_on(p, &self.data)
    }

    fn gradient(&self, p: &[f64]) -> Result<ParamVector> {
        self.spec.gradient_on(p, &self.data)
    }
}
