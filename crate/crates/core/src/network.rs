//! Feedforward layers, the hidden map ξ, and the discrete one-to-many RNN.
//!
//! A Class-II network is `a⁰ = φⁱⁿ(x)`, `aᵗ⁺¹ = ξ(aᵗ)`, `yᵗ = softmax(W_y aᵗ + b_y)`.
//! Class I is the special case where ξ has a single layer; there is no separate
//! code path for it (see [`MlpParams::single`]).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;

/// Version written into model files. Bump on incompatible layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => ActivationKind::Identity,
            "relu" => ActivationKind::Relu,
            "tanh" => ActivationKind::Tanh,
            "sigmoid" => ActivationKind::Sigmoid,
            "softmax" => ActivationKind::Softmax,
            _ => return None,
        })
    }

    /// Applies the activation without validation. Softmax of an empty slice is a no-op.
    #[inline]
    pub fn apply_in_place(self, v: &mut [f64]) {
        match self {
            ActivationKind::Identity => {}
            ActivationKind::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            ActivationKind::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            ActivationKind::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
            ActivationKind::Softmax => softmax_in_place(v),
        }
    }

    /// Back-propagates `grad` (w.r.t. the activation output) to the pre-activation,
    /// given the pre-activation `pre` and output `out`. Overwrites `grad`.
    #[inline]
    pub(crate) fn backprop_in_place(self, pre: &[f64], out: &[f64], grad: &mut [f64]) {
        match self {
            ActivationKind::Identity => {}
            ActivationKind::Relu => {
                for (g, &u) in grad.iter_mut().zip(pre) {
                    if u <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            ActivationKind::Tanh => {
                for (g, &t) in grad.iter_mut().zip(out) {
                    *g *= 1.0 - t * t;
                }
            }
            ActivationKind::Sigmoid => {
                for (g, &s) in grad.iter_mut().zip(out) {
                    *g *= s * (1.0 - s);
                }
            }
            ActivationKind::Softmax => {
                let inner: f64 = grad.iter().zip(out).map(|(g, s)| g * s).sum();
                for (g, &s) in grad.iter_mut().zip(out) {
                    *g = s * (*g - inner);
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
#[inline]
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(zₖ)`, computed with a max shift.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn activation_apply(kind: ActivationKind, v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("activation input"));
    }
    if kind == ActivationKind::Softmax && v.is_empty() {
        return Err(Error::Dimension {
            context: "softmax input (length >= 1)",
            expected: 1,
            actual: 0,
        });
    }
    let mut out = v.to_vec();
    kind.apply_in_place(&mut out);
    Ok(out)
}

/// One dense layer `x ↦ σ(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct LayerParams {
    weights: Matrix,
    bias: Vec<f64>,
    activation: ActivationKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRepr {
    weights: Matrix,
    bias: Vec<f64>,
    activation: ActivationKind,
}

impl TryFrom<LayerRepr> for LayerParams {
    type Error = Error;
    fn try_from(r: LayerRepr) -> Result<Self> {
        LayerParams::new(r.weights, r.bias, r.activation)
    }
}

impl From<LayerParams> for LayerRepr {
    fn from(l: LayerParams) -> Self {
        LayerRepr {
            weights: l.weights,
            bias: l.bias,
            activation: l.activation,
        }
    }
}

impl LayerParams {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: ActivationKind) -> Result<Self> {
        check_dim("layer bias length", weights.rows(), bias.len())?;
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("layer parameters"));
        }
        Ok(LayerParams {
            weights,
            bias,
            activation,
        })
    }

    /// Identity weights, zero bias, identity activation.
    pub fn identity(n: usize) -> Self {
        LayerParams {
            weights: Matrix::identity(n),
            bias: vec![0.0; n],
            activation: ActivationKind::Identity,
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Writes `W x + b` into `out`.
    #[inline]
    pub(crate) fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        self.weights.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }

    #[inline]
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.affine_into(x, out);
        self.activation.apply_in_place(out);
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("layer input", self.d_in(), x.len())?;
        let mut out = vec![0.0; self.d_out()];
        self.affine_into(x, &mut out);
        activation_apply(self.activation, &out)
    }
}

pub fn layer_apply(layer: &LayerParams, x: &[f64]) -> Result<Vec<f64>> {
    layer.apply(x)
}

/// The hidden map ξ as a composition of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerParams>", into = "Vec<LayerParams>")]
pub struct MlpParams {
    layers: Vec<LayerParams>,
}

impl TryFrom<Vec<LayerParams>> for MlpParams {
    type Error = Error;
    fn try_from(layers: Vec<LayerParams>) -> Result<Self> {
        MlpParams::new(layers)
    }
}

impl From<MlpParams> for Vec<LayerParams> {
    fn from(m: MlpParams) -> Self {
        m.layers
    }
}

impl MlpParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        let (first, last) = match (layers.first(), layers.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Config("hidden map needs at least one layer".into())),
        };
        for pair in layers.windows(2) {
            check_dim("consecutive hidden layers", pair[0].d_out(), pair[1].d_in())?;
        }
        check_dim("hidden map output (d_L = d_0)", first.d_in(), last.d_out())?;
        Ok(MlpParams { layers })
    }

    /// A one-layer hidden map `a ↦ σ_h(W_a a + b_a)`, i.e. a Class-I network.
    pub fn single(layer: LayerParams) -> Result<Self> {
        MlpParams::new(vec![layer])
    }

    pub fn identity(n: usize) -> Self {
        MlpParams {
            layers: vec![LayerParams::identity(n)],
        }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.apply(&h)?;
        }
        Ok(h)
    }

    /// Unchecked forward pass, reusing `scratch` between layers.
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        if self.layers.len() == 1 {
            self.layers[0].forward_into(x, out);
            return;
        }
        scratch.clear();
        scratch.extend_from_slice(x);
        let mut next = Vec::new();
        for layer in &self.layers {
            next.resize(layer.d_out(), 0.0);
            layer.forward_into(scratch, &mut next);
            std::mem::swap(scratch, &mut next);
        }
        out.copy_from_slice(scratch);
    }
}

pub fn mlp_apply(theta: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    theta.apply(x)
}

/// All parameters of an RNN ODE classifier plus its time discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnOdeSpec {
    embed: LayerParams,
    hidden: MlpParams,
    readout: LayerParams,
    tau: f64,
    horizon: f64,
    n_steps: usize,
}

impl RnnOdeSpec {
    /// `tau` is derived as `horizon / n_steps`.
    pub fn new(
        embed: LayerParams,
        hidden: MlpParams,
        readout: LayerParams,
        horizon: f64,
        n_steps: usize,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        check_dim("embedding output vs hidden input", embed.d_out(), hidden.d_in())?;
        check_dim("hidden output vs readout input", hidden.d_out(), readout.d_in())?;
        if readout.activation != ActivationKind::Softmax {
            return Err(Error::Config(format!(
                "readout activation must be softmax, got {}",
                readout.activation.name()
            )));
        }
        if readout.d_out() == 0 {
            return Err(Error::Config("readout needs at least one class".into()));
        }
        Ok(RnnOdeSpec {
            embed,
            hidden,
            readout,
            tau: horizon / n_steps as f64,
            horizon,
            n_steps,
        })
    }

    pub fn embed(&self) -> &LayerParams {
        &self.embed
    }

    pub fn hidden(&self) -> &MlpParams {
        &self.hidden
    }

    pub fn readout(&self) -> &LayerParams {
        &self.readout
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Input dimension M.
    pub fn input_dim(&self) -> usize {
        self.embed.d_in()
    }

    /// Hidden state dimension d₀ = d_L.
    pub fn state_dim(&self) -> usize {
        self.hidden.d_in()
    }

    /// Number of labels N.
    pub fn classes(&self) -> usize {
        self.readout.d_out()
    }

    #[cfg(test)]
    pub(crate) fn readout_mut(&mut self) -> &mut LayerParams {
        &mut self.readout
    }

    /// Every trainable layer in the fixed order embed, hidden..., readout.
    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        std::iter::once(&self.embed)
            .chain(self.hidden.layers.iter())
            .chain(std::iter::once(&self.readout))
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        std::iter::once(&mut self.embed)
            .chain(self.hidden.layers.iter_mut())
            .chain(std::iter::once(&mut self.readout))
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// φⁱⁿ(x).
    pub fn embed_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("input vector (M)", self.input_dim(), x.len())?;
        self.embed.apply(x)
    }

    /// φᵒᵘᵗ(a) = softmax(W_y a + b_y).
    pub fn read_out(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_dim("hidden state (d_L)", self.state_dim(), a.len())?;
        self.readout.apply(a)
    }

    /// Logits z = W_y a + b_y.
    pub fn logits(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_dim("hidden state (d_L)", self.state_dim(), a.len())?;
        let mut z = vec![0.0; self.classes()];
        self.readout.affine_into(a, &mut z);
        Ok(z)
    }

    /// Same spec with a different horizon/step count; weights are shared unchanged.
    pub fn with_discretization(&self, horizon: f64, n_steps: usize) -> Result<Self> {
        RnnOdeSpec::new(
            self.embed.clone(),
            self.hidden.clone(),
            self.readout.clone(),
            horizon,
            n_steps,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RnnOdeSpec::from_json(&s)
    }
}

/// On-disk model layout.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    embed: LayerParams,
    hidden: MlpParams,
    readout: LayerParams,
    tau: f64,
    horizon: f64,
    n_steps: usize,
}

impl From<&RnnOdeSpec> for ModelFile {
    fn from(s: &RnnOdeSpec) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            embed: s.embed.clone(),
            hidden: s.hidden.clone(),
            readout: s.readout.clone(),
            tau: s.tau,
            horizon: s.horizon,
            n_steps: s.n_steps,
        }
    }
}

impl TryFrom<ModelFile> for RnnOdeSpec {
    type Error = Error;
    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
                f.format_version
            )));
        }
        let spec = RnnOdeSpec::new(f.embed, f.hidden, f.readout, f.horizon, f.n_steps)?;
        if (spec.tau - f.tau).abs() > 1e-12 * spec.tau.abs() {
            return Err(Error::Config(format!(
                "tau {} inconsistent with horizon / n_steps = {}",
                f.tau, spec.tau
            )));
        }
        Ok(spec)
    }
}

/// Hidden and output sequences of the discrete recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct Unrolled {
    pub hidden: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// Runs `n` recurrent steps from `x`, returning `n + 1` hidden states and outputs.
pub fn rnn_unroll_discrete(spec: &RnnOdeSpec, x: &[f64], n: usize) -> Result<Unrolled> {
    let mut a = spec.embed_input(x)?;
    let mut hidden = Vec::with_capacity(n + 1);
    let mut outputs = Vec::with_capacity(n + 1);
    outputs.push(spec.read_out(&a)?);
    for _ in 0..n {
        let next = spec.hidden.apply(&a)?;
        hidden.push(std::mem::replace(&mut a, next));
        outputs.push(spec.read_out(&a)?);
    }
    hidden.push(a);
    Ok(Unrolled { hidden, outputs })
}

/// Layer widths and activations used to build freshly initialized specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub state_dim: usize,
    pub classes: usize,
    /// Widths of the intermediate hidden layers; empty means ξ is a single layer.
    pub hidden_widths: Vec<usize>,
    pub input_activation: ActivationKind,
    pub hidden_activation: ActivationKind,
    pub horizon: f64,
    pub n_steps: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 2,
            state_dim: 3,
            classes: 3,
            hidden_widths: Vec::new(),
            input_activation: ActivationKind::Tanh,
            hidden_activation: ActivationKind::Tanh,
            horizon: 5.0,
            n_steps: 50,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.state_dim == 0 || self.classes == 0 {
            return Err(Error::Config(
                "input_dim, state_dim and classes must be positive".into(),
            ));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) || self.n_steps == 0 {
            return Err(Error::Config("horizon and n_steps must be positive".into()));
        }
        Ok(())
    }

    /// `(d_in, d_out, activation)` for each layer of ξ.
    pub fn hidden_shapes(&self) -> Vec<(usize, usize, ActivationKind)> {
        let mut dims = vec![self.state_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.state_dim);
        dims.windows(2)
            .map(|w| (w[0], w[1], self.hidden_activation))
            .collect()
    }

    /// Builds a spec whose every weight and bias is produced by `draw(d_in)`.
    pub fn build_with(&self, mut draw: impl FnMut(usize) -> f64) -> Result<RnnOdeSpec> {
        self.validate()?;
        let mut layer = |d_in: usize, d_out: usize, act: ActivationKind| {
            let w: Vec<f64> = (0..d_in * d_out).map(|_| draw(d_in)).collect();
            let b: Vec<f64> = (0..d_out).map(|_| draw(d_in)).collect();
            LayerParams::new(Matrix::from_row_major(d_out, d_in, w)?, b, act)
        };
        let embed = layer(self.input_dim, self.state_dim, self.input_activation)?;
        let hidden = self
            .hidden_shapes()
            .into_iter()
            .map(|(i, o, act)| layer(i, o, act))
            .collect::<Result<Vec<_>>>()?;
        let readout = layer(self.state_dim, self.classes, ActivationKind::Softmax)?;
        RnnOdeSpec::new(
            embed,
            MlpParams::new(hidden)?,
            readout,
            self.horizon,
            self.n_steps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn scalar_layer(w: f64, b: f64, act: ActivationKind) -> LayerParams {
        LayerParams::new(m(&[&[w]]), vec![b], act).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        let y = activation_apply(ActivationKind::Softmax, &[0.0, 0.0, 0.0]).unwrap();
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_definition() {
        let y = activation_apply(ActivationKind::Relu, &[-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0, 3.0]);
    }

    #[test]
    fn softmax_large_logits_match_shifted_oracle() {
        let ln2 = 2f64.ln();
        let y = activation_apply(ActivationKind::Softmax, &[1000.0, 1000.0 + ln2]).unwrap();
        // Oracle at small magnitude: softmax(z - max z) = softmax([-ln 2, 0]).
        let e0 = (-ln2).exp();
        let oracle = [e0 / (e0 + 1.0), 1.0 / (e0 + 1.0)];
        assert!((y[0] - oracle[0]).abs() < 1e-12 && (y[1] - oracle[1]).abs() < 1e-12);
        assert!((y[0] - 1.0 / 3.0).abs() < 1e-12 && (y[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn activation_rejects_non_finite_and_empty_softmax() {
        assert!(matches!(
            activation_apply(ActivationKind::Tanh, &[f64::NAN]),
            Err(Error::Domain(_))
        ));
        assert!(activation_apply(ActivationKind::Softmax, &[]).is_err());
        assert_eq!(activation_apply(ActivationKind::Relu, &[]).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn layer_examples() {
        let id = LayerParams::identity(2);
        assert_eq!(layer_apply(&id, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);

        let l = LayerParams::new(m(&[&[1.0, 1.0]]), vec![-1.0], ActivationKind::Relu).unwrap();
        assert_eq!(layer_apply(&l, &[2.0, 3.0]).unwrap(), vec![4.0]);

        let b = vec![0.3, -1.2];
        let z = LayerParams::new(Matrix::zeros(2, 3), b.clone(), ActivationKind::Tanh).unwrap();
        let out = layer_apply(&z, &[5.0, -7.0, 1e3]).unwrap();
        assert_eq!(out, vec![b[0].tanh(), b[1].tanh()]);
    }

    #[test]
    fn layer_dimension_errors() {
        let l = LayerParams::identity(2);
        assert!(matches!(
            layer_apply(&l, &[1.0]),
            Err(Error::Dimension { expected: 2, actual: 1, .. })
        ));
        assert!(LayerParams::new(Matrix::zeros(2, 2), vec![0.0], ActivationKind::Tanh).is_err());
        assert!(LayerParams::new(m(&[&[f64::INFINITY]]), vec![0.0], ActivationKind::Tanh).is_err());
    }

    #[test]
    fn mlp_examples() {
        let single = MlpParams::single(scalar_layer(2.0, 1.0, ActivationKind::Identity)).unwrap();
        assert_eq!(
            mlp_apply(&single, &[3.0]).unwrap(),
            layer_apply(&single.layers()[0], &[3.0]).unwrap()
        );

        let two_id = MlpParams::new(vec![LayerParams::identity(2), LayerParams::identity(2)]).unwrap();
        assert_eq!(mlp_apply(&two_id, &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);

        let chain = MlpParams::new(vec![
            scalar_layer(2.0, 0.0, ActivationKind::Identity),
            scalar_layer(1.0, 1.0, ActivationKind::Identity),
        ])
        .unwrap();
        assert_eq!(mlp_apply(&chain, &[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn mlp_rejects_incompatible_or_non_square_chains() {
        let a = LayerParams::new(Matrix::zeros(3, 2), vec![0.0; 3], ActivationKind::Tanh).unwrap();
        let b = LayerParams::new(Matrix::zeros(2, 4), vec![0.0; 2], ActivationKind::Tanh).unwrap();
        assert!(MlpParams::new(vec![a.clone(), b]).is_err());
        assert!(MlpParams::new(vec![a]).is_err());
        assert!(MlpParams::new(vec![]).is_err());
    }

    fn scalar_spec(hidden_w: f64, readout: LayerParams, n_steps: usize, horizon: f64) -> RnnOdeSpec {
        RnnOdeSpec::new(
            scalar_layer(1.0, 0.0, ActivationKind::Identity),
            MlpParams::single(scalar_layer(hidden_w, 0.0, ActivationKind::Identity)).unwrap(),
            readout,
            horizon,
            n_steps,
        )
        .unwrap()
    }

    fn two_class_readout() -> LayerParams {
        LayerParams::new(m(&[&[1.0], &[-1.0]]), vec![0.0, 0.0], ActivationKind::Softmax).unwrap()
    }

    #[test]
    fn unroll_identity_hidden_is_fixed_point() {
        let spec = scalar_spec(1.0, two_class_readout(), 4, 1.0);
        let u = rnn_unroll_discrete(&spec, &[0.7], 4).unwrap();
        assert_eq!(u.hidden.len(), 5);
        assert!(u.hidden.iter().all(|a| a == &vec![0.7]));
        assert!(u.outputs.iter().all(|y| y == &u.outputs[0]));
    }

    #[test]
    fn unroll_zero_steps() {
        let spec = scalar_spec(0.5, two_class_readout(), 4, 1.0);
        let u = rnn_unroll_discrete(&spec, &[1.0], 0).unwrap();
        assert_eq!(u.hidden, vec![vec![1.0]]);
        assert_eq!(u.outputs.len(), 1);
    }

    #[test]
    fn unroll_halving_map() {
        let spec = scalar_spec(0.5, two_class_readout(), 2, 1.0);
        let u = rnn_unroll_discrete(&spec, &[1.0], 2).unwrap();
        assert_eq!(u.hidden, vec![vec![1.0], vec![0.5], vec![0.25]]);
        for y in &u.outputs {
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn spec_rejects_non_softmax_readout_and_bad_horizon() {
        let r = LayerParams::new(m(&[&[1.0]]), vec![0.0], ActivationKind::Tanh).unwrap();
        assert!(RnnOdeSpec::new(
            LayerParams::identity(1),
            MlpParams::identity(1),
            r,
            1.0,
            1
        )
        .is_err());
        let r = two_class_readout();
        assert!(
            RnnOdeSpec::new(LayerParams::identity(1), MlpParams::identity(1), r.clone(), 0.0, 1)
                .is_err()
        );
        assert!(
            RnnOdeSpec::new(LayerParams::identity(1), MlpParams::identity(1), r, 1.0, 0).is_err()
        );
    }

    #[test]
    fn tau_is_horizon_over_steps() {
        let spec = scalar_spec(0.5, two_class_readout(), 50, 5.0);
        assert_eq!(spec.tau(), 0.1);
    }

    #[test]
    fn model_json_round_trip_and_validation() {
        let arch = Architecture {
            hidden_widths: vec![4],
            ..Architecture::default()
        };
        let mut k = 0.0f64;
        let spec = arch
            .build_with(|_| {
                k += 0.173;
                k.sin()
            })
            .unwrap();
        let json = spec.to_json().unwrap();
        assert!(json.contains("\"format_version\": 1"));
        assert_eq!(RnnOdeSpec::from_json(&json).unwrap(), spec);

        let bad = json.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(RnnOdeSpec::from_json(&bad).is_err());
        let extra = json.replacen('{', "{\"surprise\": 1,", 1);
        assert!(RnnOdeSpec::from_json(&extra).is_err());
    }
}
