//! Cross-entropy training of the discrete recursion.
//!
//! The loss sums `−ln yᵢ` of the true label over every datum and every step
//! `k = 0, …, N_T` of the unrolled network. Gradients are computed by reverse
//! accumulation through the recorded forward pass (BPTT); a central-difference
//! oracle is provided for checking them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::network::{ActivationKind, Architecture, LayerParams, RnnOdeSpec};
use crate::odeflow::fmt_f64;
use crate::replicator::argmax;

/// Probabilities are clipped to this before taking logs.
pub const LOG_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &LayerParams) -> Self {
        LayerGrad {
            weights: Matrix::zeros(layer.d_out(), layer.d_in()),
            bias: vec![0.0; layer.d_out()],
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.data().iter().chain(&self.bias).copied()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.data_mut().iter_mut().chain(self.bias.iter_mut())
    }
}

/// Gradient with the same layout as the spec it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub embed: LayerGrad,
    pub hidden: Vec<LayerGrad>,
    pub readout: LayerGrad,
}

impl GradientBundle {
    pub fn zeros_like(spec: &RnnOdeSpec) -> Self {
        GradientBundle {
            embed: LayerGrad::zeros_like(spec.embed()),
            hidden: spec.hidden().layers().iter().map(LayerGrad::zeros_like).collect(),
            readout: LayerGrad::zeros_like(spec.readout()),
        }
    }

    /// Layers in the order embed, hidden…, readout (matching [`RnnOdeSpec::layers`]).
    pub fn layers(&self) -> impl Iterator<Item = &LayerGrad> {
        std::iter::once(&self.embed)
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.readout))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrad> {
        std::iter::once(&mut self.embed)
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.readout))
    }

    /// All entries, each layer's weights (row-major) followed by its bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers().flat_map(LayerGrad::values).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().flat_map(LayerGrad::values).all(f64::is_finite)
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.layers().flat_map(LayerGrad::values).map(|v| v * v).sum::<f64>().sqrt()
    }

    fn scale(&mut self, s: f64) {
        self.layers_mut().flat_map(LayerGrad::values_mut).for_each(|v| *v *= s);
    }

    /// `max |a − b| / max(|a|, |b|, floor)` over all entries.
    pub fn max_relative_error(&self, other: &GradientBundle, floor: f64) -> f64 {
        let a = self.flatten();
        let b = other.flatten();
        assert_eq!(a.len(), b.len(), "gradient layouts differ");
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

/// Rows processed together by the batched forward pass.
const CHUNK: usize = 64;

/// `C = op(A) op(B) + beta C` for row-major slices, where `op(A)` is `m × k`
/// and `op(B)` is `k × n`. A transposed operand is stored in its untransposed shape.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertion above bounds every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `out = X Wᵀ + b` for a `rows × d_in` block `x`.
fn affine_rows(layer: &LayerParams, x: &[f64], rows: usize, out: &mut [f64]) {
    let w = layer.d_out();
    for row in out.chunks_exact_mut(w) {
        row.copy_from_slice(layer.bias());
    }
    gemm(rows, layer.d_in(), w, x, false, layer.weights().data(), true, 1.0, out);
}

fn activate_rows(act: ActivationKind, width: usize, v: &mut [f64]) {
    v.chunks_exact_mut(width).for_each(|r| act.apply_in_place(r));
}

fn backprop_rows(act: ActivationKind, width: usize, pre: &[f64], out: &[f64], g: &mut [f64]) {
    for ((g, p), o) in g.chunks_exact_mut(width).zip(pre.chunks_exact(width)).zip(out.chunks_exact(width)) {
        act.backprop_in_place(p, o, g);
    }
}

/// `grad.weights += Gᵀ X`, `grad.bias += Σ_rows G`.
fn accumulate(grad: &mut LayerGrad, g: &[f64], x: &[f64], rows: usize) {
    let (w, d_in) = (grad.weights.rows(), grad.weights.cols());
    gemm(w, rows, d_in, g, true, x, false, 1.0, grad.weights.data_mut());
    for row in g.chunks_exact(w) {
        for (b, v) in grad.bias.iter_mut().zip(row) {
            *b += v;
        }
    }
}

/// Forward-pass record for a block of data, stored step-major: every per-step
/// buffer holds `rows` consecutive row vectors.
#[derive(Debug, Default)]
struct Tape {
    steps: usize,
    rows: usize,
    x: Vec<f64>,
    classes: Vec<usize>,
    embed_pre: Vec<f64>,
    /// `a_0 … a_steps`.
    states: Vec<f64>,
    /// Per hidden layer, pre-activations and outputs for steps `0 … steps−1`.
    layer_pre: Vec<Vec<f64>>,
    layer_out: Vec<Vec<f64>>,
    /// Softmax outputs `y_0 … y_steps`.
    probs: Vec<f64>,
    // backward scratch
    g: Vec<f64>,
    g_pre: Vec<f64>,
    g_in: Vec<f64>,
    dz: Vec<f64>,
}

impl Tape {
    fn forward(&mut self, spec: &RnnOdeSpec, dataset: &Dataset, indices: &[usize], steps: usize) -> Result<()> {
        let d = spec.state_dim();
        let n = spec.classes();
        let layers = spec.hidden().layers();
        let rows = indices.len();
        self.steps = steps;
        self.rows = rows;
        self.x.clear();
        self.classes.clear();
        for &j in indices {
            self.x.extend_from_slice(dataset.input(j));
            self.classes.push(dataset.class_index(j));
        }
        let block = rows * d;
        self.embed_pre.resize(block, 0.0);
        self.states.resize((steps + 1) * block, 0.0);
        self.probs.resize((steps + 1) * rows * n, 0.0);
        self.layer_pre.resize_with(layers.len(), Vec::new);
        self.layer_out.resize_with(layers.len(), Vec::new);
        for (l, layer) in layers.iter().enumerate() {
            self.layer_pre[l].resize(steps * rows * layer.d_out(), 0.0);
            self.layer_out[l].resize(steps * rows * layer.d_out(), 0.0);
        }

        affine_rows(spec.embed(), &self.x, rows, &mut self.embed_pre);
        let a0 = &mut self.states[..block];
        a0.copy_from_slice(&self.embed_pre);
        activate_rows(spec.embed().activation(), d, a0);
        if a0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: 0.0 });
        }

        for k in 0..steps {
            for (l, layer) in layers.iter().enumerate() {
                let w = rows * layer.d_out();
                let (done, rest) = self.layer_out.split_at_mut(l);
                let input: &[f64] = if l == 0 {
                    &self.states[k * block..(k + 1) * block]
                } else {
                    let prev = rows * layers[l - 1].d_out();
                    &done[l - 1][k * prev..(k + 1) * prev]
                };
                let pre = &mut self.layer_pre[l][k * w..(k + 1) * w];
                affine_rows(layer, input, rows, pre);
                let out = &mut rest[0][k * w..(k + 1) * w];
                out.copy_from_slice(pre);
                activate_rows(layer.activation(), layer.d_out(), out);
            }
            let last = layers.len() - 1;
            let next = &mut self.states[(k + 1) * block..(k + 2) * block];
            next.copy_from_slice(&self.layer_out[last][k * block..(k + 1) * block]);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    time: (k + 1) as f64 * spec.tau(),
                });
            }
        }

        let out = rows * n;
        for k in 0..=steps {
            let y = &mut self.probs[k * out..(k + 1) * out];
            affine_rows(spec.readout(), &self.states[k * block..(k + 1) * block], rows, y);
            activate_rows(ActivationKind::Softmax, n, y);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { time: k as f64 * spec.tau() });
            }
        }
        Ok(())
    }

    /// Output `y^⟨k⟩` of row `r`.
    fn output(&self, k: usize, r: usize, n: usize) -> &[f64] {
        let at = (k * self.rows + r) * n;
        &self.probs[at..at + n]
    }

    fn loss(&self, n: usize) -> f64 {
        let mut total = 0.0;
        for k in 0..=self.steps {
            for (r, &c) in self.classes.iter().enumerate() {
                total -= self.output(k, r, n)[c].max(LOG_CLIP).ln();
            }
        }
        total
    }

    /// Adds the block's loss gradient to `grad`.
    fn backward(&mut self, spec: &RnnOdeSpec, grad: &mut GradientBundle) {
        let d = spec.state_dim();
        let n = spec.classes();
        let layers = spec.hidden().layers();
        let rows = self.rows;
        let block = rows * d;
        let w_y = spec.readout().weights();

        self.g.clear();
        self.g.resize(block, 0.0);
        for k in (0..=self.steps).rev() {
            let a_k = &self.states[k * block..(k + 1) * block];
            self.dz.clear();
            self.dz.extend_from_slice(&self.probs[k * rows * n..(k + 1) * rows * n]);
            for (z, &c) in self.dz.chunks_exact_mut(n).zip(&self.classes) {
                if z[c] > LOG_CLIP {
                    z[c] -= 1.0;
                } else {
                    z.fill(0.0);
                }
            }
            accumulate(&mut grad.readout, &self.dz, a_k, rows);
            gemm(rows, n, d, &self.dz, false, w_y.data(), false, 1.0, &mut self.g);
            if k == 0 {
                break;
            }
            let step = k - 1;
            for l in (0..layers.len()).rev() {
                let layer = &layers[l];
                let w = rows * layer.d_out();
                let pre = &self.layer_pre[l][step * w..(step + 1) * w];
                let out = &self.layer_out[l][step * w..(step + 1) * w];
                self.g_pre.clear();
                self.g_pre.extend_from_slice(&self.g);
                backprop_rows(layer.activation(), layer.d_out(), pre, out, &mut self.g_pre);
                let input: &[f64] = if l == 0 {
                    &self.states[step * block..(step + 1) * block]
                } else {
                    let prev = rows * layers[l - 1].d_out();
                    &self.layer_out[l - 1][step * prev..(step + 1) * prev]
                };
                accumulate(&mut grad.hidden[l], &self.g_pre, input, rows);
                self.g_in.resize(rows * layer.d_in(), 0.0);
                gemm(rows, layer.d_out(), layer.d_in(), &self.g_pre, false, layer.weights().data(), false, 0.0, &mut self.g_in);
                std::mem::swap(&mut self.g, &mut self.g_in);
            }
        }

        self.g_pre.clear();
        self.g_pre.extend_from_slice(&self.g);
        backprop_rows(spec.embed().activation(), d, &self.embed_pre, &self.states[..block], &mut self.g_pre);
        accumulate(&mut grad.embed, &self.g_pre, &self.x, rows);
    }
}

fn check_compatible(spec: &RnnOdeSpec, dataset: &Dataset) -> Result<()> {
    check_dim("dataset input dimension (M)", spec.input_dim(), dataset.input_dim())?;
    check_dim("dataset classes (N)", spec.classes(), dataset.classes())
}

/// `L = −Σ_k Σ_j ln max(y^{j⟨k⟩}_{label(j)}, 1e-12)` over `k = 0..=n_steps`.
pub fn cross_entropy_loss(spec: &RnnOdeSpec, dataset: &Dataset, n_steps: usize) -> Result<f64> {
    check_compatible(spec, dataset)?;
    let mut tape = Tape::default();
    let mut total = 0.0;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(CHUNK) {
        tape.forward(spec, dataset, chunk, n_steps)?;
        total += tape.loss(spec.classes());
    }
    Ok(total)
}

/// Loss and exact gradient restricted to the data at `indices`.
pub fn loss_and_gradient(
    spec: &RnnOdeSpec,
    dataset: &Dataset,
    indices: &[usize],
    n_steps: usize,
) -> Result<(f64, GradientBundle)> {
    check_compatible(spec, dataset)?;
    let mut grad = GradientBundle::zeros_like(spec);
    let mut tape = Tape::default();
    let mut loss = 0.0;
    for chunk in indices.chunks(CHUNK) {
        tape.forward(spec, dataset, chunk, n_steps)?;
        loss += tape.loss(spec.classes());
        tape.backward(spec, &mut grad);
    }
    if !grad.is_finite() {
        return Err(Error::Divergence { time: f64::NAN });
    }
    Ok((loss, grad))
}

/// Gradient of [`cross_entropy_loss`] over the whole `batch` by backpropagation through time.
pub fn bptt_gradient(spec: &RnnOdeSpec, batch: &Dataset, n_steps: usize) -> Result<GradientBundle> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(loss_and_gradient(spec, batch, &idx, n_steps)?.1)
}

/// Central differences `(L(θ + h e) − L(θ − h e)) / 2h` for every parameter entry.
pub fn finite_diff_gradient(
    spec: &RnnOdeSpec,
    batch: &Dataset,
    n_steps: usize,
    h: f64,
) -> Result<GradientBundle> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let mut grad = GradientBundle::zeros_like(spec);
    let mut probe = spec.clone();
    let layer_count = spec.layers().count();
    for l in 0..layer_count {
        let entries = {
            let layer = probe.layers_mut().nth(l).expect("layer index");
            layer.weights().data().len() + layer.bias().len()
        };
        for e in 0..entries {
            let orig = *param_entry(&mut probe, l, e);
            *param_entry(&mut probe, l, e) = orig + h;
            let plus = cross_entropy_loss(&probe, batch, n_steps)?;
            *param_entry(&mut probe, l, e) = orig - h;
            let minus = cross_entropy_loss(&probe, batch, n_steps)?;
            *param_entry(&mut probe, l, e) = orig;
            let g = grad.layers_mut().nth(l).expect("layer index");
            let slot = g.values_mut().nth(e).expect("entry index");
            *slot = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

fn param_entry(spec: &mut RnnOdeSpec, layer: usize, entry: usize) -> &mut f64 {
    let l = spec.layers_mut().nth(layer).expect("layer index");
    let nw = l.weights().data().len();
    if entry < nw {
        &mut l.weights_mut().data_mut()[entry]
    } else {
        &mut l.bias_mut()[entry - nw]
    }
}

/// `θ ← θ − lr · grad`.
pub fn apply_gradient(spec: &mut RnnOdeSpec, grad: &GradientBundle, lr: f64) {
    for (layer, g) in spec.layers_mut().zip(grad.layers()) {
        for (w, gw) in layer.weights_mut().data_mut().iter_mut().zip(g.weights.data()) {
            *w -= lr * gw;
        }
        for (b, gb) in layer.bias_mut().iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub misclassified: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, 0-based.
    pub confusion: Vec<Vec<usize>>,
    /// [`cross_entropy_loss`] over the dataset.
    pub loss: f64,
}

/// Classifies every datum by the terminal output `y^⟨n_steps⟩`.
pub fn evaluate(spec: &RnnOdeSpec, dataset: &Dataset, n_steps: usize) -> Result<Evaluation> {
    check_compatible(spec, dataset)?;
    let n = spec.classes();
    let mut confusion = vec![vec![0; n]; n];
    let mut tape = Tape::default();
    let mut loss = 0.0;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(CHUNK) {
        tape.forward(spec, dataset, chunk, n_steps)?;
        loss += tape.loss(n);
        for (r, &class) in tape.classes.iter().enumerate() {
            confusion[class][argmax(tape.output(n_steps, r, n))] += 1;
        }
    }
    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    let total = dataset.len();
    Ok(Evaluation {
        misclassified: total - correct,
        accuracy: if total == 0 { 1.0 } else { correct as f64 / total as f64 },
        confusion,
        loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Layer `k` is initialized uniformly in `±init_scale / √d_in`.
    pub init_scale: f64,
    /// Rescale each mini-batch gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 300,
            batch_size: 16,
            optimizer: Optimizer::SgdMomentum { beta: 0.5 },
            seed: 0,
            init_scale: 1.0,
            clip_norm: Some(0.1),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        if let Optimizer::SgdMomentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("momentum beta must lie in [0, 1), got {beta}")));
            }
        }
        Ok(())
    }
}

/// Draws every parameter uniformly from `±init_scale / √d_in`.
pub fn initialize(arch: &Architecture, init_scale: f64, rng: &mut impl Rng) -> Result<RnnOdeSpec> {
    arch.build_with(|d_in| {
        let bound = init_scale / (d_in as f64).sqrt();
        rng.gen_range(-bound..=bound)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss per datum and time step, `L / (D (N_T + 1))`.
    pub loss: f64,
    /// Fraction of misclassified data.
    pub train_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: RnnOdeSpec,
    /// Metrics of the seeded initialization (epoch 0).
    pub initial: EpochRecord,
    /// One record per completed epoch, starting at epoch 1.
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> EpochRecord {
        self.history.last().copied().unwrap_or(self.initial)
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,train_error\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, fmt_f64(r.loss), fmt_f64(r.train_error));
    }
    out
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

fn epoch_record(spec: &RnnOdeSpec, dataset: &Dataset, epoch: usize) -> Result<EpochRecord> {
    let eval = evaluate(spec, dataset, spec.n_steps())?;
    let denom = (dataset.len() * (spec.n_steps() + 1)) as f64;
    Ok(EpochRecord {
        epoch,
        loss: eval.loss / denom,
        train_error: 1.0 - eval.accuracy,
    })
}

/// Mini-batch gradient descent on the mean per-datum, per-step loss.
///
/// Deterministic in `(config, dataset, arch)`: one ChaCha8 stream seeded with
/// `config.seed` drives the initialization and then every epoch's shuffle.
pub fn train(config: &TrainConfig, dataset: &Dataset, arch: &Architecture) -> Result<TrainOutcome> {
    train_with_progress(config, dataset, arch, |_| {})
}

pub fn train_with_progress(
    config: &TrainConfig,
    dataset: &Dataset,
    arch: &Architecture,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if config.batch_size > dataset.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {}",
            config.batch_size,
            dataset.len()
        )));
    }
    check_dim("architecture input_dim vs dataset (M)", arch.input_dim, dataset.input_dim())?;
    check_dim("architecture classes vs dataset (N)", arch.classes, dataset.classes())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut spec = initialize(arch, config.init_scale, &mut rng)?;
    let n_steps = spec.n_steps();
    let initial = epoch_record(&spec, dataset, 0)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut velocity = GradientBundle::zeros_like(&spec);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=config.epochs {
        let last_good = spec.clone();
        let diverged = |last_good: RnnOdeSpec| Error::TrainingDiverged {
            epoch,
            last_good: Box::new(last_good),
        };
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = match loss_and_gradient(&spec, dataset, batch, n_steps) {
                Ok((_, g)) => g,
                Err(Error::Divergence { .. }) => return Err(diverged(last_good)),
                Err(e) => return Err(e),
            };
            grad.scale(1.0 / (batch.len() * (n_steps + 1)) as f64);
            if let Some(max) = config.clip_norm {
                let norm = grad.norm();
                if norm > max {
                    grad.scale(max / norm);
                }
            }
            match config.optimizer {
                Optimizer::Sgd => apply_gradient(&mut spec, &grad, config.learning_rate),
                Optimizer::SgdMomentum { beta } => {
                    for (v, g) in velocity
                        .layers_mut()
                        .flat_map(LayerGrad::values_mut)
                        .zip(grad.layers().flat_map(LayerGrad::values))
                    {
                        *v = beta * *v + g;
                    }
                    apply_gradient(&mut spec, &velocity, config.learning_rate);
                }
            }
        }
        if !spec.is_finite() {
            return Err(diverged(last_good));
        }
        let record = match epoch_record(&spec, dataset, epoch) {
            Ok(r) if r.loss.is_finite() => r,
            Ok(_) | Err(Error::Divergence { .. }) => return Err(diverged(last_good)),
            Err(e) => return Err(e),
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        spec,
        initial,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{rnn_unroll_discrete, ActivationKind, MlpParams};

    fn tiny_arch(widths: Vec<usize>) -> Architecture {
        Architecture {
            input_dim: 2,
            state_dim: 3,
            classes: 3,
            hidden_widths: widths,
            horizon: 0.4,
            n_steps: 4,
            ..Architecture::default()
        }
    }

    fn tiny_data() -> Dataset {
        Dataset::new(
            "t",
            2,
            3,
            vec![vec![0.3, -0.8], vec![-1.1, 0.4], vec![0.9, 0.9], vec![0.0, 0.2]],
            &[1, 2, 3, 2],
        )
        .unwrap()
    }

    fn naive_loss(spec: &RnnOdeSpec, d: &Dataset, n: usize) -> f64 {
        (0..d.len())
            .map(|j| {
                let u = rnn_unroll_discrete(spec, d.input(j), n).unwrap();
                u.outputs
                    .iter()
                    .map(|y| -y[d.class_index(j)].max(LOG_CLIP).ln())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Spec whose readout ignores the state: y = softmax(b_y) at every step.
    fn constant_output_spec(classes: usize, bias: Vec<f64>) -> RnnOdeSpec {
        RnnOdeSpec::new(
            LayerParams::new(Matrix::zeros(1, 1), vec![0.0], ActivationKind::Identity).unwrap(),
            MlpParams::identity(1),
            LayerParams::new(Matrix::zeros(classes, 1), bias, ActivationKind::Softmax).unwrap(),
            1.0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn tape_loss_matches_unrolled_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = initialize(&tiny_arch(vec![5]), 1.0, &mut rng).unwrap();
        let d = tiny_data();
        let fast = cross_entropy_loss(&spec, &d, 4).unwrap();
        assert!((fast - naive_loss(&spec, &d, 4)).abs() < 1e-12 * fast);
    }

    #[test]
    fn loss_examples() {
        // One-hot outputs: softmax(±800) is exactly [1, 0] in double precision.
        let spec = constant_output_spec(2, vec![800.0, -800.0]);
        let d = Dataset::new("d", 1, 2, vec![vec![0.0]], &[1]).unwrap();
        assert_eq!(cross_entropy_loss(&spec, &d, 0).unwrap(), 0.0);

        let spec = constant_output_spec(3, vec![0.0; 3]);
        let d = Dataset::new("d", 1, 3, vec![vec![0.0]], &[2]).unwrap();
        assert!((cross_entropy_loss(&spec, &d, 0).unwrap() - 3f64.ln()).abs() < 1e-15);

        let spec = constant_output_spec(2, vec![0.0; 2]);
        let d = Dataset::new("d", 1, 2, vec![vec![0.0], vec![1.0]], &[1, 2]).unwrap();
        assert!((cross_entropy_loss(&spec, &d, 1).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn clipped_probabilities_do_not_crash() {
        let spec = constant_output_spec(2, vec![900.0, -900.0]);
        let d = Dataset::new("d", 1, 2, vec![vec![0.0]], &[2]).unwrap();
        let loss = cross_entropy_loss(&spec, &d, 2).unwrap();
        assert!((loss - 3.0 * -(LOG_CLIP.ln())).abs() < 1e-9);
        let g = bptt_gradient(&spec, &d, 2).unwrap();
        assert!(g.is_finite());
    }

    #[test]
    fn zero_readout_symmetric_labels_bias_gradient_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = initialize(&tiny_arch(vec![]), 1.0, &mut rng).unwrap();
        *spec.readout_mut().weights_mut() = Matrix::zeros(3, 3);
        let d = Dataset::new("d", 2, 3, vec![vec![0.1, 0.2], vec![0.3, -0.4], vec![1.0, 0.0]], &[1, 2, 3])
            .unwrap();
        let g = bptt_gradient(&spec, &d, 4).unwrap();
        assert!(g.readout.bias.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for (seed, widths) in [(2, vec![]), (3, vec![4]), (5, vec![4, 2])] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = initialize(&tiny_arch(widths), 1.5, &mut rng).unwrap();
            let d = tiny_data();
            let g = bptt_gradient(&spec, &d, 4).unwrap();
            let fd = finite_diff_gradient(&spec, &d, 4, 1e-5).unwrap();
            let err = g.max_relative_error(&fd, 1e-6);
            assert!(err <= 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn finite_difference_matches_hand_derivative() {
        // Two classes, state-independent logits (b, 0): L = −ln σ(b) for label 1,
        // so dL/db₁ = σ(b) − 1 = −1 / (1 + e^b).
        let b = 0.7;
        let spec = constant_output_spec(2, vec![b, 0.0]);
        let d = Dataset::new("d", 1, 2, vec![vec![0.0]], &[1]).unwrap();
        let fd = finite_diff_gradient(&spec, &d, 0, 1e-4).unwrap();
        let exact = -1.0 / (1.0 + b.exp());
        assert!((fd.readout.bias[0] - exact).abs() < 1e-8);
        assert!(finite_diff_gradient(&spec, &d, 0, 1e-2).is_err());
    }

    #[test]
    fn finite_difference_vanishes_at_symmetric_point() {
        let spec = constant_output_spec(2, vec![0.0, 0.0]);
        let d = Dataset::new("d", 1, 2, vec![vec![0.0], vec![0.0]], &[1, 2]).unwrap();
        let fd = finite_diff_gradient(&spec, &d, 2, 1e-5).unwrap();
        assert!(fd.flatten().iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn zero_learning_rate_step_keeps_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut spec = initialize(&tiny_arch(vec![]), 1.0, &mut rng).unwrap();
        let d = tiny_data();
        let before = cross_entropy_loss(&spec, &d, 4).unwrap();
        let g = bptt_gradient(&spec, &d, 4).unwrap();
        apply_gradient(&mut spec, &g, 0.0);
        assert_eq!(cross_entropy_loss(&spec, &d, 4).unwrap(), before);
    }

    #[test]
    fn evaluate_examples() {
        // Readout = identity logits scaled large; input picks the class directly.
        let spec = RnnOdeSpec::new(
            LayerParams::new(Matrix::identity(3), vec![0.0; 3], ActivationKind::Identity).unwrap(),
            MlpParams::identity(3),
            LayerParams::new(
                Matrix::from_rows(&[
                    vec![50.0, 0.0, 0.0],
                    vec![0.0, 50.0, 0.0],
                    vec![0.0, 0.0, 50.0],
                ])
                .unwrap(),
                vec![0.0; 3],
                ActivationKind::Softmax,
            )
            .unwrap(),
            1.0,
            2,
        )
        .unwrap();
        let d = Dataset::new(
            "d",
            3,
            3,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            &[1, 2, 3],
        )
        .unwrap();
        let e = evaluate(&spec, &d, 2).unwrap();
        assert_eq!(e.misclassified, 0);
        assert_eq!(e.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);

        let uniform = constant_output_spec(3, vec![0.0; 3]);
        let d = Dataset::new("d", 1, 3, vec![vec![0.0]; 6], &[1, 2, 3, 1, 2, 3]).unwrap();
        let e = evaluate(&uniform, &d, 1).unwrap();
        assert!((e.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.confusion, vec![vec![2, 0, 0], vec![2, 0, 0], vec![2, 0, 0]]);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let d = tiny_data();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 2,
            seed: 17,
            ..TrainConfig::default()
        };
        let arch = tiny_arch(vec![]);
        let out = train(&cfg, &d, &arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        assert_eq!(out.spec, initialize(&arch, cfg.init_scale, &mut rng).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let d = tiny_data();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &d, &tiny_arch(vec![3])).unwrap();
        let b = train(&cfg, &d, &tiny_arch(vec![3])).unwrap();
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn config_validation() {
        let d = tiny_data();
        let arch = tiny_arch(vec![]);
        let big_batch = TrainConfig {
            batch_size: 10,
            ..TrainConfig::default()
        };
        assert!(train(&big_batch, &d, &arch).is_err());
        let bad_beta = TrainConfig {
            optimizer: Optimizer::SgdMomentum { beta: 1.0 },
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(train(&bad_beta, &d, &arch).is_err());
        let wrong_arch = Architecture {
            classes: 2,
            ..arch
        };
        let ok = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(train(&ok, &d, &wrong_arch).is_err());
    }

    #[test]
    fn divergence_returns_last_good_spec() {
        let d = tiny_data();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            optimizer: Optimizer::Sgd,
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let arch = Architecture {
            input_activation: ActivationKind::Identity,
            hidden_activation: ActivationKind::Identity,
            ..tiny_arch(vec![])
        };
        match train(&cfg, &d, &arch) {
            Err(Error::TrainingDiverged { epoch, last_good }) => {
                assert!(epoch >= 1);
                assert!(last_good.is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn separable_toy() -> Dataset {
        let inputs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let side = if i < 10 { -1.0 } else { 1.0 };
                vec![side * (0.5 + 0.05 * (i % 10) as f64), 0.3 * ((i % 7) as f64 - 3.0)]
            })
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| if i < 10 { 1 } else { 2 }).collect();
        Dataset::new("toy", 2, 2, inputs, &labels).unwrap()
    }

    fn toy_arch() -> Architecture {
        Architecture {
            classes: 2,
            ..Architecture::default()
        }
    }

    #[test]
    fn separable_toy_reaches_zero_error() {
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &separable_toy(), &toy_arch()).unwrap();
        assert_eq!(out.history.len(), 200);
        assert_eq!(out.final_record().train_error, 0.0);
    }

    #[test]
    fn first_epoch_decreases_loss() {
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 1,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &separable_toy(), &toy_arch()).unwrap();
        assert!(out.history[0].loss < out.initial.loss);
    }

    #[test]
    fn history_csv_layout() {
        let h = [EpochRecord {
            epoch: 1,
            loss: 0.5,
            train_error: 0.25,
        }];
        let s = history_csv(&h);
        assert!(s.starts_with("epoch,loss,train_error\n1,"));
        assert_eq!(s.lines().count(), 2);
    }
}
