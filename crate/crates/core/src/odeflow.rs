//! Continuous-time view of the recurrent update.
//!
//! The recursion `aᵗ⁺¹ = ξ(aᵗ)` is one Euler step of `ȧ = ξ̃(a) = (ξ(a) − a) / τ`
//! with step τ. This module integrates that field (and arbitrary others) on a
//! uniform grid with explicit Euler or classical RK4.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::RnnOdeSpec;

/// States whose magnitude exceeds this are treated as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e8;

/// Uniform grid `0, h, 2h, …, T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Grid on `[0, t_end]` with step at most `step`. When `t_end` is not a
    /// multiple of `step`, the step shrinks so the last point lands on `t_end`.
    pub fn new(t_end: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Config(format!("grid step must be positive, got {step}")));
        }
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(Error::Config(format!("grid end must be nonnegative, got {t_end}")));
        }
        let n = (t_end / step - 1e-9).ceil().max(0.0) as usize;
        TimeGrid::with_steps(t_end, n)
    }

    pub fn with_steps(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(Error::Config(format!("grid end must be nonnegative, got {t_end}")));
        }
        if n_steps == 0 && t_end > 0.0 {
            return Err(Error::Config("a grid with positive length needs a step".into()));
        }
        Ok(TimeGrid { t_end, n_steps })
    }

    /// The grid matching the discrete window {0, …, N_T} of a spec, step τ.
    pub fn for_spec(spec: &RnnOdeSpec) -> Self {
        TimeGrid {
            t_end: spec.horizon(),
            n_steps: spec.n_steps(),
        }
    }

    pub fn t0(&self) -> f64 {
        0.0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        if self.n_steps == 0 {
            0.0
        } else {
            self.t_end / self.n_steps as f64
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    Euler,
    Rk4,
}

impl IntegratorKind {
    pub fn name(self) -> &'static str {
        match self {
            IntegratorKind::Euler => "euler",
            IntegratorKind::Rk4 => "rk4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euler" => Some(IntegratorKind::Euler),
            "rk4" => Some(IntegratorKind::Rk4),
            _ => None,
        }
    }
}

/// States sampled at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<Vec<f64>>,
    state_dim: usize,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("trajectory length", grid.len(), states.len())?;
        let state_dim = states[0].len();
        for s in &states {
            check_dim("trajectory state", state_dim, s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("trajectory state"));
            }
        }
        Ok(Trajectory {
            grid,
            states,
            state_dim,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    /// Keeps only components `range` of every state.
    pub fn project(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            grid: self.grid,
            state_dim: range.len(),
            states: self.states.iter().map(|s| s[range.clone()].to_vec()).collect(),
        }
    }

    /// CSV with header `t,s_0,…` and 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.state_dim {
            let _ = write!(out, ",s_{i}");
        }
        out.push('\n');
        for (k, s) in self.states.iter().enumerate() {
            out.push_str(&fmt_f64(self.grid.time(k)));
            for v in s {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// 17-significant-digit scientific notation; parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A time-dependent vector field writing `f(t, s)` into its output buffer.
pub trait VectorField {
    fn eval(&mut self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<F> VectorField for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        self(t, s, out)
    }
}

pub fn integrate(
    field: impl VectorField,
    x0: &[f64],
    grid: &TimeGrid,
    method: IntegratorKind,
) -> Result<Trajectory> {
    integrate_projected(field, x0, grid, method, |_: &mut [f64]| {})
}

/// Like [`integrate`], but calls `project` on every new state right after the
/// divergence check and before it is stored or used for the next step.
pub fn integrate_projected(
    mut field: impl VectorField,
    x0: &[f64],
    grid: &TimeGrid,
    method: IntegratorKind,
    mut project: impl FnMut(&mut [f64]),
) -> Result<Trajectory> {
    let n = x0.len();
    check_finite(x0, 0.0)?;
    let h = grid.step();
    let mut states = Vec::with_capacity(grid.len());
    states.push(x0.to_vec());
    let mut s = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        match method {
            IntegratorKind::Euler => {
                field.eval(t, &s, &mut k1)?;
                for (si, d) in s.iter_mut().zip(&k1) {
                    *si += h * d;
                }
            }
            IntegratorKind::Rk4 => {
                field.eval(t, &s, &mut k1)?;
                axpy_into(&s, 0.5 * h, &k1, &mut tmp);
                field.eval(t + 0.5 * h, &tmp, &mut k2)?;
                axpy_into(&s, 0.5 * h, &k2, &mut tmp);
                field.eval(t + 0.5 * h, &tmp, &mut k3)?;
                axpy_into(&s, h, &k3, &mut tmp);
                field.eval(t + h, &tmp, &mut k4)?;
                for i in 0..n {
                    s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        check_finite(&s, grid.time(k + 1))?;
        project(&mut s);
        states.push(s.clone());
    }
    Ok(Trajectory {
        grid: *grid,
        states,
        state_dim: n,
    })
}

#[inline]
fn axpy_into(x: &[f64], alpha: f64, d: &[f64], out: &mut [f64]) {
    for ((o, xi), di) in out.iter_mut().zip(x).zip(d) {
        *o = xi + alpha * di;
    }
}

fn check_finite(s: &[f64], time: f64) -> Result<()> {
    if s.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(Error::Divergence { time })
    }
}

/// Reusable buffers for repeated evaluations of ξ̃.
#[derive(Debug, Default)]
pub(crate) struct XiScratch {
    mlp: Vec<f64>,
}

/// `out = (ξ(a) − a) / τ`, unchecked.
#[inline]
pub(crate) fn xi_tilde_into(spec: &RnnOdeSpec, a: &[f64], out: &mut [f64], scratch: &mut XiScratch) {
    spec.hidden().forward_into(a, out, &mut scratch.mlp);
    let inv_tau = 1.0 / spec.tau();
    for (o, ai) in out.iter_mut().zip(a) {
        *o = (*o - ai) * inv_tau;
    }
}

/// The RNN ODE vector field ξ̃(a) = (ξ(a) − a) / τ.
pub fn xi_tilde(spec: &RnnOdeSpec, a: &[f64]) -> Result<Vec<f64>> {
    if !(spec.tau() > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {}", spec.tau())));
    }
    check_dim("hidden state (d_0)", spec.state_dim(), a.len())?;
    let mut out = vec![0.0; a.len()];
    xi_tilde_into(spec, a, &mut out, &mut XiScratch::default());
    Ok(out)
}

/// Integrates `ȧ = ξ̃(a)` from `a(0) = φⁱⁿ(x)`.
pub fn hidden_flow(
    spec: &RnnOdeSpec,
    x: &[f64],
    grid: &TimeGrid,
    method: IntegratorKind,
) -> Result<Trajectory> {
    let a0 = spec.embed_input(x)?;
    let mut scratch = XiScratch::default();
    let field = |_t: f64, a: &[f64], out: &mut [f64]| {
        xi_tilde_into(spec, a, out, &mut scratch);
        Ok(())
    };
    integrate(field, &a0, grid, method)
}

/// Applies the softmax readout to every state of a hidden trajectory.
pub fn output_trace(spec: &RnnOdeSpec, hidden_traj: &Trajectory) -> Result<Trajectory> {
    check_dim("hidden trajectory state (d_L)", spec.state_dim(), hidden_traj.state_dim())?;
    let states = hidden_traj
        .states()
        .iter()
        .map(|a| spec.read_out(a))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(*hidden_traj.grid(), states)
}
