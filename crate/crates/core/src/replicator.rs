//! Replicator dynamics `ṗ = diag(p)(f − 1 fᵀp)` on the probability simplex.
//!
//! Three payoff regimes are supported:
//!
//! * constant games, `f(p) = A p`;
//! * the hidden-state cascade, where the softmax readout `y(t)` of the RNN ODE is
//!   driven by the dynamic payoff `f(a) = W_y ξ̃(a)` while `ȧ = ξ̃(a)`;
//! * the augmented form for square invertible `W_y`, where `a` is reconstructed
//!   from `(y, C)` with `C = ln Σ exp(z)` the log-partition of the logits, and
//!   `C` is co-evolved as `Ċ = yᵀ W_y ξ̃(a)`.
//!
//! Every integrator here clamps `y` at zero and renormalizes it after each step,
//! recording how far the raw step drifted from the simplex first.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::network::{log_sum_exp, RnnOdeSpec};
use crate::odeflow::{
    integrate_projected, xi_tilde, xi_tilde_into, IntegratorKind, TimeGrid, Trajectory, XiScratch,
};

/// Tolerance on `Σ pᵢ = 1` accepted by [`SimplexPoint::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Smallest reciprocal condition number of `W_y` accepted by the augmented form.
pub const MIN_RCOND: f64 = 1e-10;

/// Components below this make `ln y` unusable in the augmented form.
pub const INTERIOR_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint {
    probs: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Simplex("empty probability vector".into()));
        }
        if let Some((i, v)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Simplex(format!("component {i} = {v} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Simplex(format!("components sum to {sum}, not 1")));
        }
        Ok(SimplexPoint { probs })
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(i < n, "vertex index {i} out of range for n = {n}");
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        SimplexPoint { probs }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        SimplexPoint {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexPoint::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffVector {
    values: Vec<f64>,
}

impl PayoffVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("payoff vector"));
        }
        Ok(PayoffVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `out = diag(p)(f − 1 fᵀp)`.
#[inline]
pub(crate) fn replicator_rhs_into(p: &[f64], f: &[f64], out: &mut [f64]) {
    let mean: f64 = p.iter().zip(f).map(|(pi, fi)| pi * fi).sum();
    for ((o, pi), fi) in out.iter_mut().zip(p).zip(f) {
        *o = pi * (fi - mean);
    }
}

pub fn replicator_rhs(p: &SimplexPoint, f: &PayoffVector) -> Result<Vec<f64>> {
    check_dim("payoff vector", p.len(), f.values.len())?;
    let mut out = vec![0.0; p.len()];
    replicator_rhs_into(&p.probs, &f.values, &mut out);
    Ok(out)
}

/// Worst deviation from the simplex seen before each renormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexDrift {
    /// max over steps of `|Σ yᵢ − 1|`.
    pub sum_max: f64,
    /// min over steps and components of `yᵢ`.
    pub min_component: f64,
}

impl Default for SimplexDrift {
    fn default() -> Self {
        SimplexDrift {
            sum_max: 0.0,
            min_component: f64::INFINITY,
        }
    }
}

impl SimplexDrift {
    fn record_and_renormalize(&mut self, y: &mut [f64]) {
        let sum: f64 = y.iter().sum();
        self.sum_max = self.sum_max.max((sum - 1.0).abs());
        for v in y.iter_mut() {
            self.min_component = self.min_component.min(*v);
            *v = v.max(0.0);
        }
        let clamped: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= clamped);
    }
}

/// `f(a) = W_y ξ̃(a)`.
pub fn dynamic_payoff(spec: &RnnOdeSpec, a: &[f64]) -> Result<PayoffVector> {
    check_dim("hidden state (d_L)", spec.state_dim(), a.len())?;
    let xi = xi_tilde(spec, a)?;
    PayoffVector::new(spec.readout().weights().matvec(&xi))
}

/// Joint state of the hidden flow and its readout.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub a: Vec<f64>,
    pub y: SimplexPoint,
}

/// Returns `(ȧ, ẏ)` with `ȧ = ξ̃(a)` and `ẏ` the replicator field under `f(a)`.
pub fn cascade_rhs(spec: &RnnOdeSpec, s: &CascadeState) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("cascade output state (N)", spec.classes(), s.y.len())?;
    let da = xi_tilde(spec, &s.a)?;
    let f = PayoffVector::new(spec.readout().weights().matvec(&da))?;
    let dy = replicator_rhs(&s.y, &f)?;
    Ok((da, dy))
}

#[derive(Debug, Clone)]
pub struct CascadeRun {
    pub hidden: Trajectory,
    pub output: Trajectory,
    pub drift: SimplexDrift,
}

/// Integrates the cascade from `a(0) = φⁱⁿ(x)`, `y(0) = φᵒᵘᵗ(a(0))`.
pub fn integrate_cascade(
    spec: &RnnOdeSpec,
    x: &[f64],
    grid: &TimeGrid,
    method: IntegratorKind,
) -> Result<CascadeRun> {
    let a0 = spec.embed_input(x)?;
    let y0 = spec.read_out(&a0)?;
    let d = a0.len();
    let n = y0.len();
    let w_y = spec.readout().weights();

    let mut state = a0;
    state.extend_from_slice(&y0);

    let mut scratch = XiScratch::default();
    let mut payoff = vec![0.0; n];
    let field = |_t: f64, s: &[f64], out: &mut [f64]| {
        let (a, y) = s.split_at(d);
        let (da, dy) = out.split_at_mut(d);
        xi_tilde_into(spec, a, da, &mut scratch);
        w_y.matvec_into(da, &mut payoff);
        replicator_rhs_into(y, &payoff, dy);
        Ok(())
    };
    let mut drift = SimplexDrift::default();
    let joint = integrate_projected(field, &state, grid, method, |s: &mut [f64]| {
        drift.record_and_renormalize(&mut s[d..])
    })?;
    Ok(CascadeRun {
        hidden: joint.project(0..d),
        output: joint.project(d..d + n),
        drift,
    })
}

/// Readout state plus log-partition `C = ln Σ exp(zₖ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub y: SimplexPoint,
    pub c: f64,
}

impl AugmentedState {
    /// The state corresponding to hidden vector `a`: `z = W_y a + b_y`, `y = softmax(z)`,
    /// `C = ln Σ exp(z)`.
    pub fn from_hidden(spec: &RnnOdeSpec, a: &[f64]) -> Result<Self> {
        let z = spec.logits(a)?;
        let c = log_sum_exp(&z);
        let probs: Vec<f64> = z.iter().map(|zi| (zi - c).exp()).collect();
        let sum: f64 = probs.iter().sum();
        Ok(AugmentedState {
            y: SimplexPoint::new(probs.into_iter().map(|p| p / sum).collect())?,
            c,
        })
    }
}

/// The readout inverted through a factored, well-conditioned `W_y`.
#[derive(Debug, Clone)]
pub struct InvertedReadout<'a> {
    spec: &'a RnnOdeSpec,
    lu: Lu,
    rcond: f64,
}

impl<'a> InvertedReadout<'a> {
    pub fn new(spec: &'a RnnOdeSpec) -> Result<Self> {
        let w = spec.readout().weights();
        if w.rows() != w.cols() {
            return Err(Error::NotInvertible { rcond: 0.0 });
        }
        let rcond = w.rcond()?;
        if !(rcond >= MIN_RCOND) {
            return Err(Error::NotInvertible { rcond });
        }
        Ok(InvertedReadout {
            spec,
            lu: w.lu()?,
            rcond,
        })
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// `a = W_y⁻¹(ln y + 1 C − b_y)`.
    pub fn reconstruct_hidden(&self, y: &[f64], c: f64) -> Result<Vec<f64>> {
        check_dim("augmented output state (N)", self.spec.classes(), y.len())?;
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(**v >= INTERIOR_FLOOR)) {
            return Err(Error::InteriorViolation { index, value });
        }
        let rhs: Vec<f64> = y
            .iter()
            .zip(self.spec.readout().bias())
            .map(|(yi, bi)| yi.ln() + c - bi)
            .collect();
        Ok(self.lu.solve(&rhs))
    }

    fn rhs_into(&self, y: &[f64], c: f64, dy: &mut [f64], scratch: &mut XiScratch) -> Result<f64> {
        let a = self.reconstruct_hidden(y, c)?;
        let mut xi = vec![0.0; a.len()];
        xi_tilde_into(self.spec, &a, &mut xi, scratch);
        let z_dot = self.spec.readout().weights().matvec(&xi);
        replicator_rhs_into(y, &z_dot, dy);
        Ok(y.iter().zip(&z_dot).map(|(yi, zi)| yi * zi).sum())
    }

    pub fn rhs(&self, s: &AugmentedState) -> Result<(Vec<f64>, f64)> {
        let mut dy = vec![0.0; s.y.len()];
        let dc = self.rhs_into(s.y.probs(), s.c, &mut dy, &mut XiScratch::default())?;
        Ok((dy, dc))
    }
}

/// `(ẏ, Ċ)` of the augmented form. Refuses singular or ill-conditioned `W_y`.
pub fn augmented_rhs(spec: &RnnOdeSpec, s: &AugmentedState) -> Result<(Vec<f64>, f64)> {
    InvertedReadout::new(spec)?.rhs(s)
}

#[derive(Debug, Clone)]
pub struct AugmentedRun {
    pub output: Trajectory,
    pub log_partition: Vec<f64>,
    pub drift: SimplexDrift,
}

pub fn integrate_augmented(
    spec: &RnnOdeSpec,
    x: &[f64],
    grid: &TimeGrid,
    method: IntegratorKind,
) -> Result<AugmentedRun> {
    let inv = InvertedReadout::new(spec)?;
    let a0 = spec.embed_input(x)?;
    let s0 = AugmentedState::from_hidden(spec, &a0)?;
    let n = s0.y.len();
    let mut state = s0.y.probs().to_vec();
    state.push(s0.c);

    let mut scratch = XiScratch::default();
    let field = |_t: f64, s: &[f64], out: &mut [f64]| {
        let (dy, dc) = out.split_at_mut(n);
        dc[0] = inv.rhs_into(&s[..n], s[n], dy, &mut scratch)?;
        Ok(())
    };
    let mut drift = SimplexDrift::default();
    let joint = integrate_projected(field, &state, grid, method, |s: &mut [f64]| {
        drift.record_and_renormalize(&mut s[..n])
    })?;
    Ok(AugmentedRun {
        output: joint.project(0..n),
        log_partition: joint.states().iter().map(|s| s[n]).collect(),
        drift,
    })
}

#[derive(Debug, Clone)]
pub struct GameRun {
    pub trajectory: Trajectory,
    pub drift: SimplexDrift,
}

/// Replicator dynamics of the symmetric matrix game `f(p) = A p`.
pub fn integrate_constant_game(
    payoff: &Matrix,
    p0: &SimplexPoint,
    grid: &TimeGrid,
    method: IntegratorKind,
) -> Result<GameRun> {
    check_dim("payoff matrix rows", p0.len(), payoff.rows())?;
    check_dim("payoff matrix columns", p0.len(), payoff.cols())?;
    let mut f = vec![0.0; p0.len()];
    let field = |_t: f64, p: &[f64], out: &mut [f64]| {
        payoff.matvec_into(p, &mut f);
        replicator_rhs_into(p, &f, out);
        Ok(())
    };
    let mut drift = SimplexDrift::default();
    let trajectory = integrate_projected(field, p0.probs(), grid, method, |p: &mut [f64]| {
        drift.record_and_renormalize(p)
    })?;
    Ok(GameRun { trajectory, drift })
}

/// 1-based index of the largest component; ties go to the lowest index.
pub fn classify(y: &SimplexPoint) -> usize {
    argmax(y.probs()) + 1
}

/// 0-based argmax with lowest-index tie-breaking.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ActivationKind, LayerParams, MlpParams};

    fn sp(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    fn pv(v: &[f64]) -> PayoffVector {
        PayoffVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexPoint::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![1.5, -0.5]).is_err());
        assert!(SimplexPoint::new(vec![]).is_err());
        assert!(SimplexPoint::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn rhs_examples() {
        let f = pv(&[3.0, -1.0, 2.0]);
        assert_eq!(replicator_rhs(&SimplexPoint::vertex(3, 0), &f).unwrap(), vec![0.0; 3]);
        assert_eq!(replicator_rhs(&sp(&[0.5, 0.5]), &pv(&[1.0, 0.0])).unwrap(), vec![0.25, -0.25]);
        let p = sp(&[0.2, 0.3, 0.5]);
        let out = replicator_rhs(&p, &pv(&[4.2, 4.2, 4.2])).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-15));
        assert!(replicator_rhs(&p, &pv(&[1.0])).is_err());
    }

    fn scalar_chain_spec() -> RnnOdeSpec {
        // hidden a ↦ 2a, τ = 1, W_y = [[3],[0]] so f = [3·(2a − a), 0].
        let one = |w: f64, act| {
            LayerParams::new(Matrix::from_rows(&[vec![w]]).unwrap(), vec![0.0], act).unwrap()
        };
        let readout = LayerParams::new(
            Matrix::from_rows(&[vec![3.0], vec![0.0]]).unwrap(),
            vec![0.0, 0.0],
            ActivationKind::Softmax,
        )
        .unwrap();
        RnnOdeSpec::new(
            one(1.0, ActivationKind::Identity),
            MlpParams::single(one(2.0, ActivationKind::Identity)).unwrap(),
            readout,
            1.0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn dynamic_payoff_examples() {
        let spec = scalar_chain_spec();
        assert_eq!(dynamic_payoff(&spec, &[1.0]).unwrap().values(), &[3.0, 0.0]);

        let frozen = RnnOdeSpec::new(
            spec.embed().clone(),
            MlpParams::identity(1),
            spec.readout().clone(),
            1.0,
            1,
        )
        .unwrap();
        assert_eq!(dynamic_payoff(&frozen, &[0.3]).unwrap().values(), &[0.0, 0.0]);

        let zero_readout =
            LayerParams::new(Matrix::zeros(2, 1), vec![0.5, 0.1], ActivationKind::Softmax).unwrap();
        let z = RnnOdeSpec::new(spec.embed().clone(), spec.hidden().clone(), zero_readout, 1.0, 1)
            .unwrap();
        assert_eq!(dynamic_payoff(&z, &[0.3]).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn cascade_rhs_examples() {
        let spec = scalar_chain_spec();
        let (da, dy) = cascade_rhs(
            &spec,
            &CascadeState {
                a: vec![1.0],
                y: sp(&[0.5, 0.5]),
            },
        )
        .unwrap();
        assert_eq!(da, vec![1.0]);
        assert_eq!(dy, vec![0.75, -0.75]);

        let (_, dy) = cascade_rhs(
            &spec,
            &CascadeState {
                a: vec![-4.0],
                y: SimplexPoint::vertex(2, 1),
            },
        )
        .unwrap();
        assert_eq!(dy, vec![0.0, 0.0]);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&sp(&[0.1, 0.2, 0.7])), 3);
        assert_eq!(classify(&sp(&[0.5, 0.5])), 1);
        assert_eq!(classify(&SimplexPoint::uniform(7)), 1);
    }

    #[test]
    fn constant_game_zero_matrix_is_static() {
        let p0 = sp(&[0.2, 0.3, 0.5]);
        let g = TimeGrid::new(5.0, 0.01).unwrap();
        let run = integrate_constant_game(&Matrix::zeros(3, 3), &p0, &g, IntegratorKind::Rk4).unwrap();
        assert!(run.trajectory.states().iter().all(|s| s == p0.probs()));
    }

    #[test]
    fn augmented_rejects_singular_and_boundary() {
        let spec = scalar_chain_spec();
        assert!(matches!(
            augmented_rhs(
                &spec,
                &AugmentedState {
                    y: sp(&[0.5, 0.5]),
                    c: 0.0
                }
            ),
            Err(Error::NotInvertible { .. })
        ));

        let square = RnnOdeSpec::new(
            LayerParams::identity(2),
            MlpParams::identity(2),
            LayerParams::new(
                Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap(),
                vec![0.0; 2],
                ActivationKind::Softmax,
            )
            .unwrap(),
            1.0,
            1,
        )
        .unwrap();
        assert!(matches!(InvertedReadout::new(&square), Err(Error::NotInvertible { .. })));

        let ok = RnnOdeSpec::new(
            LayerParams::identity(2),
            MlpParams::identity(2),
            LayerParams::new(Matrix::identity(2), vec![0.0; 2], ActivationKind::Softmax).unwrap(),
            1.0,
            1,
        )
        .unwrap();
        let err = augmented_rhs(
            &ok,
            &AugmentedState {
                y: SimplexPoint::vertex(2, 0),
                c: 0.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InteriorViolation { index: 1, .. }));

        let (dy, dc) = augmented_rhs(
            &ok,
            &AugmentedState {
                y: sp(&[0.3, 0.7]),
                c: 1.2,
            },
        )
        .unwrap();
        assert_eq!((dy, dc), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn drift_renormalization() {
        let mut d = SimplexDrift::default();
        let mut y = vec![0.6, 0.5, -1e-14];
        d.record_and_renormalize(&mut y);
        assert!((d.sum_max - 0.1).abs() < 1e-12);
        assert_eq!(d.min_component, -1e-14);
        assert_eq!(y[2], 0.0);
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
