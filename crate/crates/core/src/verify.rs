//! Numerical check that the softmax readout of the hidden flow obeys the
//! replicator cascade.
//!
//! For each input the hidden flow is integrated on its own and read out
//! through the softmax; the cascade `(a, y)` is integrated jointly from the
//! same start. Their `y` trajectories must agree up to integrator error.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::RnnOdeSpec;
use crate::odeflow::{fmt_f64, hidden_flow, output_trace, IntegratorKind, TimeGrid, Trajectory};
use crate::replicator::{integrate_augmented, integrate_cascade, InvertedReadout};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub t0: f64,
    pub t_end: f64,
    pub step: f64,
    pub n_steps: usize,
}

impl From<&TimeGrid> for GridSummary {
    fn from(g: &TimeGrid) -> Self {
        GridSummary {
            t0: g.t0(),
            t_end: g.t_end(),
            step: g.step(),
            n_steps: g.n_steps(),
        }
    }
}

/// Comparison of the augmented `(y, C)` system against the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSummary {
    pub rcond: f64,
    /// `None` when the augmented run could not be completed (see `skipped`).
    pub sup_deviation: Option<f64>,
    pub simplex_drift_max: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub grid: GridSummary,
    pub method: IntegratorKind,
    pub inputs: usize,
    /// max over inputs, times and components of `|y_cascade − softmax(W_y a + b_y)|`.
    pub sup_deviation: f64,
    /// Mean over inputs and times of the per-time sup deviation.
    pub mean_deviation: f64,
    /// max over steps of `|Σ yᵢ − 1|` before renormalization.
    pub simplex_drift_max: f64,
    pub per_time_deviation_csv_path: Option<String>,
    pub tolerance: f64,
    pub pass: bool,
    pub augmented: Option<AugmentedSummary>,
    /// Sup deviation at each grid time, over inputs and components.
    #[serde(skip)]
    pub per_time_deviation: Vec<f64>,
}

impl VerificationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn per_time_csv(&self) -> String {
        let mut out = String::from("t,deviation\n");
        let h = self.grid.step;
        for (k, d) in self.per_time_deviation.iter().enumerate() {
            let t = if k == self.grid.n_steps { self.grid.t_end } else { k as f64 * h };
            let _ = writeln!(out, "{},{}", fmt_f64(t), fmt_f64(*d));
        }
        out
    }

    /// Writes the per-time CSV to `csv` and the JSON report (pointing at it) to `json`.
    pub fn write(&mut self, json: &Path, csv: &Path) -> Result<()> {
        fs::write(csv, self.per_time_csv()).map_err(|e| Error::io(csv, e))?;
        self.per_time_deviation_csv_path = Some(csv.display().to_string());
        fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))
    }
}

fn sup_diff(a: &Trajectory, b: &Trajectory, per_time: &mut [f64]) -> f64 {
    let mut sup: f64 = 0.0;
    for (k, (ya, yb)) in a.states().iter().zip(b.states()).enumerate() {
        let d = ya
            .iter()
            .zip(yb)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        per_time[k] = per_time[k].max(d);
        sup = sup.max(d);
    }
    sup
}

/// Runs the cascade check for every input; also runs the augmented form when
/// `W_y` is square and well conditioned.
pub fn verify_theorem(
    spec: &RnnOdeSpec,
    inputs: &[Vec<f64>],
    grid: &TimeGrid,
    method: IntegratorKind,
    tolerance: f64,
) -> Result<VerificationReport> {
    if inputs.is_empty() {
        return Err(Error::Config("verification needs at least one input".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Config(format!("tolerance must be non-negative, got {tolerance}")));
    }
    let inverse = InvertedReadout::new(spec).ok();
    let mut augmented = inverse.as_ref().map(|inv| AugmentedSummary {
        rcond: inv.rcond(),
        sup_deviation: Some(0.0),
        simplex_drift_max: Some(0.0),
        skipped: None,
    });

    let mut per_time = vec![0.0; grid.len()];
    let mut per_time_sum = vec![0.0; grid.len()];
    let mut aug_per_time = vec![0.0; grid.len()];
    let mut sup: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for x in inputs {
        let reference = output_trace(spec, &hidden_flow(spec, x, grid, method)?)?;
        let cascade = integrate_cascade(spec, x, grid, method)?;
        let mut this = vec![0.0; grid.len()];
        sup = sup.max(sup_diff(&cascade.output, &reference, &mut this));
        for ((p, s), t) in per_time.iter_mut().zip(per_time_sum.iter_mut()).zip(&this) {
            *p = f64::max(*p, *t);
            *s += t;
        }
        drift = drift.max(cascade.drift.sum_max);

        if let Some(aug) = augmented.as_mut().filter(|a| a.skipped.is_none()) {
            match integrate_augmented(spec, x, grid, method) {
                Ok(run) => {
                    let d = sup_diff(&run.output, &cascade.output, &mut aug_per_time);
                    aug.sup_deviation = aug.sup_deviation.map(|s| s.max(d));
                    aug.simplex_drift_max = aug.simplex_drift_max.map(|s| s.max(run.drift.sum_max));
                }
                Err(e @ (Error::InteriorViolation { .. } | Error::Divergence { .. })) => {
                    aug.sup_deviation = None;
                    aug.simplex_drift_max = None;
                    aug.skipped = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
    }
    let count = (inputs.len() * grid.len()) as f64;
    let mean = per_time_sum.iter().sum::<f64>() / count;
    Ok(VerificationReport {
        grid: GridSummary::from(grid),
        method,
        inputs: inputs.len(),
        sup_deviation: sup,
        mean_deviation: mean,
        simplex_drift_max: drift,
        per_time_deviation_csv_path: None,
        tolerance,
        pass: sup <= tolerance,
        augmented,
        per_time_deviation: per_time,
    })
}
