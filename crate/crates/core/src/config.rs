//! JSON run configuration. Every field is optional; unknown keys are rejected.
//!
//! ```json
//! {
//!   "arch":  { "state_dim": 3, "hidden_widths": [], "horizon": 5.0, "n_steps": 50 },
//!   "train": { "epochs": 300, "learning_rate": 0.5, "optimizer": { "sgd_momentum": { "beta": 0.5 } } },
//!   "grid":  { "step": 0.001, "method": "rk4" },
//!   "io":    { "model": "model.json", "history": "history.csv" }
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::network::{ActivationKind, Architecture, RnnOdeSpec};
use crate::odeflow::{IntegratorKind, TimeGrid};
use crate::training::TrainConfig;
use crate::verify::DEFAULT_STEP;

/// Architecture with data-dependent sizes left open.
///
/// `input_dim` and `classes` default to the dataset's M and N; if given they
/// must agree with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub input_dim: Option<usize>,
    pub state_dim: usize,
    pub classes: Option<usize>,
    pub hidden_widths: Vec<usize>,
    pub input_activation: ActivationKind,
    pub hidden_activation: ActivationKind,
    pub horizon: f64,
    pub n_steps: usize,
}

impl Default for ArchSection {
    fn default() -> Self {
        let a = Architecture::default();
        ArchSection {
            input_dim: None,
            state_dim: a.state_dim,
            classes: None,
            hidden_widths: a.hidden_widths,
            input_activation: a.input_activation,
            hidden_activation: a.hidden_activation,
            horizon: a.horizon,
            n_steps: a.n_steps,
        }
    }
}

impl ArchSection {
    pub fn resolve(&self, dataset: &Dataset) -> Result<Architecture> {
        let pick = |given: Option<usize>, actual: usize, what: &str| match given {
            Some(g) if g != actual => Err(Error::Config(format!(
                "config {what} = {g} but the dataset has {actual}"
            ))),
            _ => Ok(actual),
        };
        let arch = Architecture {
            input_dim: pick(self.input_dim, dataset.input_dim(), "arch.input_dim")?,
            state_dim: self.state_dim,
            classes: pick(self.classes, dataset.classes(), "arch.classes")?,
            hidden_widths: self.hidden_widths.clone(),
            input_activation: self.input_activation,
            hidden_activation: self.hidden_activation,
            horizon: self.horizon,
            n_steps: self.n_steps,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Integration grid for verify and trace. `horizon` defaults to the model's T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub step: f64,
    pub method: IntegratorKind,
    pub horizon: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            step: DEFAULT_STEP,
            method: IntegratorKind::Rk4,
            horizon: None,
        }
    }
}

impl GridSection {
    pub fn grid_for(&self, spec: &RnnOdeSpec) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon.unwrap_or(spec.horizon()), self.step)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchSection,
    pub train: TrainConfig,
    pub grid: GridSection,
    pub io: IoSection,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.grid.step.is_finite() && self.grid.step > 0.0) {
            return Err(Error::Config("grid.step must be positive".into()));
        }
        if let Some(h) = self.grid.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config("grid.horizon must be positive".into()));
            }
        }
        let probe = Architecture {
            input_dim: self.arch.input_dim.unwrap_or(1),
            classes: self.arch.classes.unwrap_or(2),
            state_dim: self.arch.state_dim,
            hidden_widths: self.arch.hidden_widths.clone(),
            input_activation: self.arch.input_activation,
            hidden_activation: self.arch.hidden_activation,
            horizon: self.arch.horizon,
            n_steps: self.arch.n_steps,
        };
        probe.validate()
    }
}
