//! Labelled datasets: synthetic generators, MNIST IDX files, and a CSV format.
//!
//! Labels are 1-based at every public boundary (`1..=N`) and stored 0-based.

mod csv;
mod idx;
mod synthetic;

pub use self::csv::{load_csv, save_csv};
pub use self::idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, IdxImages};
pub use self::synthetic::{blob_centers, gen_blobs, gen_two_class, TwoClassKind, RNG_ALGORITHM};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// `l = e_label` with a 1-based `label`.
pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label == 0 || label > classes {
        return Err(Error::Label { label, classes });
    }
    let mut v = vec![0.0; classes];
    v[label - 1] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    input_dim: usize,
    classes: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<usize>,
    seed: Option<u64>,
}

impl Dataset {
    /// `labels` are 1-based.
    pub fn new(
        name: impl Into<String>,
        input_dim: usize,
        classes: usize,
        inputs: Vec<Vec<f64>>,
        labels: &[usize],
    ) -> Result<Self> {
        let name = name.into();
        if name.contains([',', '=', '\n', '\r']) {
            return Err(Error::Config(format!(
                "dataset name {name:?} may not contain ',', '=' or newlines"
            )));
        }
        if classes == 0 {
            return Err(Error::Config("a dataset needs at least one class".into()));
        }
        check_dim("dataset labels", inputs.len(), labels.len())?;
        for x in &inputs {
            check_dim("dataset input (M)", input_dim, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("dataset input"));
            }
        }
        let targets = labels
            .iter()
            .map(|&l| {
                if l == 0 || l > classes {
                    Err(Error::Label { label: l, classes })
                } else {
                    Ok(l - 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            name,
            input_dim,
            classes,
            inputs,
            targets,
            seed: None,
        })
    }

    /// Builds a dataset from one-hot label vectors.
    pub fn from_one_hot(
        name: impl Into<String>,
        input_dim: usize,
        inputs: Vec<Vec<f64>>,
        one_hot_labels: &[Vec<f64>],
    ) -> Result<Self> {
        let classes = one_hot_labels.first().map_or(1, Vec::len);
        let labels = one_hot_labels
            .iter()
            .map(|l| {
                check_dim("one-hot label", classes, l.len())?;
                let ones: Vec<usize> = (0..l.len()).filter(|&i| l[i] == 1.0).collect();
                let zeros = l.iter().filter(|&&v| v == 0.0).count();
                if ones.len() != 1 || zeros != l.len() - 1 {
                    return Err(Error::Config(format!("{l:?} is not a one-hot vector")));
                }
                Ok(ones[0] + 1)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(name, input_dim, classes, inputs, &labels)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// M.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// N.
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// D.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn input(&self, j: usize) -> &[f64] {
        &self.inputs[j]
    }

    /// 1-based label of datum `j`.
    pub fn label(&self, j: usize) -> usize {
        self.targets[j] + 1
    }

    /// 0-based class of datum `j`.
    pub fn class_index(&self, j: usize) -> usize {
        self.targets[j]
    }

    pub fn one_hot_label(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.classes];
        v[self.targets[j]] = 1.0;
        v
    }

    pub fn labels(&self) -> Vec<usize> {
        self.targets.iter().map(|t| t + 1).collect()
    }

    /// Number of data per 1-based label, indexed from 0.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &t in &self.targets {
            counts[t] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            input_dim: self.input_dim,
            classes: self.classes,
            inputs: indices.iter().map(|&j| self.inputs[j].clone()).collect(),
            targets: indices.iter().map(|&j| self.targets[j]).collect(),
            seed: self.seed,
        }
    }

    /// The first `n` data (or all of them if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Seeded shuffle, then the first `round(train_fraction · D)` data become the training part.
    pub fn shuffle_split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!(
                "train fraction must lie in [0, 1], got {train_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (train_fraction * self.len() as f64).round() as usize;
        Ok((self.subset(&idx[..cut]), self.subset(&idx[cut..])))
    }
}
