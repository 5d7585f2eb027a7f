use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};

/// Identifier of the generator behind every seeded dataset: `ChaCha8Rng::seed_from_u64`
/// (rand_chacha 0.3) with Gaussian draws from rand_distr's `StandardNormal`.
pub const RNG_ALGORITHM: &str = "chacha8";

/// `count` points evenly spaced on a circle of `radius`, the first at angle π/2.
pub fn blob_centers(count: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..count)
        .map(|k| {
            let angle = std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * k as f64 / count as f64;
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

/// Isotropic Gaussian clusters in ℝ², one label per center, class-major order.
pub fn gen_blobs(n_per_class: usize, centers: &[[f64; 2]], sigma: f64, seed: u64) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(Error::Config("blobs need at least two centers".into()));
    }
    for (i, a) in centers.iter().enumerate() {
        if centers[..i].contains(a) {
            return Err(Error::Config(format!("duplicate blob center {a:?}")));
        }
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n_per_class * centers.len());
    let mut labels = Vec::with_capacity(n_per_class * centers.len());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            inputs.push(vec![center[0] + sigma * dx, center[1] + sigma * dy]);
            labels.push(c + 1);
        }
    }
    Ok(Dataset::new("blobs", 2, centers.len(), inputs, &labels)?.with_seed(Some(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoClassKind {
    /// Label 1 on a circle of radius 1, label 2 on a circle of radius 2.5.
    ConcentricRings,
    /// Two interleaved half circles ("moons").
    InterleavedArcs,
}

impl TwoClassKind {
    pub fn name(self) -> &'static str {
        match self {
            TwoClassKind::ConcentricRings => "rings",
            TwoClassKind::InterleavedArcs => "arcs",
        }
    }
}

pub const INNER_RING_RADIUS: f64 = 1.0;
pub const OUTER_RING_RADIUS: f64 = 2.5;

/// `n` points in ℝ², `⌈n/2⌉` with label 1 then the rest with label 2, each
/// perturbed by isotropic Gaussian noise of standard deviation `noise`.
pub fn gen_two_class(kind: TwoClassKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config("two-class datasets need n >= 2".into()));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = n.div_ceil(2);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let label = if j < first { 1 } else { 2 };
        let [x, y] = match kind {
            TwoClassKind::ConcentricRings => {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = if label == 1 { INNER_RING_RADIUS } else { OUTER_RING_RADIUS };
                [r * angle.cos(), r * angle.sin()]
            }
            TwoClassKind::InterleavedArcs => {
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                if label == 1 {
                    [angle.cos(), angle.sin()]
                } else {
                    [1.0 - angle.cos(), 0.5 - angle.sin()]
                }
            }
        };
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        inputs.push(vec![x + noise * dx, y + noise * dy]);
        labels.push(label);
    }
    Ok(Dataset::new(kind.name(), 2, 2, inputs, &labels)?.with_seed(Some(seed)))
}
