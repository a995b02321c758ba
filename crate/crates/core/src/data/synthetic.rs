use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DomainDataset, Sample};
use crate::error::{DaalError, Result};
use crate::seed;

/// Ambient dimension of generated samples.
pub const SYNTHETIC_INPUT_DIM: usize = 16;

/// Parameters of the rotated-prototype generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedGaussians {
    pub seed: u64,
    /// One domain per angle, in degrees.
    pub angles: Vec<f64>,
    pub classes: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    /// Prototype directions are spread evenly over this arc, in degrees.
    #[serde(default = "default_arc")]
    pub arc: f64,
    /// Prototype `c` has radius `1 + c * radius_step`.
    #[serde(default = "default_radius_step")]
    pub radius_step: f64,
}

fn default_arc() -> f64 {
    90.0
}

fn default_radius_step() -> f64 {
    1.0
}

impl Default for RotatedGaussians {
    fn default() -> Self {
        Self {
            seed: 7,
            angles: vec![0.0, 30.0, 60.0, 90.0],
            classes: 5,
            per_class: 200,
            noise_sigma: 0.3,
            arc: default_arc(),
            radius_step: default_radius_step(),
        }
    }
}

/// Class `c` sits at angle `arc * c / K` with radius `1 + c * radius_step`.
/// The radius survives rotation, the angle does not.
fn prototype(c: usize, p: &RotatedGaussians) -> [f64; 2] {
    let theta = (p.arc * c as f64 / p.classes as f64).to_radians();
    let r = 1.0 + p.radius_step * c as f64;
    [r * theta.cos(), r * theta.sin()]
}

/// Two orthonormal columns in R^16 (Gram-Schmidt on Gaussian draws).
fn embedding(seed: u64) -> [[f64; SYNTHETIC_INPUT_DIM]; 2] {
    let mut rng = seed::rng(seed::derive(seed, "embed", &[]));
    let mut basis = [[0.0; SYNTHETIC_INPUT_DIM]; 2];
    for col in 0..2 {
        let mut v = [0.0; SYNTHETIC_INPUT_DIM];
        for x in v.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        for prev in 0..col {
            let dot: f64 = v.iter().zip(&basis[prev]).map(|(a, b)| a * b).sum();
            for (x, b) in v.iter_mut().zip(&basis[prev]) {
                *x -= dot * b;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        basis[col] = v;
    }
    basis
}

/// Generate one domain per angle. Each sample is its class prototype rotated
/// by the domain angle, placed on a fixed random 2-plane of R^16, plus
/// isotropic Gaussian noise in all 16 coordinates.
pub fn generate_rotated_gaussians(p: &RotatedGaussians) -> Result<DomainDataset> {
    if p.angles.len() < 3 {
        return Err(DaalError::Config("need at least 3 domains".into()));
    }
    if p.classes < 2 {
        return Err(DaalError::Config("need at least 2 classes".into()));
    }
    if p.per_class < 2 {
        return Err(DaalError::Config("per_class must be at least 2".into()));
    }
    if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
        return Err(DaalError::Config(format!("bad noise_sigma {}", p.noise_sigma)));
    }
    if !(p.arc.is_finite() && p.radius_step.is_finite() && p.radius_step >= 0.0) {
        return Err(DaalError::Config("bad prototype arc or radius step".into()));
    }
    for (i, a) in p.angles.iter().enumerate() {
        if !a.is_finite() {
            return Err(DaalError::Config(format!("non-finite angle {a}")));
        }
        if p.angles[..i].contains(a) {
            return Err(DaalError::Config(format!("duplicate angle {a}")));
        }
    }

    let basis = embedding(p.seed);
    let mut samples = Vec::with_capacity(p.angles.len() * p.classes * p.per_class);
    for (e, &angle) in p.angles.iter().enumerate() {
        let (s, c) = angle.to_radians().sin_cos();
        let mut rng = seed::rng(seed::derive(p.seed, "noise", &[e as u64]));
        for k in 0..p.classes {
            let [px, py] = prototype(k, p);
            let rx = c * px - s * py;
            let ry = s * px + c * py;
            for _ in 0..p.per_class {
                let x = (0..SYNTHETIC_INPUT_DIM)
                    .map(|j| {
                        let clean = rx * basis[0][j] + ry * basis[1][j];
                        if p.noise_sigma > 0.0 {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            clean + p.noise_sigma * z
                        } else {
                            clean
                        }
                    })
                    .collect();
                samples.push(Sample { id: 0, x, y: k, e });
            }
        }
    }
    let names = p.angles.iter().map(|a| format!("rot{a}")).collect();
    DomainDataset::new(samples, names)
}
