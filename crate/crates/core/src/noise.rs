//! Poisson-Gaussian low-dose measurement model and statistical weights.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Sinogram, WeightDiag};
use crate::rng;

/// Clamp applied to pre-log counts before taking the logarithm.
pub const DEFAULT_CLAMP_EPSILON: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Incident photons per ray, `I₀`.
    pub incident_photons: f64,
    /// Electronic noise variance `σ²`, in counts².
    pub electronic_variance: f64,
    #[serde(default = "default_clamp")]
    pub clamp_epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    /// When false the Poisson draw is replaced by its mean.
    #[serde(default = "default_true")]
    pub sample_poisson: bool,
}

fn default_clamp() -> f64 {
    DEFAULT_CLAMP_EPSILON
}

fn default_true() -> bool {
    true
}

impl NoiseModel {
    pub fn new(incident_photons: f64, electronic_variance: f64, seed: u64) -> Result<Self> {
        let model = NoiseModel {
            incident_photons,
            electronic_variance,
            clamp_epsilon: DEFAULT_CLAMP_EPSILON,
            seed,
            sample_poisson: true,
        };
        model.validate()?;
        Ok(model)
    }

    /// `I₀ = 10⁴`, `σ² = 25`.
    pub fn low_dose(seed: u64) -> Self {
        Self::new(1e4, 25.0, seed).expect("static parameters are valid")
    }

    /// Mean counts and no electronic noise: `y` reproduces the ideal sinogram.
    pub fn noiseless(incident_photons: f64) -> Self {
        NoiseModel {
            incident_photons,
            electronic_variance: 0.0,
            clamp_epsilon: DEFAULT_CLAMP_EPSILON,
            seed: 0,
            sample_poisson: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.incident_photons.is_finite() && self.incident_photons > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "incident photons must be positive, got {}",
                self.incident_photons
            )));
        }
        if !(self.electronic_variance.is_finite() && self.electronic_variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "electronic variance must be nonnegative, got {}",
                self.electronic_variance
            )));
        }
        if !(self.clamp_epsilon > 0.0 && self.clamp_epsilon < self.incident_photons) {
            return Err(Error::InvalidParameter(format!(
                "clamp epsilon must lie in (0, I0), got {}",
                self.clamp_epsilon
            )));
        }
        Ok(())
    }
}

/// Clamped pre-log counts `max(Poisson(I₀e^{-ℓ}) + N(0, σ²), ε)` for every ray.
///
/// Rays are drawn in row-major order from stream `stream` of the model seed,
/// Poisson first then Gaussian, so a `(seed, stream)` pair fixes the result.
pub fn simulate_counts(ideal: &Sinogram, noise: &NoiseModel, stream: u64) -> Result<Array2<f64>> {
    noise.validate()?;
    if !ideal.is_finite() {
        return Err(Error::NonFinite("ideal sinogram"));
    }
    if ideal.as_slice().iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidParameter("ideal line integrals must be nonnegative".into()));
    }
    let mut rng = rng::stream(noise.seed, stream);
    let gauss = if noise.electronic_variance > 0.0 {
        Some(Normal::new(0.0, noise.electronic_variance.sqrt()).expect("finite positive sigma"))
    } else {
        None
    };
    let i0 = noise.incident_photons;
    Ok(ideal.as_array().mapv(|line| {
        let mean = i0 * (-line).exp();
        let mut counts = if !noise.sample_poisson {
            mean
        } else if mean > 0.0 {
            Poisson::new(mean).expect("positive finite mean").sample(&mut rng)
        } else {
            0.0
        };
        if let Some(g) = &gauss {
            counts += g.sample(&mut rng);
        }
        counts.max(noise.clamp_epsilon)
    }))
}

/// Low-dose post-log sinogram `y = -log(counts / I₀)`.
pub fn simulate_low_dose(ideal: &Sinogram, noise: &NoiseModel, stream: u64) -> Result<Sinogram> {
    let counts = simulate_counts(ideal, noise, stream)?;
    let i0 = noise.incident_photons;
    Ok(Sinogram::new(counts.mapv(|c| -(c / i0).ln())))
}

/// Pre-log counts recovered from a post-log sinogram, `I₀ e^{-y}`.
pub fn prelog_counts(y: &Sinogram, incident_photons: f64) -> Array2<f64> {
    y.as_array().mapv(|v| incident_photons * (-v).exp())
}

/// `w = c² / (c + σ²)` entrywise, with `c ≤ 0` mapped to zero.
pub fn statistical_weights(counts: ArrayView2<'_, f64>, electronic_variance: f64) -> WeightDiag {
    WeightDiag::new(counts.mapv(|c| {
        if c <= 0.0 {
            0.0
        } else {
            c * c / (c + electronic_variance)
        }
    }))
}

/// Statistical weights for a post-log sinogram measured under `noise`.
pub fn weights_for(y: &Sinogram, noise: &NoiseModel) -> WeightDiag {
    statistical_weights(prelog_counts(y, noise.incident_photons).view(), noise.electronic_variance)
}
