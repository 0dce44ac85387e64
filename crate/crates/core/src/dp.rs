//! Privacy mechanisms: per-example clipping, Gaussian noise, and the
//! closed-form noise calibration
//!
//! ```text
//! σ² = 8·L²·T·ln(1/δ) / (ε·n)²
//! ```
//!
//! for `T` full-batch steps whose averaged clipped gradient has sensitivity
//! `L/n`. No moments accountant and no amplification by subsampling.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{ModelVector, RegressionDataset, Visibility};
use crate::error::{Error, Result};
use crate::loss::{PerExampleLoss, SquaredLoss};
use crate::rng::RngStream;

fn positive_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Noise scale for `steps` full-batch steps under (ε, δ)-DP.
pub fn calibrate_sigma(clip_norm: f64, steps: usize, epsilon: f64, delta: f64, n_private: usize) -> Result<f64> {
    positive_finite("clip norm", clip_norm)?;
    positive_finite("epsilon", epsilon)?;
    positive_finite("delta", delta)?;
    if delta >= 1.0 {
        return Err(Error::InvalidParameter(format!("delta must be < 1, got {delta}")));
    }
    if steps == 0 || n_private == 0 {
        return Err(Error::InvalidParameter("steps and n_private must be >= 1".into()));
    }
    let var = 8.0 * clip_norm * clip_norm * steps as f64 * (1.0 / delta).ln();
    Ok(var.sqrt() / (epsilon * n_private as f64))
}

/// The ε that [`calibrate_sigma`] would need to produce `sigma`.
pub fn epsilon_for_sigma(clip_norm: f64, steps: usize, sigma: f64, delta: f64, n_private: usize) -> Result<f64> {
    positive_finite("sigma", sigma)?;
    // σ is linear in 1/ε, so calibrating at ε = 1 and rescaling is exact.
    let at_unit = calibrate_sigma(clip_norm, steps, 1.0, delta, n_private)?;
    Ok(at_unit / sigma)
}

/// `v·min(1, L/‖v‖₂)`.
pub fn clip(v: &DVector<f64>, clip_norm: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm > clip_norm {
        v * (clip_norm / norm)
    } else {
        v.clone()
    }
}

/// `p` i.i.d. N(0, σ²) draws.
pub fn gaussian_noise(p: usize, sigma: f64, rng: &mut RngStream) -> DVector<f64> {
    if sigma == 0.0 {
        return DVector::zeros(p);
    }
    DVector::from_fn(p, |_, _| sigma * rng.standard_normal())
}

/// Where σ came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    /// Derived from (ε, δ) by [`calibrate_sigma`].
    Calibrated,
    /// Set directly; any reported ε is externally supplied.
    ExternallySupplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    pub steps: usize,
    pub n_private: usize,
    pub sigma: f64,
    /// Clip the noiseless averaged gradient to `clip_norm` before adding noise.
    pub post_average_clip: bool,
    pub noise_source: NoiseSource,
}

impl PrivacyConfig {
    pub fn calibrated(epsilon: f64, delta: f64, clip_norm: f64, steps: usize, n_private: usize) -> Result<Self> {
        let sigma = calibrate_sigma(clip_norm, steps, epsilon, delta, n_private)?;
        Ok(Self {
            epsilon,
            delta,
            clip_norm,
            steps,
            n_private,
            sigma,
            post_average_clip: false,
            noise_source: NoiseSource::Calibrated,
        })
    }

    /// Noise-multiplier mode: σ = multiplier · L / n, the averaged-gradient
    /// sensitivity times the multiplier. `epsilon` is reported as given.
    pub fn with_noise_multiplier(
        multiplier: f64,
        epsilon: f64,
        delta: f64,
        clip_norm: f64,
        steps: usize,
        n_private: usize,
    ) -> Result<Self> {
        positive_finite("clip norm", clip_norm)?;
        if !(multiplier.is_finite() && multiplier >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise multiplier must be >= 0, got {multiplier}")));
        }
        if n_private == 0 {
            return Err(Error::InvalidParameter("n_private must be >= 1".into()));
        }
        Ok(Self {
            epsilon,
            delta,
            clip_norm,
            steps,
            n_private,
            sigma: multiplier * clip_norm / n_private as f64,
            post_average_clip: false,
            noise_source: NoiseSource::ExternallySupplied,
        })
    }

    /// No noise and no clipping; for noise-free baselines and tests.
    pub fn non_private(n_private: usize, steps: usize) -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta: 0.0,
            clip_norm: f64::INFINITY,
            steps,
            n_private,
            sigma: 0.0,
            post_average_clip: false,
            noise_source: NoiseSource::ExternallySupplied,
        }
    }

    pub fn with_post_average_clip(mut self, on: bool) -> Self {
        self.post_average_clip = on;
        self
    }

    /// Human-readable ε label for reports.
    pub fn epsilon_label(&self) -> String {
        match self.noise_source {
            NoiseSource::Calibrated => format!("{}", self.epsilon),
            NoiseSource::ExternallySupplied => format!("{} (externally supplied)", self.epsilon),
        }
    }
}

/// `(1/n)·Σ clip(∇ℓ(θ; d), L) + b`, `b ~ N(0, σ²I)`, for the squared loss.
pub fn privatized_gradient(
    theta: &ModelVector,
    data: &RegressionDataset,
    cfg: &PrivacyConfig,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    privatized_gradient_with(&SquaredLoss, theta, data, None, cfg, 1.0, rng)
}

/// Clipped mean gradient over `rows` plus Gaussian noise.
///
/// `noise_scale` multiplies σ; minibatch callers pass `n / batch` so the
/// noise-to-sensitivity ratio matches the full-batch calibration.
pub fn privatized_gradient_with<L: PerExampleLoss + ?Sized>(
    loss: &L,
    theta: &ModelVector,
    data: &RegressionDataset,
    rows: Option<&[usize]>,
    cfg: &PrivacyConfig,
    noise_scale: f64,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if data.visibility() != Visibility::Private {
        return Err(Error::InvalidParameter(
            "privatized gradients are only computed on private data".into(),
        ));
    }
    let mut g = loss.clipped_mean_gradient(theta, data, rows, cfg.clip_norm)?;
    if cfg.post_average_clip {
        g = clip(&g, cfg.clip_norm);
    }
    g += gaussian_noise(data.p(), cfg.sigma * noise_scale, rng);
    Ok(g)
}
