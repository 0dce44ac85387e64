//! Local noise stability of the quadratic mirror step.
//!
//! From the same (θ_t, g_t), the noisy and noiseless mirror steps differ by
//! −η·H̃⁻¹b with b ~ N(0, σ²I). Along a unit direction v with eigen-coefficients
//! aᵢ = ⟨v, vᵢ⟩ the expected absolute displacement is
//!
//! ```text
//! E|⟨θ̂ − θ̄, v⟩| = η·σ·sqrt((2/π)·Σᵢ (aᵢ/λᵢ)²)
//! ```
//!
//! [`analytic_shift`] evaluates this; [`monte_carlo_shift`] simulates the
//! noisy step directly.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::dp::gaussian_noise;
use crate::error::{check_dim, Error, Result};
use crate::mirror::QuadraticMirrorMap;
use crate::rng::RngStream;

const UNIT_TOL: f64 = 1e-10;

fn ensure_unit(v: &DVector<f64>) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidParameter(format!("direction must have unit norm, got {n}")));
    }
    Ok(())
}

pub fn analytic_shift(map: &QuadraticMirrorMap, eta: f64, sigma: f64, v: &DVector<f64>) -> Result<f64> {
    check_dim(map.dim(), v.len())?;
    ensure_unit(v)?;
    let coeffs = map.eigenvectors().tr_mul(v);
    let sum: f64 = coeffs
        .iter()
        .zip(map.eigenvalues().iter())
        .map(|(a, l)| (a / l).powi(2))
        .sum();
    Ok(eta * sigma * (2.0 / PI * sum).sqrt())
}

/// Mean of |⟨−η·H̃⁻¹b, v⟩| over `samples` noise draws.
pub fn monte_carlo_shift(
    map: &QuadraticMirrorMap,
    eta: f64,
    sigma: f64,
    v: &DVector<f64>,
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    check_dim(map.dim(), v.len())?;
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for _ in 0..samples {
        let b = gaussian_noise(map.dim(), sigma, rng);
        let shift = map.inverse_apply(&b)? * (-eta);
        total += shift.dot(v).abs();
    }
    Ok(total / samples as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub direction_id: String,
    #[serde(skip)]
    pub direction: DVector<f64>,
    pub analytic: f64,
    #[serde(rename = "mc")]
    pub monte_carlo: f64,
    pub samples: usize,
    #[serde(rename = "rel_err")]
    pub relative_error: f64,
}

/// One report per eigenvector of the map (ids `eig_0`, `eig_1`, … ascending
/// by eigenvalue) followed by one per extra direction (`dir_0`, …).
///
/// Each noise draw is shared by every direction; estimates for different
/// directions are therefore correlated but each is individually unbiased.
pub fn stability_sweep(
    map: &QuadraticMirrorMap,
    eta: f64,
    sigma: f64,
    extra_directions: &[DVector<f64>],
    samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<StabilityReport>> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let p = map.dim();
    let mut dirs: Vec<(String, DVector<f64>)> = (0..p)
        .map(|i| (format!("eig_{i}"), map.eigenvectors().column(i).into_owned()))
        .collect();
    for (i, d) in extra_directions.iter().enumerate() {
        check_dim(p, d.len())?;
        ensure_unit(d)?;
        dirs.push((format!("dir_{i}"), d.clone()));
    }

    let mut totals = vec![0.0; dirs.len()];
    if sigma != 0.0 {
        for _ in 0..samples {
            let b = gaussian_noise(p, sigma, rng);
            let shift = map.inverse_apply(&b)? * (-eta);
            for (acc, (_, d)) in totals.iter_mut().zip(&dirs) {
                *acc += shift.dot(d).abs();
            }
        }
    }

    dirs.into_iter()
        .zip(totals)
        .map(|((id, d), total)| {
            let analytic = analytic_shift(map, eta, sigma, &d)?;
            let mc = total / samples as f64;
            let relative_error = if analytic == 0.0 {
                mc.abs()
            } else {
                (mc - analytic).abs() / analytic
            };
            Ok(StabilityReport {
                direction_id: id,
                direction: d,
                analytic,
                monte_carlo: mc,
                samples,
                relative_error,
            })
        })
        .collect()
}

/// CSV with header `direction_id,analytic,mc,samples,rel_err`.
pub fn write_reports_csv<W: Write>(reports: &[StabilityReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
