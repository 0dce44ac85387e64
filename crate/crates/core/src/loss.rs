//! The linear-regression loss family and the per-example loss abstraction
//! the optimizers are written against.
//!
//! Training uses the half squared error ½(y − ⟨x, θ⟩)². Reported metrics use
//! the plain squared error (y − ⟨x, θ⟩)², so a model at the population optimum
//! reports exactly the response noise variance.

use nalgebra::DVector;

use crate::data::{ModelVector, RegressionDataset};
use crate::error::{check_dim, Error, Result};

/// ½(y − ⟨x, θ⟩)².
pub fn regression_loss(theta: &ModelVector, x: &DVector<f64>, y: f64) -> Result<f64> {
    check_dim(theta.dim(), x.len())?;
    let r = y - x.dot(theta);
    Ok(0.5 * r * r)
}

/// −(y − ⟨x, θ⟩)·x.
pub fn regression_gradient(theta: &ModelVector, x: &DVector<f64>, y: f64) -> Result<DVector<f64>> {
    check_dim(theta.dim(), x.len())?;
    let r = y - x.dot(theta);
    Ok(x * (-r))
}

/// Mean half squared error over the dataset.
pub fn batch_loss(theta: &ModelVector, data: &RegressionDataset) -> Result<f64> {
    SquaredLoss.mean_loss(theta, data, None)
}

/// Mean gradient of [`batch_loss`].
pub fn batch_gradient(theta: &ModelVector, data: &RegressionDataset) -> Result<DVector<f64>> {
    SquaredLoss.mean_gradient(theta, data, None)
}

/// Mean plain squared error, the reported metric.
pub fn mean_squared_error(theta: &ModelVector, data: &RegressionDataset) -> Result<f64> {
    Ok(2.0 * batch_loss(theta, data)?)
}

/// A loss that decomposes over examples. Optimizers take any implementor.
///
/// The dataset-level methods have straightforward default implementations
/// built from [`PerExampleLoss::loss`] and [`PerExampleLoss::gradient`];
/// implementors may override them with vectorized versions.
pub trait PerExampleLoss: Send + Sync {
    fn loss(&self, theta: &DVector<f64>, x: &DVector<f64>, y: f64) -> f64;

    fn gradient(&self, theta: &DVector<f64>, x: &DVector<f64>, y: f64) -> DVector<f64>;

    /// Mean loss over `rows` (all rows when `None`).
    fn mean_loss(&self, theta: &DVector<f64>, data: &RegressionDataset, rows: Option<&[usize]>) -> Result<f64> {
        check_dim(data.p(), theta.len())?;
        let idx = row_list(data, rows)?;
        let total: f64 = idx
            .iter()
            .map(|&i| self.loss(theta, &data.row(i), data.responses()[i]))
            .sum();
        Ok(total / idx.len() as f64)
    }

    fn mean_gradient(
        &self,
        theta: &DVector<f64>,
        data: &RegressionDataset,
        rows: Option<&[usize]>,
    ) -> Result<DVector<f64>> {
        check_dim(data.p(), theta.len())?;
        let idx = row_list(data, rows)?;
        let mut acc = DVector::zeros(data.p());
        for &i in &idx {
            acc += self.gradient(theta, &data.row(i), data.responses()[i]);
        }
        Ok(acc / idx.len() as f64)
    }

    /// Mean of per-example gradients, each first scaled to norm at most `clip`.
    fn clipped_mean_gradient(
        &self,
        theta: &DVector<f64>,
        data: &RegressionDataset,
        rows: Option<&[usize]>,
        clip: f64,
    ) -> Result<DVector<f64>> {
        check_dim(data.p(), theta.len())?;
        let idx = row_list(data, rows)?;
        let mut acc = DVector::zeros(data.p());
        for &i in &idx {
            let g = self.gradient(theta, &data.row(i), data.responses()[i]);
            acc += crate::dp::clip(&g, clip);
        }
        Ok(acc / idx.len() as f64)
    }
}

fn row_list(data: &RegressionDataset, rows: Option<&[usize]>) -> Result<Vec<usize>> {
    match rows {
        None => Ok((0..data.n()).collect()),
        Some([]) => Err(Error::EmptyDataset),
        Some(r) => {
            if let Some(&bad) = r.iter().find(|&&i| i >= data.n()) {
                return Err(Error::InvalidParameter(format!("row index {bad} out of range")));
            }
            Ok(r.to_vec())
        }
    }
}

/// ½(y − ⟨x, θ⟩)² with vectorized dataset-level kernels.
///
/// Per-example gradients are −r·x, so clipping only rescales the residual:
/// the clipped mean is −Xᵀw/n with wᵢ = rᵢ·min(1, L/(|rᵢ|·‖xᵢ‖)).
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl SquaredLoss {
    fn residuals(
        theta: &DVector<f64>,
        data: &RegressionDataset,
        rows: Option<&[usize]>,
    ) -> Result<(DVector<f64>, Option<RegressionDataset>)> {
        check_dim(data.p(), theta.len())?;
        match rows {
            None => Ok((data.responses() - data.predict(theta)?, None)),
            Some(r) => {
                let sub = data.subset(r)?;
                Ok((sub.responses() - sub.predict(theta)?, Some(sub)))
            }
        }
    }
}

impl PerExampleLoss for SquaredLoss {
    fn loss(&self, theta: &DVector<f64>, x: &DVector<f64>, y: f64) -> f64 {
        let r = y - x.dot(theta);
        0.5 * r * r
    }

    fn gradient(&self, theta: &DVector<f64>, x: &DVector<f64>, y: f64) -> DVector<f64> {
        let r = y - x.dot(theta);
        x * (-r)
    }

    fn mean_loss(&self, theta: &DVector<f64>, data: &RegressionDataset, rows: Option<&[usize]>) -> Result<f64> {
        let (r, _) = Self::residuals(theta, data, rows)?;
        Ok(0.5 * r.norm_squared() / r.len() as f64)
    }

    fn mean_gradient(
        &self,
        theta: &DVector<f64>,
        data: &RegressionDataset,
        rows: Option<&[usize]>,
    ) -> Result<DVector<f64>> {
        let (r, sub) = Self::residuals(theta, data, rows)?;
        let d = sub.as_ref().unwrap_or(data);
        Ok(d.tr_mul(&r)? * (-1.0 / r.len() as f64))
    }

    fn clipped_mean_gradient(
        &self,
        theta: &DVector<f64>,
        data: &RegressionDataset,
        rows: Option<&[usize]>,
        clip: f64,
    ) -> Result<DVector<f64>> {
        let (mut r, sub) = Self::residuals(theta, data, rows)?;
        let d = sub.as_ref().unwrap_or(data);
        let norms_sq = d.row_norms_sq();
        for (ri, &nsq) in r.iter_mut().zip(norms_sq.iter()) {
            let norm = ri.abs() * nsq.sqrt();
            if norm > clip {
                *ri *= clip / norm;
            }
        }
        Ok(d.tr_mul(&r)? * (-1.0 / r.len() as f64))
    }
}
