//! Quadratic mirror maps built from public data.
//!
//! For the squared loss the public objective Ψ(θ) = (1/n_pub)·Σ ½(y − ⟨x, θ⟩)²
//! has the constant Hessian H = XᵀX/n_pub, so the mirror step reduces to a
//! linear solve. The map stores H̃ = (H + γI)/λ_min(H + γI): ridged for
//! invertibility and scaled so that H̃⁻¹ has largest eigenvalue exactly one.
//! With H ∝ I this makes the mirror step identical to a plain gradient step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{ModelVector, RegressionDataset};
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// (1/n)·XᵀX.
pub fn build_public_hessian(pub_data: &RegressionDataset) -> Result<DMatrix<f64>> {
    let x = pub_data.features();
    let mut h = x.tr_mul(x);
    h /= pub_data.n() as f64;
    symmetrize(&mut h);
    Ok(h)
}

/// The default ridge: 1e-6 times the mean eigenvalue of `h`.
pub fn default_ridge(h: &DMatrix<f64>) -> f64 {
    1e-6 * h.trace() / h.nrows().max(1) as f64
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn ensure_symmetric(h: &DMatrix<f64>) -> Result<()> {
    if !h.is_square() {
        return Err(Error::InvalidParameter(format!(
            "expected a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let asym = (h - h.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::InvalidParameter(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sorted_eigen(h: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(h.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[derive(Debug, Clone)]
pub struct QuadraticMirrorMap {
    hessian: DMatrix<f64>,
    gamma: f64,
    normalizer: f64,
    normalized: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl QuadraticMirrorMap {
    /// H̃ = (H + γI)/λ_min(H + γI).
    pub fn regularize_normalize(h: &DMatrix<f64>, gamma: f64) -> Result<Self> {
        ensure_symmetric(h)?;
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {gamma}")));
        }
        let p = h.nrows();
        let mut ridged = h + DMatrix::identity(p, p) * gamma;
        symmetrize(&mut ridged);
        let (values, vectors) = sorted_eigen(&ridged);
        let lo = values[0];
        let hi = values[p - 1];
        if !(lo > p as f64 * f64::EPSILON * hi.abs()) {
            return Err(Error::NotPositiveDefinite(format!(
                "H + γI has smallest eigenvalue {lo:e} (largest {hi:e})"
            )));
        }
        let normalized = ridged / lo;
        let mut eigenvalues = values / lo;
        eigenvalues[0] = 1.0;
        Ok(Self {
            hessian: h.clone(),
            gamma,
            normalizer: lo,
            normalized,
            eigenvalues,
            eigenvectors: vectors,
        })
    }

    /// Builds the map from public data with the default ridge.
    pub fn from_public(pub_data: &RegressionDataset) -> Result<Self> {
        let h = build_public_hessian(pub_data)?;
        let gamma = default_ridge(&h);
        Self::regularize_normalize(&h, gamma)
    }

    /// Ψ = ½‖θ‖², under which mirror descent is gradient descent.
    pub fn identity(p: usize) -> Self {
        Self {
            hessian: DMatrix::identity(p, p),
            gamma: 0.0,
            normalizer: 1.0,
            normalized: DMatrix::identity(p, p),
            eigenvalues: DVector::from_element(p, 1.0),
            eigenvectors: DMatrix::identity(p, p),
        }
    }

    pub fn dim(&self) -> usize {
        self.normalized.nrows()
    }

    /// The un-ridged, un-normalized Hessian this map was built from.
    pub fn raw_hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// λ_min(H + γI), the divisor applied during normalization.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// H̃.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.normalized
    }

    /// Eigenvalues of H̃, ascending. The first is exactly one.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors of H̃ as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// H̃·v.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(&self.normalized * v)
    }

    /// H̃⁻¹·v through the cached eigendecomposition.
    pub fn inverse_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        let mut coeffs = self.eigenvectors.tr_mul(v);
        coeffs.component_div_assign(&self.eigenvalues);
        Ok(&self.eigenvectors * coeffs)
    }

    /// Ψ̃(θ) = ½θᵀH̃θ, the quadratic part of the mirror potential.
    pub fn potential(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * theta.dot(&self.apply(theta)?))
    }

    /// B(a, b) = ½(a − b)ᵀH̃(a − b).
    pub fn bregman(&self, a: &ModelVector, b: &ModelVector) -> Result<f64> {
        check_dim(self.dim(), a.dim())?;
        check_dim(self.dim(), b.dim())?;
        let d = a.as_vector() - b.as_vector();
        Ok(0.5 * d.dot(&(&self.normalized * &d)).max(0.0))
    }
}

/// Minimizer of (1/n)·Σ ½(y − ⟨x, θ⟩)² + (γ/2)·‖θ‖².
pub fn public_optimum(pub_data: &RegressionDataset, gamma: f64) -> Result<ModelVector> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {gamma}")));
    }
    let p = pub_data.p();
    let n = pub_data.n() as f64;
    let x = pub_data.features();
    let mut a = x.tr_mul(x) / n + DMatrix::identity(p, p) * gamma;
    symmetrize(&mut a);
    let rhs = x.tr_mul(pub_data.responses()) / n;
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("normal equations are singular".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d * d), hi.max(d * d)));
    if lo <= p as f64 * f64::EPSILON * hi {
        return Err(Error::NotPositiveDefinite(format!(
            "normal equations are numerically singular (pivot ratio {:e})",
            lo / hi
        )));
    }
    let mut theta = chol.solve(&rhs);
    // One step of iterative refinement.
    let resid = &rhs - &a * &theta;
    theta += chol.solve(&resid);
    Ok(ModelVector::new(theta))
}

/// Monte-Carlo Gaussian width of the axis-aligned ellipsoid with the given
/// semi-axes: the mean over draws g ~ N(0, I) of ‖diag(r)·g‖₂.
pub fn gaussian_width_mc(radii: &[f64], samples: usize, rng: &mut RngStream) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if radii.iter().any(|&r| !(r.is_finite() && r >= 0.0)) {
        return Err(Error::InvalidParameter("radii must be finite and nonnegative".into()));
    }
    let mut total = 0.0;
    for _ in 0..samples {
        let sq: f64 = radii
            .iter()
            .map(|&r| {
                let g = rng.standard_normal();
                (r * g) * (r * g)
            })
            .sum();
        total += sq.sqrt();
    }
    Ok(total / samples as f64)
}

/// Spectrum of H̄^{-1/2}·Ĥ·H̄^{-1/2} on the range of the population Hessian H̄.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Dimension of the range of H̄ the whitening acts on.
    pub rank: usize,
    /// Largest |entry| of Ĥ projected onto the null space of H̄; zero when
    /// the empirical Hessian lives entirely in the population range.
    pub null_leak: f64,
}

impl SandwichReport {
    pub fn within(&self, lower: f64, upper: f64) -> bool {
        self.min_eigenvalue >= lower && self.max_eigenvalue <= upper
    }
}

/// Whitens `empirical` by `population` and reports the extreme eigenvalues.
/// Eigen-directions of `population` below `rel_tol·λ_max` are treated as null.
pub fn spectral_sandwich(population: &DMatrix<f64>, empirical: &DMatrix<f64>, rel_tol: f64) -> Result<SandwichReport> {
    ensure_symmetric(population)?;
    ensure_symmetric(empirical)?;
    check_dim(population.nrows(), empirical.nrows())?;
    let (values, vectors) = sorted_eigen(population);
    let p = values.len();
    let top = values[p - 1];
    if !(top > 0.0) {
        return Err(Error::NotPositiveDefinite("population Hessian is zero".into()));
    }
    let keep: Vec<usize> = (0..p).filter(|&i| values[i] > rel_tol * top).collect();
    let null: Vec<usize> = (0..p).filter(|&i| values[i] <= rel_tol * top).collect();
    let whiten = DMatrix::from_fn(p, keep.len(), |r, c| vectors[(r, keep[c])] / values[keep[c]].sqrt());
    let mut m = whiten.tr_mul(&(empirical * &whiten));
    symmetrize(&mut m);
    let (w, _) = sorted_eigen(&m);
    let null_leak = if null.is_empty() {
        0.0
    } else {
        let basis = vectors.select_columns(&null);
        basis.tr_mul(&(empirical * &basis)).amax()
    };
    Ok(SandwichReport {
        min_eigenvalue: w[0],
        max_eigenvalue: w[w.len() - 1],
        rank: keep.len(),
        null_leak,
    })
}
