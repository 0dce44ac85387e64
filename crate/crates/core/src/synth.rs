//! Synthetic sparse linear-regression data with a block-structured,
//! non-isotropic feature distribution.
//!
//! Each feature vector has `nnz_first_block` entries equal to `feature_value`
//! at distinct uniformly chosen positions among the first p/5 coordinates and
//! `nnz_last_block` at positions among the last 4p/5; all else is zero.
//! Responses are ⟨x, θ*⟩ plus N(0, noise_variance) noise, with θ* ~ N(0, I).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ModelVector, RegressionDataset, Visibility};
use crate::error::{check_dim, Error, Result};
use crate::rng::{purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub p: usize,
    pub n_private: usize,
    /// n_pub = round(public_multiplier · p).
    pub public_multiplier: f64,
    pub noise_variance: f64,
    pub nnz_first_block: usize,
    pub nnz_last_block: usize,
    pub feature_value: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            p: 500,
            n_private: 10_000,
            public_multiplier: 1.5,
            noise_variance: 0.01,
            nnz_first_block: 40,
            nnz_last_block: 80,
            feature_value: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_dimension(p: usize) -> Self {
        Self { p, ..Self::default() }
    }

    pub fn first_block_len(&self) -> usize {
        self.p / 5
    }

    pub fn last_block_len(&self) -> usize {
        self.p - self.first_block_len()
    }

    pub fn n_public(&self) -> usize {
        (self.public_multiplier * self.p as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p % 5 != 0 {
            return Err(Error::InvalidParameter(format!(
                "dimension must be a positive multiple of 5, got {}",
                self.p
            )));
        }
        if self.nnz_first_block > self.first_block_len() || self.nnz_last_block > self.last_block_len() {
            return Err(Error::Infeasible(format!(
                "blocks of {} and {} cannot hold {} and {} nonzeros",
                self.first_block_len(),
                self.last_block_len(),
                self.nnz_first_block,
                self.nnz_last_block
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::InvalidParameter("noise variance must be >= 0".into()));
        }
        if !(self.public_multiplier.is_finite() && self.public_multiplier >= 0.0) {
            return Err(Error::InvalidParameter("public multiplier must be >= 0".into()));
        }
        Ok(())
    }

    /// ‖x‖₂² of every generated feature vector.
    pub fn feature_norm_sq(&self) -> f64 {
        (self.nnz_first_block + self.nnz_last_block) as f64 * self.feature_value * self.feature_value
    }

    /// E[x xᵀ] in closed form from the block sampling probabilities.
    pub fn population_hessian(&self) -> Result<DMatrix<f64>> {
        self.validate()?;
        let b1 = self.first_block_len();
        let b2 = self.last_block_len();
        let c2 = self.feature_value * self.feature_value;
        let (k1, k2) = (self.nnz_first_block as f64, self.nnz_last_block as f64);
        let q1 = k1 / b1 as f64;
        let q2 = k2 / b2 as f64;
        // P(i and j both chosen) for i ≠ j in the same block: k(k−1)/(B(B−1)).
        let pair = |k: f64, b: usize| if b > 1 { k * (k - 1.0) / (b as f64 * (b as f64 - 1.0)) } else { 0.0 };
        let (pair1, pair2) = (pair(k1, b1), pair(k2, b2));
        Ok(DMatrix::from_fn(self.p, self.p, |i, j| {
            let (bi, bj) = (i < b1, j < b1);
            let prob = match (bi, bj) {
                _ if i == j => {
                    if bi {
                        q1
                    } else {
                        q2
                    }
                }
                (true, true) => pair1,
                (false, false) => pair2,
                _ => q1 * q2,
            };
            c2 * prob
        }))
    }
}

/// θ* with i.i.d. N(0, 1) entries.
pub fn gen_theta_star(p: usize, rng: &mut RngStream) -> ModelVector {
    ModelVector::new(DVector::from_fn(p, |_, _| rng.standard_normal()))
}

/// Nonzero positions of one feature vector, first block then last block.
fn feature_support(cfg: &SynthConfig, rng: &mut RngStream) -> Vec<usize> {
    let b1 = cfg.first_block_len();
    let mut idx = rng.sample_indices(b1, cfg.nnz_first_block);
    idx.extend(
        rng.sample_indices(cfg.last_block_len(), cfg.nnz_last_block)
            .into_iter()
            .map(|i| b1 + i),
    );
    idx
}

/// One sparse feature vector.
pub fn gen_feature(cfg: &SynthConfig, rng: &mut RngStream) -> Result<DVector<f64>> {
    cfg.validate()?;
    let mut x = DVector::zeros(cfg.p);
    for i in feature_support(cfg, rng) {
        x[i] = cfg.feature_value;
    }
    Ok(x)
}

/// ⟨x, θ*⟩ + N(0, noise_variance).
pub fn gen_response(x: &DVector<f64>, theta_star: &ModelVector, cfg: &SynthConfig, rng: &mut RngStream) -> Result<f64> {
    check_dim(theta_star.dim(), x.len())?;
    let mean = x.dot(theta_star);
    if cfg.noise_variance == 0.0 {
        return Ok(mean);
    }
    Ok(mean + cfg.noise_variance.sqrt() * rng.standard_normal())
}

/// `n` i.i.d. samples from the generator around `theta_star`.
pub fn gen_dataset(
    cfg: &SynthConfig,
    n: usize,
    theta_star: &ModelVector,
    visibility: Visibility,
    rng: &mut RngStream,
) -> Result<RegressionDataset> {
    cfg.validate()?;
    check_dim(cfg.p, theta_star.dim())?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut features = DMatrix::zeros(n, cfg.p);
    let mut responses = DVector::zeros(n);
    let sd = cfg.noise_variance.sqrt();
    for i in 0..n {
        let mut mean = 0.0;
        for j in feature_support(cfg, rng) {
            features[(i, j)] = cfg.feature_value;
            mean += cfg.feature_value * theta_star[j];
        }
        responses[i] = if sd == 0.0 { mean } else { mean + sd * rng.standard_normal() };
    }
    RegressionDataset::new(features, responses, visibility)
}

#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub public: RegressionDataset,
    pub private: RegressionDataset,
    pub theta_star: ModelVector,
}

/// θ*, a public set of round(multiplier·p) samples and a private set of
/// `n_private` samples, all from `rng`.
pub fn gen_split(cfg: &SynthConfig, rng: &mut RngStream) -> Result<SyntheticSplit> {
    cfg.validate()?;
    let mut theta_rng = rng.derive(purpose::INIT);
    let mut pub_rng = rng.derive(purpose::DATA);
    let mut priv_rng = rng.derive(purpose::DATA + 100);
    let theta_star = gen_theta_star(cfg.p, &mut theta_rng);
    let public = gen_dataset(cfg, cfg.n_public(), &theta_star, Visibility::Public, &mut pub_rng)?;
    let private = gen_dataset(cfg, cfg.n_private, &theta_star, Visibility::Private, &mut priv_rng)?;
    Ok(SyntheticSplit { public, private, theta_star })
}

/// [`gen_split`] seeded from `cfg.seed`.
pub fn gen_split_seeded(cfg: &SynthConfig) -> Result<SyntheticSplit> {
    gen_split(cfg, &mut RngStream::new(cfg.seed, purpose::DATA))
}
