//! Private optimizers: DP-SGD, exact mirror descent with a quadratic
//! public-data mirror map, and the first-order approximation that mixes
//! private and public gradients with a decaying weight α.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::data::{ModelVector, RegressionDataset};
use crate::dp::{privatized_gradient_with, PrivacyConfig};
use crate::error::{Error, Result};
use crate::loss::{PerExampleLoss, SquaredLoss};
use crate::mirror::{public_optimum, QuadraticMirrorMap};
use crate::rng::{purpose, RngStream};

/// Step size as a function of the step index.
#[derive(Clone)]
pub enum LearningRate {
    Constant(f64),
    /// `base / sqrt(t + 1)`.
    InverseSqrt(f64),
    Custom(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl LearningRate {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            LearningRate::Constant(v) => *v,
            LearningRate::InverseSqrt(base) => base / ((t + 1) as f64).sqrt(),
            LearningRate::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for LearningRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearningRate::Constant(v) => write!(f, "Constant({v})"),
            LearningRate::InverseSqrt(v) => write!(f, "InverseSqrt({v})"),
            LearningRate::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// `cos(π·t/(2K))` for `t < K`, zero afterwards.
pub fn alpha_schedule(t: usize, horizon: usize) -> f64 {
    let k = horizon.max(1);
    if t >= k {
        0.0
    } else {
        (PI * t as f64 / (2.0 * k as f64)).cos().clamp(0.0, 1.0)
    }
}

/// Weight on the private gradient in the first-order update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    Cosine { horizon: usize },
    /// Fixed weight in `[0, 1]`; `Constant(1.0)` is the K → ∞ limit.
    Constant(f64),
}

impl AlphaSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            AlphaSchedule::Cosine { horizon } => alpha_schedule(t, horizon),
            AlphaSchedule::Constant(a) => a.clamp(0.0, 1.0),
        }
    }
}

/// Which iterate a run returns.
#[derive(Debug, Clone)]
pub enum IteratePolicy {
    Final,
    /// Mean of θ₁..θ_T.
    Average,
    /// The iterate with the lowest mean loss on the given held-out data.
    BestOnHoldout(Arc<RegressionDataset>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    /// Batches drawn without replacement from a fresh permutation each epoch.
    Minibatch(usize),
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub learning_rate: LearningRate,
    pub steps: usize,
    pub alpha: AlphaSchedule,
    pub iterate_policy: IteratePolicy,
    pub batch_mode: BatchMode,
    pub projection_radius: Option<f64>,
    /// Record losses every `eval_stride` steps; 0 disables the traces.
    pub eval_stride: usize,
    pub record_trajectory: bool,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64, steps: usize) -> Self {
        Self {
            learning_rate: LearningRate::Constant(learning_rate),
            steps,
            alpha: AlphaSchedule::Constant(1.0),
            iterate_policy: IteratePolicy::Final,
            batch_mode: BatchMode::Full,
            projection_radius: None,
            eval_stride: 1,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub theta: ModelVector,
    /// Mean ½-squared loss on the full private set after each recorded step.
    pub private_losses: Vec<f64>,
    /// Same on the public set, for optimizers that see public data.
    pub public_losses: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    /// θ₁..θ_T when `record_trajectory` is set.
    pub trajectory: Vec<ModelVector>,
}

/// θ₀: the ridged public least-squares solution.
pub fn warm_start(pub_data: &RegressionDataset, gamma: f64) -> Result<ModelVector> {
    public_optimum(pub_data, gamma)
}

/// θ₀ for a general loss: gradient descent on the mean public loss from
/// `init` until the gradient norm drops to `tolerance`.
pub fn warm_start_with<L: PerExampleLoss + ?Sized>(
    loss: &L,
    pub_data: &RegressionDataset,
    init: ModelVector,
    learning_rate: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ModelVector> {
    let mut theta = init.into_inner();
    for it in 0..=max_iterations {
        let g = loss.mean_gradient(&theta, pub_data, None)?;
        let norm = g.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite { step: it });
        }
        if norm <= tolerance {
            return Ok(ModelVector::new(theta));
        }
        if it == max_iterations {
            return Err(Error::NonConvergence { iterations: it, grad_norm: norm });
        }
        theta.axpy(-learning_rate, &g, 1.0);
    }
    unreachable!()
}

/// Random initialization θ₀ ~ N(0, std²·I).
pub fn cold_start(p: usize, std_dev: f64, rng: &mut RngStream) -> ModelVector {
    ModelVector::new(DVector::from_fn(p, |_, _| std_dev * rng.standard_normal()))
}

/// The ℓ₂ ball projection.
pub fn project_l2(theta: &mut DVector<f64>, radius: f64) {
    let norm = theta.norm();
    if norm > radius {
        *theta *= radius / norm;
    }
}

/// How a privatized gradient becomes a step direction.
#[derive(Debug, Clone, Copy)]
pub enum UpdateRule<'a> {
    /// θ − η·(g + b).
    Gradient,
    /// θ − η·H̃⁻¹(g + b).
    Mirror(&'a QuadraticMirrorMap),
    /// θ − η·(α(g + b) + (1 − α)∇Ψ(θ)).
    FirstOrder(&'a RegressionDataset),
}

/// Cycles through per-epoch permutations for minibatching.
struct BatchSampler {
    n: usize,
    size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: RngStream,
}

impl BatchSampler {
    fn new(n: usize, size: usize, rng: RngStream) -> Self {
        Self { n, size, order: Vec::new(), cursor: n, rng }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.cursor + self.size > self.n {
            self.order = self.rng.permutation(self.n);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.size].to_vec();
        self.cursor += self.size;
        batch
    }
}

fn sampler_for(mode: BatchMode, n: usize, rng: RngStream) -> Result<Option<BatchSampler>> {
    match mode {
        BatchMode::Full => Ok(None),
        BatchMode::Minibatch(0) => Err(Error::InvalidParameter("minibatch size must be >= 1".into())),
        BatchMode::Minibatch(b) if b >= n => Ok(None),
        BatchMode::Minibatch(b) => Ok(Some(BatchSampler::new(n, b, rng))),
    }
}

/// Runs `opt.steps` private updates under `rule`.
///
/// Noise is drawn from `rng` itself, one N(0, σ²I) vector per step that
/// touches private data, so runs that differ only in `rule` see the same
/// noise sequence. Minibatch orders come from derived streams.
pub fn run_private<L: PerExampleLoss + ?Sized>(
    loss: &L,
    rule: UpdateRule<'_>,
    priv_data: &RegressionDataset,
    theta0: &ModelVector,
    priv_cfg: &PrivacyConfig,
    opt: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<RunResult> {
    let p = priv_data.p();
    crate::error::check_dim(p, theta0.dim())?;
    if let UpdateRule::Mirror(map) = rule {
        crate::error::check_dim(p, map.dim())?;
    }
    let public = match rule {
        UpdateRule::FirstOrder(d) => {
            crate::error::check_dim(p, d.p())?;
            Some(d)
        }
        _ => None,
    };
    if let Some(r) = opt.projection_radius {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("projection radius must be > 0, got {r}")));
        }
    }

    let seed = rng.seed();
    let mut priv_batches = sampler_for(opt.batch_mode, priv_data.n(), rng.derive(purpose::SAMPLING))?;
    let mut pub_batches = match public {
        Some(d) => sampler_for(opt.batch_mode, d.n(), rng.derive(purpose::SAMPLING + 100))?,
        None => None,
    };
    let noise_scale = match &priv_batches {
        Some(s) => priv_data.n() as f64 / s.size as f64,
        None => 1.0,
    };

    let mut theta = theta0.as_vector().clone();
    let mut sum = DVector::zeros(p);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut private_losses = Vec::new();
    let mut public_losses = Vec::new();
    let mut trajectory = Vec::new();

    for t in 0..opt.steps {
        let lr = opt.learning_rate.at(t);
        let alpha = match rule {
            UpdateRule::FirstOrder(_) => opt.alpha.at(t),
            _ => 1.0,
        };

        let private_dir = if alpha > 0.0 {
            let rows = priv_batches.as_mut().map(BatchSampler::next);
            let model = ModelVector::new(theta.clone());
            Some(privatized_gradient_with(
                loss,
                &model,
                priv_data,
                rows.as_deref(),
                priv_cfg,
                noise_scale,
                rng,
            )?)
        } else {
            None
        };

        let direction = match (rule, private_dir) {
            (UpdateRule::Gradient, Some(g)) => g,
            (UpdateRule::Mirror(map), Some(g)) => map.inverse_apply(&g)?,
            (UpdateRule::FirstOrder(pub_data), private_dir) => {
                if alpha >= 1.0 {
                    private_dir.expect("alpha > 0 computes the private gradient")
                } else {
                    let rows = pub_batches.as_mut().map(BatchSampler::next);
                    let public_grad = loss.mean_gradient(&theta, pub_data, rows.as_deref())?;
                    match private_dir {
                        Some(g) => g * alpha + public_grad * (1.0 - alpha),
                        None => public_grad,
                    }
                }
            }
            (_, None) => unreachable!("alpha is 1 outside the first-order rule"),
        };

        theta.axpy(-lr, &direction, 1.0);
        if let Some(r) = opt.projection_radius {
            project_l2(&mut theta, r);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: t + 1 });
        }

        sum += &theta;
        if let IteratePolicy::BestOnHoldout(holdout) = &opt.iterate_policy {
            let l = loss.mean_loss(&theta, holdout, None)?;
            if best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, theta.clone()));
            }
        }
        if opt.record_trajectory {
            trajectory.push(ModelVector::new(theta.clone()));
        }
        if opt.eval_stride > 0 && (t + 1) % opt.eval_stride == 0 {
            private_losses.push(loss.mean_loss(&theta, priv_data, None)?);
            if let Some(d) = public {
                public_losses.push(loss.mean_loss(&theta, d, None)?);
            }
        }
    }

    let out = if opt.steps == 0 {
        theta
    } else {
        match &opt.iterate_policy {
            IteratePolicy::Final => theta,
            IteratePolicy::Average => sum / opt.steps as f64,
            IteratePolicy::BestOnHoldout(_) => best.map(|(_, t)| t).unwrap_or(theta),
        }
    };

    Ok(RunResult {
        theta: ModelVector::new(out),
        private_losses,
        public_losses,
        sigma: priv_cfg.sigma,
        seed,
        trajectory,
    })
}

/// DP-SGD on the squared loss.
pub fn dp_sgd(
    priv_data: &RegressionDataset,
    theta0: &ModelVector,
    priv_cfg: &PrivacyConfig,
    opt: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<RunResult> {
    run_private(&SquaredLoss, UpdateRule::Gradient, priv_data, theta0, priv_cfg, opt, rng)
}

/// Mirror descent with the exact quadratic mirror step.
pub fn pda_dpmd_exact(
    priv_data: &RegressionDataset,
    map: &QuadraticMirrorMap,
    theta0: &ModelVector,
    priv_cfg: &PrivacyConfig,
    opt: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<RunResult> {
    run_private(&SquaredLoss, UpdateRule::Mirror(map), priv_data, theta0, priv_cfg, opt, rng)
}

/// The first-order approximation with weight `opt.alpha` on the private
/// gradient and the rest on the public gradient.
pub fn pda_dpmd_first_order(
    priv_data: &RegressionDataset,
    pub_data: &RegressionDataset,
    theta0: &ModelVector,
    priv_cfg: &PrivacyConfig,
    opt: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<RunResult> {
    run_private(&SquaredLoss, UpdateRule::FirstOrder(pub_data), priv_data, theta0, priv_cfg, opt, rng)
}
