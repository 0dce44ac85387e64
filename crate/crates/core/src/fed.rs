//! Desk-scale simulation of user-level DP training.
//!
//! Examples are partitioned into clients. Each round samples a fixed number
//! of private clients without replacement, runs local SGD on each, clips the
//! model deltas to norm L, averages them and adds N(0, (σ·L/m)²I) noise.
//! The public-data variant mixes that noisy private aggregate with a
//! noise-free public step, weighted by α_t, before the server update.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::data::{ModelVector, RegressionDataset, Visibility};
use crate::dp::{clip, epsilon_for_sigma, gaussian_noise};
use crate::error::{check_dim, Error, Result};
use crate::loss::{mean_squared_error, PerExampleLoss, SquaredLoss};
use crate::optim::{AlphaSchedule, LearningRate};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct ClientPopulation {
    pub private_clients: Vec<RegressionDataset>,
    pub public_clients: Vec<RegressionDataset>,
    pub max_examples_per_client: usize,
}

impl ClientPopulation {
    pub fn p(&self) -> usize {
        self.private_clients
            .first()
            .or(self.public_clients.first())
            .map_or(0, RegressionDataset::p)
    }

    /// All public examples as one dataset, if any.
    pub fn public_union(&self) -> Result<Option<RegressionDataset>> {
        if self.public_clients.is_empty() {
            return Ok(None);
        }
        let parts: Vec<&RegressionDataset> = self.public_clients.iter().collect();
        RegressionDataset::concat(&parts).map(Some)
    }

    pub fn private_union(&self) -> Result<RegressionDataset> {
        let parts: Vec<&RegressionDataset> = self.private_clients.iter().collect();
        RegressionDataset::concat(&parts)
    }
}

/// Shuffles `data` and deals it into `n_clients` private and
/// `n_public_clients` public shards of near-equal size, at most `cap` each.
/// Examples beyond the total capacity are left out.
pub fn partition_clients(
    data: &RegressionDataset,
    n_clients: usize,
    n_public_clients: usize,
    cap: usize,
    rng: &mut RngStream,
) -> Result<ClientPopulation> {
    let total = n_clients + n_public_clients;
    if n_clients == 0 || cap == 0 {
        return Err(Error::Infeasible("need at least one private client and cap >= 1".into()));
    }
    if data.n() < total {
        return Err(Error::Infeasible(format!(
            "{} examples cannot fill {total} clients",
            data.n()
        )));
    }
    let used = data.n().min(total * cap);
    let order = rng.permutation(data.n());
    let (base, extra) = (used / total, used % total);

    let mut private_clients = Vec::with_capacity(n_clients);
    let mut public_clients = Vec::with_capacity(n_public_clients);
    let mut at = 0;
    for c in 0..total {
        let size = base + usize::from(c < extra);
        let shard = data.subset(&order[at..at + size])?;
        at += size;
        if c < n_clients {
            private_clients.push(shard.with_visibility(Visibility::Private));
        } else {
            public_clients.push(shard.with_visibility(Visibility::Public));
        }
    }
    Ok(ClientPopulation {
        private_clients,
        public_clients,
        max_examples_per_client: cap,
    })
}

#[derive(Debug, Clone)]
pub struct FedConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_steps: usize,
    pub local_batch_size: usize,
    pub client_lr: f64,
    pub server_lr: LearningRate,
    /// Clip norm L applied to each client's model delta.
    pub clip_norm: f64,
    /// Noise multiplier σ; the averaged delta gets noise with std σ·L/m.
    pub noise_multiplier: f64,
    pub alpha: AlphaSchedule,
}

impl FedConfig {
    pub fn validate(&self, population: &ClientPopulation) -> Result<()> {
        if self.clients_per_round == 0 || self.clients_per_round > population.private_clients.len() {
            return Err(Error::InvalidParameter(format!(
                "clients per round must be in 1..={}, got {}",
                population.private_clients.len(),
                self.clients_per_round
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidParameter("clip norm must be > 0".into()));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::InvalidParameter("noise multiplier must be >= 0".into()));
        }
        if self.local_batch_size == 0 {
            return Err(Error::InvalidParameter("local batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Standard deviation of the noise on the averaged delta.
    pub fn noise_std(&self) -> f64 {
        self.noise_multiplier * self.clip_norm / self.clients_per_round as f64
    }

    /// Conservative ε over all rounds: per-round sensitivity L/m composed with
    /// the closed-form calibration, no amplification by sampling.
    pub fn reported_epsilon(&self, delta: f64) -> Result<f64> {
        let sensitivity = self.clip_norm / self.clients_per_round as f64;
        epsilon_for_sigma(sensitivity, self.rounds.max(1), self.noise_std(), delta, 1)
    }
}

/// Runs `local_steps` minibatch gradient steps on `shard` and returns
/// θ_local − θ. Batches are taken without replacement from per-epoch
/// permutations; a batch size ≥ the shard size means full-batch steps.
pub fn local_update(
    theta: &ModelVector,
    shard: &RegressionDataset,
    local_steps: usize,
    client_lr: f64,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    check_dim(shard.p(), theta.dim())?;
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let start = theta.as_vector();
    let mut local = start.clone();
    let full = batch_size >= shard.n();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = shard.n();
    for step in 0..local_steps {
        let g = if full {
            SquaredLoss.mean_gradient(&local, shard, None)?
        } else {
            if cursor + batch_size > shard.n() {
                order = rng.permutation(shard.n());
                cursor = 0;
            }
            let rows = &order[cursor..cursor + batch_size];
            cursor += batch_size;
            SquaredLoss.mean_gradient(&local, shard, Some(rows))?
        };
        local.axpy(-client_lr, &g, 1.0);
        if local.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: step + 1 });
        }
    }
    Ok(local - start)
}

/// The noisy private aggregate of one round and what went into it.
#[derive(Debug, Clone)]
pub struct PrivateAggregate {
    /// Indices of the sampled private clients, in sampling order.
    pub sampled: Vec<usize>,
    /// clip(Δ_k, L)/m for each sampled client.
    pub contributions: Vec<DVector<f64>>,
    /// Σ contributions + noise.
    pub noisy_mean: DVector<f64>,
}

pub fn private_aggregate(
    theta: &ModelVector,
    population: &ClientPopulation,
    cfg: &FedConfig,
    rng: &mut RngStream,
) -> Result<PrivateAggregate> {
    cfg.validate(population)?;
    let m = cfg.clients_per_round;
    let sampled = rng.sample_indices(population.private_clients.len(), m);
    let mut contributions = Vec::with_capacity(m);
    let mut sum = DVector::zeros(theta.dim());
    for &k in &sampled {
        let delta = local_update(
            theta,
            &population.private_clients[k],
            cfg.local_steps,
            cfg.client_lr,
            cfg.local_batch_size,
            rng,
        )?;
        let c = clip(&delta, cfg.clip_norm) / m as f64;
        sum += &c;
        contributions.push(c);
    }
    let noisy_mean = sum + gaussian_noise(theta.dim(), cfg.noise_std(), rng);
    Ok(PrivateAggregate {
        sampled,
        contributions,
        noisy_mean,
    })
}

/// One DP-FedAvg round: θ + η_server(t)·(noisy mean clipped delta).
pub fn dp_fedavg_round(
    theta: &ModelVector,
    population: &ClientPopulation,
    cfg: &FedConfig,
    round_t: usize,
    rng: &mut RngStream,
) -> Result<ModelVector> {
    let agg = private_aggregate(theta, population, cfg, rng)?;
    server_step(theta, &agg.noisy_mean, cfg.server_lr.at(round_t), round_t)
}

/// One round of the public-data variant. The server direction is
/// α·(noisy private aggregate) + (1 − α)·(−client_lr·∇Ψ(θ)), where ∇Ψ is the
/// full-batch gradient over all public examples, so both terms are deltas
/// in the same units.
pub fn pda_dpmd_fed_round(
    theta: &ModelVector,
    population: &ClientPopulation,
    public_union: Option<&RegressionDataset>,
    cfg: &FedConfig,
    round_t: usize,
    rng: &mut RngStream,
) -> Result<ModelVector> {
    let alpha = cfg.alpha.at(round_t);
    let private = if alpha > 0.0 {
        Some(private_aggregate(theta, population, cfg, rng)?.noisy_mean)
    } else {
        None
    };
    let direction = if alpha >= 1.0 {
        private.expect("alpha > 0 computes the private aggregate")
    } else {
        let owned;
        let public = match public_union {
            Some(d) => d,
            None => {
                owned = population.public_union()?.ok_or_else(|| {
                    Error::InvalidParameter("public clients are required when alpha < 1".into())
                })?;
                &owned
            }
        };
        let public_delta = SquaredLoss.mean_gradient(theta, public, None)? * (-cfg.client_lr);
        match private {
            Some(d) => d * alpha + public_delta * (1.0 - alpha),
            None => public_delta,
        }
    };
    server_step(theta, &direction, cfg.server_lr.at(round_t), round_t)
}

fn server_step(theta: &ModelVector, direction: &DVector<f64>, lr: f64, round_t: usize) -> Result<ModelVector> {
    let mut next = theta.as_vector().clone();
    next.axpy(lr, direction, 1.0);
    let next = ModelVector::new(next);
    next.ensure_finite(round_t + 1)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedAlgorithm {
    DpFedAvg,
    PdaDpmd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean ½-squared loss over all private examples after the round.
    pub train_loss: f64,
    /// Plain squared error on the evaluation set, NaN when none is given.
    pub eval_loss: f64,
    pub alpha: f64,
    pub sigma: f64,
}

/// Runs `cfg.rounds` rounds from `theta0`, returning the final model and
/// per-round metrics. Round 0 in the metrics is the starting point.
pub fn run_federated(
    theta0: &ModelVector,
    population: &ClientPopulation,
    cfg: &FedConfig,
    algorithm: FedAlgorithm,
    eval: Option<&RegressionDataset>,
    rng: &mut RngStream,
) -> Result<(ModelVector, Vec<RoundMetrics>)> {
    cfg.validate(population)?;
    let train = population.private_union()?;
    let public = population.public_union()?;
    let metrics_at = |theta: &ModelVector, round: usize, alpha: f64| -> Result<RoundMetrics> {
        Ok(RoundMetrics {
            round,
            train_loss: SquaredLoss.mean_loss(theta, &train, None)?,
            eval_loss: match eval {
                Some(e) => mean_squared_error(theta, e)?,
                None => f64::NAN,
            },
            alpha,
            sigma: cfg.noise_multiplier,
        })
    };
    let mut theta = theta0.clone();
    let mut metrics = vec![metrics_at(&theta, 0, f64::NAN)?];
    for t in 0..cfg.rounds {
        let alpha = match algorithm {
            FedAlgorithm::DpFedAvg => 1.0,
            FedAlgorithm::PdaDpmd => cfg.alpha.at(t),
        };
        theta = match algorithm {
            FedAlgorithm::DpFedAvg => dp_fedavg_round(&theta, population, cfg, t, rng)?,
            FedAlgorithm::PdaDpmd => pda_dpmd_fed_round(&theta, population, public.as_ref(), cfg, t, rng)?,
        };
        metrics.push(metrics_at(&theta, t + 1, alpha)?);
    }
    Ok((theta, metrics))
}

/// CSV with header `round,train_loss,eval_loss,alpha,sigma`.
pub fn write_round_metrics_csv<W: Write>(metrics: &[RoundMetrics], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}
