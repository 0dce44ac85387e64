//! Library side of the CLI subcommands.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use pdmd_core::fed::{partition_clients, run_federated, FedAlgorithm, FedConfig, RoundMetrics};
use pdmd_core::mirror::{build_public_hessian, default_ridge, public_optimum, QuadraticMirrorMap};
use pdmd_core::optim::{AlphaSchedule, LearningRate};
use pdmd_core::rng::{purpose, RngStream};
use pdmd_core::stability::{stability_sweep, StabilityReport};
use pdmd_core::synth::{gen_dataset, gen_split, SynthConfig};
use pdmd_core::{ModelVector, Visibility};

use crate::error::{HarnessError, Result};

/// Environment variable that redirects every output file into one directory.
pub const OUTPUT_DIR_ENV: &str = "PDMD_OUTPUT_DIR";

/// `path` itself, or its file name under `$PDMD_OUTPUT_DIR` when that is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        Some(dir) => Path::new(&dir).join(path.file_name().unwrap_or(path.as_os_str())),
        None => path.to_path_buf(),
    }
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Write { path: dir.to_path_buf(), source })?;
    }
    let file = File::create(path).map_err(|source| HarnessError::Write { path: path.to_path_buf(), source })?;
    Ok(BufWriter::new(file))
}

/// Writes `public.csv`, `private.csv` and `theta_star.csv` into `dir`.
pub fn gen_data(cfg: &SynthConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let split = gen_split(cfg, &mut RngStream::new(cfg.seed, purpose::DATA))?;
    let paths: Vec<PathBuf> = ["public.csv", "private.csv", "theta_star.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    split.public.write_csv(create_file(&paths[0])?)?;
    split.private.write_csv(create_file(&paths[1])?)?;
    let mut w = csv::Writer::from_writer(create_file(&paths[2])?);
    w.write_record(["theta_star"])?;
    for v in split.theta_star.iter() {
        w.write_record([v.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapSource {
    /// Public Hessian of a synthetic draw, ridge-regularized.
    Synthetic,
    /// Random rotation with eigenvalues log-uniform in [1, condition].
    Random { condition: f64 },
}

#[derive(Debug, Clone)]
pub struct StabilityArgs {
    pub p: usize,
    pub seed: u64,
    pub eta: f64,
    pub sigma: f64,
    pub samples: usize,
    pub extra_directions: usize,
    pub source: MapSource,
}

/// Random SPD matrix Q·diag(λ)·Qᵀ with Q from the QR of a Gaussian matrix.
pub fn random_spd(p: usize, condition: f64, rng: &mut RngStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| rng.standard_normal());
    let q = g.qr().q();
    let lambdas = DVector::from_fn(p, |_, _| condition.powf(rng.uniform()));
    let h = &q * DMatrix::from_diagonal(&lambdas) * q.transpose();
    (&h + h.transpose()) * 0.5
}

pub fn random_unit(p: usize, rng: &mut RngStream) -> DVector<f64> {
    let v = DVector::from_fn(p, |_, _| rng.standard_normal());
    let n = v.norm();
    v / n
}

pub fn stability(args: &StabilityArgs) -> Result<Vec<StabilityReport>> {
    let mut rng = RngStream::new(args.seed, purpose::DATA);
    let map = match args.source {
        MapSource::Synthetic => {
            let split = gen_split(&SynthConfig::with_dimension(args.p), &mut rng)?;
            let h = build_public_hessian(&split.public)?;
            QuadraticMirrorMap::regularize_normalize(&h, default_ridge(&h))?
        }
        MapSource::Random { condition } => {
            if !(condition >= 1.0 && condition.is_finite()) {
                return Err(HarnessError::Config(format!("condition must be >= 1, got {condition}")));
            }
            let h = random_spd(args.p, condition, &mut rng);
            QuadraticMirrorMap::regularize_normalize(&h, 0.0)?
        }
    };
    let mut dir_rng = rng.derive(purpose::INIT);
    let extras: Vec<DVector<f64>> = (0..args.extra_directions).map(|_| random_unit(args.p, &mut dir_rng)).collect();
    Ok(stability_sweep(&map, args.eta, args.sigma, &extras, args.samples, &mut rng.derive(purpose::NOISE))?)
}

#[derive(Debug, Clone)]
pub struct FedSimArgs {
    pub synth: SynthConfig,
    pub private_clients: usize,
    pub public_clients: usize,
    pub examples_per_client: usize,
    pub eval_samples: usize,
    pub algorithm: FedAlgorithm,
    pub warm_start: bool,
    pub config: FedConfig,
}

impl FedSimArgs {
    pub fn defaults(p: usize) -> Self {
        Self {
            synth: SynthConfig::with_dimension(p),
            private_clients: 100,
            public_clients: 10,
            examples_per_client: 16,
            eval_samples: 2000,
            algorithm: FedAlgorithm::DpFedAvg,
            warm_start: false,
            config: FedConfig {
                rounds: 50,
                clients_per_round: 20,
                local_steps: 1,
                local_batch_size: 16,
                client_lr: 1.0,
                server_lr: LearningRate::Constant(1.0),
                clip_norm: 1.0,
                noise_multiplier: 0.4,
                alpha: AlphaSchedule::Cosine { horizon: 50 },
            },
        }
    }
}

/// Partitions a synthetic draw into clients and runs federated training.
pub fn fedsim(args: &FedSimArgs) -> Result<Vec<RoundMetrics>> {
    let cfg = &args.synth;
    let total = (args.private_clients + args.public_clients) * args.examples_per_client;
    let mut rng = RngStream::new(cfg.seed, purpose::DATA);
    let split = gen_split(&SynthConfig { n_private: total, ..cfg.clone() }, &mut rng)?;
    let eval = gen_dataset(cfg, args.eval_samples, &split.theta_star, Visibility::Public, &mut rng.derive(purpose::EVAL))?;
    let population = partition_clients(
        &split.private,
        args.private_clients,
        args.public_clients,
        args.examples_per_client,
        &mut rng.derive(purpose::SAMPLING),
    )?;
    let theta0 = match (args.warm_start, population.public_union()?) {
        (true, Some(public)) => {
            let h = build_public_hessian(&public)?;
            public_optimum(&public, default_ridge(&h))?
        }
        (true, None) => return Err(HarnessError::Config("warm start needs public clients".into())),
        (false, _) => ModelVector::zeros(cfg.p),
    };
    let (_, metrics) = run_federated(
        &theta0,
        &population,
        &args.config,
        args.algorithm,
        Some(&eval),
        &mut rng.derive(purpose::NOISE),
    )?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_spd_has_requested_spectrum() {
        let h = random_spd(8, 50.0, &mut RngStream::new(1, 1));
        let eig = h.symmetric_eigenvalues();
        assert!(eig.min() >= 1.0 - 1e-9 && eig.max() <= 50.0 + 1e-9);
        assert!((&h - h.transpose()).amax() == 0.0);
    }

    #[test]
    fn random_map_sweep_has_one_row_per_direction() {
        let args = StabilityArgs {
            p: 6,
            seed: 3,
            eta: 0.1,
            sigma: 1.0,
            samples: 100,
            extra_directions: 2,
            source: MapSource::Random { condition: 10.0 },
        };
        let r = stability(&args).unwrap();
        assert_eq!(r.len(), 8);
        assert_eq!(r[6].direction_id, "dir_0");
    }

    #[test]
    fn fedsim_metrics_cover_every_round() {
        let mut args = FedSimArgs::defaults(20);
        args.synth.nnz_first_block = 2;
        args.synth.nnz_last_block = 4;
        args.private_clients = 10;
        args.public_clients = 2;
        args.eval_samples = 50;
        args.config.rounds = 4;
        args.config.clients_per_round = 5;
        args.algorithm = FedAlgorithm::PdaDpmd;
        args.warm_start = true;
        let m = fedsim(&args).unwrap();
        assert_eq!(m.len(), 5);
        assert!(m.iter().all(|r| r.eval_loss.is_finite()));
    }
}
