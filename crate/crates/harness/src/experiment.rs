//! Grid-search driver over synthetic regression problems.
//!
//! Work is split into one item per (p, trial). An item draws its data once
//! and reuses it, together with the public warm start and mirror map, for
//! every algorithm and grid point. Items run on a bounded rayon pool; the
//! output order is fixed afterwards, so results do not depend on the number
//! of workers.

use std::path::Path;
use std::time::Instant;

use pdmd_core::dp::PrivacyConfig;
use pdmd_core::loss::mean_squared_error;
use pdmd_core::mirror::{build_public_hessian, default_ridge, QuadraticMirrorMap};
use pdmd_core::optim::{
    cold_start, dp_sgd, pda_dpmd_exact, pda_dpmd_first_order, warm_start, AlphaSchedule, BatchMode,
    IteratePolicy, OptimizerConfig,
};
use pdmd_core::rng::{hash_str, hash_words, purpose, RngStream};
use pdmd_core::synth::{gen_dataset, gen_split, SyntheticSplit};
use pdmd_core::{ModelVector, RegressionDataset, Visibility};
use rayon::prelude::*;

use crate::config::{Algorithm, ExperimentSpec, GridPoint, IterateChoice, PrivacySpec};
use crate::error::{HarnessError, Result};
use crate::record::{write_records, TrialRecord, STATUS_OK};

/// Seed for the data of one (p, trial); shared by all algorithms and grid
/// points so they are compared on the same draw.
pub fn data_seed(base_seed: u64, p: usize, trial: usize) -> u64 {
    hash_words(&[base_seed, hash_str("data"), p as u64, trial as u64])
}

/// Seed for the optimizer noise of one run. Built from the grid point's
/// values, not its position, so editing one grid axis leaves every other
/// cell's seed unchanged.
pub fn run_seed(base_seed: u64, p: usize, algorithm: Algorithm, point: &GridPoint, trial: usize) -> u64 {
    hash_words(&[
        base_seed,
        p as u64,
        hash_str(algorithm.name()),
        point.lr.to_bits(),
        point.clip.to_bits(),
        point.epochs as u64,
        point.alpha_k.map_or(0, |k| k as u64 + 1),
        trial as u64,
    ])
}

pub fn privacy_config(privacy: &PrivacySpec, clip: f64, steps: usize, n_private: usize) -> Result<PrivacyConfig> {
    let cfg = match privacy.noise_multiplier {
        Some(m) => PrivacyConfig::with_noise_multiplier(m, privacy.epsilon, privacy.delta, clip, steps, n_private)?,
        None => PrivacyConfig::calibrated(privacy.epsilon, privacy.delta, clip, steps, n_private)?,
    };
    Ok(cfg)
}

/// Everything a (p, trial) item shares across runs.
struct TrialData {
    split: SyntheticSplit,
    eval: RegressionDataset,
    cold_init: ModelVector,
    warm_init: Option<ModelVector>,
    map: Option<QuadraticMirrorMap>,
}

fn prepare(spec: &ExperimentSpec, p: usize, trial: usize) -> Result<TrialData> {
    let cfg = spec.synth_for(p);
    let mut rng = RngStream::new(data_seed(spec.base_seed, p, trial), purpose::DATA);
    let split = gen_split(&cfg, &mut rng)?;
    let eval = gen_dataset(
        &cfg,
        spec.eval_samples,
        &split.theta_star,
        Visibility::Public,
        &mut rng.derive(purpose::EVAL),
    )?;
    let cold_init = cold_start(p, spec.cold_init_std, &mut rng.derive(purpose::INIT + 100));

    let needs_warm = spec.algorithms.iter().any(|a| a.uses_warm_start());
    let needs_map = spec.algorithms.contains(&Algorithm::PdaExact);
    let (warm_init, map) = if needs_warm {
        let h = build_public_hessian(&split.public)?;
        let gamma = default_ridge(&h);
        let warm = warm_start(&split.public, gamma)?;
        let map = if needs_map { Some(QuadraticMirrorMap::regularize_normalize(&h, gamma)?) } else { None };
        (Some(warm), map)
    } else {
        (None, None)
    };
    Ok(TrialData { split, eval, cold_init, warm_init, map })
}

struct RunOutcome {
    train_loss: f64,
    reported_loss: f64,
}

fn run_one(spec: &ExperimentSpec, data: &TrialData, algorithm: Algorithm, point: &GridPoint, seed: u64) -> (f64, Result<RunOutcome>) {
    let private = &data.split.private;
    let steps = spec.steps_for(point.epochs, private.n());
    let priv_cfg = match privacy_config(&spec.privacy, point.clip, steps, private.n()) {
        Ok(c) => c,
        Err(e) => return (f64::NAN, Err(e)),
    };
    let sigma = priv_cfg.sigma;

    let mut opt = OptimizerConfig::new(point.lr, steps);
    opt.eval_stride = 0;
    opt.projection_radius = spec.optimizer.projection_radius;
    opt.iterate_policy = match spec.optimizer.iterate {
        IterateChoice::Final => IteratePolicy::Final,
        IterateChoice::Average => IteratePolicy::Average,
    };
    if let Some(b) = spec.optimizer.batch_size {
        opt.batch_mode = BatchMode::Minibatch(b);
    }
    if let Some(k) = point.alpha_k {
        opt.alpha = AlphaSchedule::Cosine { horizon: k };
    }

    let outcome = (|| {
        let warm = || data.warm_init.as_ref().expect("warm start prepared for warm algorithms");
        let mut rng = RngStream::new(seed, purpose::NOISE);
        let result = match algorithm {
            Algorithm::ColdSgd => dp_sgd(private, &data.cold_init, &priv_cfg, &opt, &mut rng)?,
            Algorithm::WarmSgd => dp_sgd(private, warm(), &priv_cfg, &opt, &mut rng)?,
            Algorithm::PdaExact => {
                let map = data.map.as_ref().expect("mirror map prepared for pda_exact");
                pda_dpmd_exact(private, map, warm(), &priv_cfg, &opt, &mut rng)?
            }
            Algorithm::PdaFirstOrder => {
                pda_dpmd_first_order(private, &data.split.public, warm(), &priv_cfg, &opt, &mut rng)?
            }
        };
        let train_loss = mean_squared_error(&result.theta, private)?;
        let reported_loss = mean_squared_error(&result.theta, &data.eval)?;
        if !(train_loss.is_finite() && reported_loss.is_finite()) {
            return Err(HarnessError::Core(pdmd_core::Error::NonFinite { step: steps }));
        }
        Ok(RunOutcome { train_loss, reported_loss })
    })();
    (sigma, outcome)
}

/// (algorithm index, p index, grid index, trial) fixes the output order.
type OrderKey = (usize, usize, usize, usize);

fn run_item(spec: &ExperimentSpec, p_index: usize, trial: usize) -> Vec<(OrderKey, TrialRecord)> {
    let p = spec.dimensions[p_index];
    let prepared = prepare(spec, p, trial);
    let mut out = Vec::new();
    for (a_index, &algorithm) in spec.algorithms.iter().enumerate() {
        for (g_index, point) in spec.grid_points(algorithm).iter().enumerate() {
            let seed = run_seed(spec.base_seed, p, algorithm, point, trial);
            let start = Instant::now();
            let (sigma, outcome) = match &prepared {
                Ok(data) => run_one(spec, data, algorithm, point, seed),
                Err(e) => (f64::NAN, Err(HarnessError::Config(format!("data preparation: {e}")))),
            };
            let wall_ms = if spec.record_timing { start.elapsed().as_millis() as u64 } else { 0 };
            let (train, reported, status) = match outcome {
                Ok(o) => (o.train_loss, o.reported_loss, STATUS_OK.to_string()),
                Err(e) => (f64::NAN, f64::NAN, format!("failed: {e}")),
            };
            let record = TrialRecord {
                algorithm,
                p,
                lr: point.lr,
                clip: point.clip,
                epochs: point.epochs,
                alpha_k: point.alpha_k,
                trial,
                seed,
                sigma,
                final_train_loss: train,
                final_reported_loss: reported,
                wall_ms,
                status,
            };
            out.push(((a_index, p_index, g_index, trial), record));
        }
    }
    out
}

/// Runs every (p, algorithm, grid point, trial) combination. A run that
/// errors or diverges yields a row with a `failed: …` status and NaN losses
/// rather than aborting the experiment.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let items: Vec<(usize, usize)> = (0..spec.dimensions.len())
        .flat_map(|pi| (0..spec.trials).map(move |t| (pi, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let mut rows: Vec<(OrderKey, TrialRecord)> = pool.install(|| {
        items
            .par_iter()
            .flat_map_iter(|&(pi, t)| run_item(spec, pi, t))
            .collect()
    });
    rows.sort_by_key(|(key, _)| *key);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Writes records to `path`, creating parent directories.
pub fn write_records_file(records: &[TrialRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Write { path: dir.to_path_buf(), source })?;
    }
    let file = std::fs::File::create(path).map_err(|source| HarnessError::Write { path: path.to_path_buf(), source })?;
    write_records(records, std::io::BufWriter::new(file))
}
