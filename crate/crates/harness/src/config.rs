//! Experiment configuration, read from TOML.
//!
//! ```toml
//! format_version = 1
//! base_seed = 7
//! dimensions = [200, 500]
//! algorithms = ["cold_sgd", "warm_sgd", "pda_exact"]
//! trials = 10
//! output = "run.csv"
//!
//! [privacy]
//! epsilon = 1.0
//! delta = 1e-5
//!
//! [grid]
//! learning_rates = [0.1, 1.0]
//! clip_norms = [0.3, 1.0]
//! epochs = [5, 20]
//!
//! [grid.learning_rate_overrides]
//! pda_exact = [1e4, 1e6]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use pdmd_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// DP-SGD from a small random initialization.
    ColdSgd,
    /// DP-SGD from the public least-squares solution.
    WarmSgd,
    /// Warm-started mirror descent with the public-Hessian mirror map.
    PdaExact,
    /// Warm-started first-order blend of private and public gradients.
    PdaFirstOrder,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::ColdSgd, Self::WarmSgd, Self::PdaExact, Self::PdaFirstOrder];

    pub fn name(self) -> &'static str {
        match self {
            Self::ColdSgd => "cold_sgd",
            Self::WarmSgd => "warm_sgd",
            Self::PdaExact => "pda_exact",
            Self::PdaFirstOrder => "pda_first_order",
        }
    }

    pub fn uses_warm_start(self) -> bool {
        !matches!(self, Self::ColdSgd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    /// When set, σ = multiplier · L / n_private and ε is reported as given.
    pub noise_multiplier: Option<f64>,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        Self { epsilon: 1.0, delta: 1e-5, noise_multiplier: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub clip_norms: Vec<f64>,
    pub epochs: Vec<usize>,
    /// Cosine horizons in steps; only the first-order variant sweeps them.
    pub alpha_ks: Vec<usize>,
    /// Per-algorithm replacement for `learning_rates`.
    pub learning_rate_overrides: BTreeMap<Algorithm, Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1, 1.0],
            clip_norms: vec![1.0],
            epochs: vec![10],
            alpha_ks: vec![10],
            learning_rate_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterateChoice {
    #[default]
    Final,
    Average,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    /// Minibatch size; full batch when absent.
    pub batch_size: Option<usize>,
    pub iterate: IterateChoice,
    pub projection_radius: Option<f64>,
}

/// One hyperparameter setting for one algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lr: f64,
    pub clip: f64,
    pub epochs: usize,
    pub alpha_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub format_version: u32,
    pub base_seed: u64,
    pub dimensions: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    /// CSV path for trial records.
    pub output: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Size of the fresh population sample used for the reported loss.
    pub eval_samples: usize,
    pub cold_init_std: f64,
    /// Fill `wall_ms`; off by default so output is byte-reproducible.
    pub record_timing: bool,
    pub privacy: PrivacySpec,
    pub grid: GridSpec,
    pub synth: SynthConfig,
    pub optimizer: OptimizerSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            base_seed: 0,
            dimensions: vec![500],
            algorithms: vec![Algorithm::ColdSgd, Algorithm::WarmSgd, Algorithm::PdaExact],
            trials: 20,
            output: PathBuf::from("trials.csv"),
            workers: 0,
            eval_samples: 10_000,
            cold_init_std: 0.01,
            record_timing: false,
            privacy: PrivacySpec::default(),
            grid: GridSpec::default(),
            synth: SynthConfig::default(),
            optimizer: OptimizerSpec::default(),
        }
    }
}

fn positive(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        Some(v) => Err(HarnessError::Config(format!("{name} must be finite and > 0, got {v}"))),
        None => Ok(()),
    }
}

fn nonempty<T>(name: &str, values: &[T]) -> Result<()> {
    if values.is_empty() {
        Err(HarnessError::Config(format!("{name} must not be empty")))
    } else {
        Ok(())
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec fields are all representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(HarnessError::FormatVersion { expected: FORMAT_VERSION, found: self.format_version });
        }
        nonempty("dimensions", &self.dimensions)?;
        nonempty("algorithms", &self.algorithms)?;
        nonempty("grid.learning_rates", &self.grid.learning_rates)?;
        nonempty("grid.clip_norms", &self.grid.clip_norms)?;
        nonempty("grid.epochs", &self.grid.epochs)?;
        if self.algorithms.contains(&Algorithm::PdaFirstOrder) {
            nonempty("grid.alpha_ks", &self.grid.alpha_ks)?;
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        if self.eval_samples == 0 {
            return Err(HarnessError::Config("eval_samples must be >= 1".into()));
        }
        if !(self.cold_init_std.is_finite() && self.cold_init_std >= 0.0) {
            return Err(HarnessError::Config(format!("cold_init_std must be >= 0, got {}", self.cold_init_std)));
        }
        positive("grid.learning_rates", &self.grid.learning_rates)?;
        positive("grid.clip_norms", &self.grid.clip_norms)?;
        for (alg, lrs) in &self.grid.learning_rate_overrides {
            nonempty(&format!("grid.learning_rate_overrides.{alg}"), lrs)?;
            positive(&format!("grid.learning_rate_overrides.{alg}"), lrs)?;
        }
        if self.grid.epochs.contains(&0) {
            return Err(HarnessError::Config("grid.epochs must be >= 1".into()));
        }
        if self.grid.alpha_ks.contains(&0) {
            return Err(HarnessError::Config("grid.alpha_ks must be >= 1".into()));
        }
        if self.optimizer.batch_size == Some(0) {
            return Err(HarnessError::Config("optimizer.batch_size must be >= 1".into()));
        }
        let PrivacySpec { epsilon, delta, noise_multiplier } = self.privacy;
        match noise_multiplier {
            Some(m) if !(m.is_finite() && m >= 0.0) => {
                return Err(HarnessError::Config(format!("privacy.noise_multiplier must be >= 0, got {m}")));
            }
            Some(_) => {}
            None => {
                if !(epsilon.is_finite() && epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
                    return Err(HarnessError::Config(format!(
                        "need epsilon > 0 and 0 < delta < 1, got epsilon = {epsilon}, delta = {delta}"
                    )));
                }
            }
        }
        for &p in &self.dimensions {
            SynthConfig { p, ..self.synth.clone() }.validate()?;
        }
        Ok(())
    }

    pub fn learning_rates(&self, algorithm: Algorithm) -> &[f64] {
        self.grid
            .learning_rate_overrides
            .get(&algorithm)
            .unwrap_or(&self.grid.learning_rates)
    }

    /// Grid points for `algorithm` in lr, clip, epochs, α-horizon order.
    pub fn grid_points(&self, algorithm: Algorithm) -> Vec<GridPoint> {
        let alpha_ks: Vec<Option<usize>> = match algorithm {
            Algorithm::PdaFirstOrder => self.grid.alpha_ks.iter().copied().map(Some).collect(),
            _ => vec![None],
        };
        let mut points = Vec::new();
        for &lr in self.learning_rates(algorithm) {
            for &clip in &self.grid.clip_norms {
                for &epochs in &self.grid.epochs {
                    for &alpha_k in &alpha_ks {
                        points.push(GridPoint { lr, clip, epochs, alpha_k });
                    }
                }
            }
        }
        points
    }

    /// Optimizer steps for `epochs` passes over `n` private examples.
    pub fn steps_for(&self, epochs: usize, n: usize) -> usize {
        match self.optimizer.batch_size {
            Some(b) if b < n => epochs * (n / b),
            _ => epochs,
        }
    }

    pub fn synth_for(&self, p: usize) -> SynthConfig {
        SynthConfig { p, ..self.synth.clone() }
    }
}
