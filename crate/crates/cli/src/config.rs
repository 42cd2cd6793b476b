//! Experiment configuration, loaded from TOML and overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use glauber_ggm::model::{build_bounded_degree_model, build_clique_ensemble};
use glauber_ggm::{Constants, EnsembleSpec, GgmModel, Graph, InitState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ConfigError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Forces the closed-form interval length and threshold.
    pub closed_form: bool,
    pub model: ModelSpec,
    pub simulate: SimulateConfig,
    pub learn: LearnConfig,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Cycle {
        p: usize,
        beta: f64,
        diag: f64,
    },
    Path {
        p: usize,
        beta: f64,
        diag: f64,
    },
    Star {
        p: usize,
        beta: f64,
        diag: f64,
    },
    Empty {
        p: usize,
    },
    Ensemble {
        p: usize,
        d: usize,
        lambda: f64,
        index: usize,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Cycle {
            p: 20,
            beta: 0.3,
            diag: 1.0,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> glauber_ggm::Result<GgmModel> {
        match *self {
            ModelSpec::Cycle { p, beta, diag } => build_bounded_degree_model(&Graph::cycle(p)?, beta, diag),
            ModelSpec::Path { p, beta, diag } => build_bounded_degree_model(&Graph::path(p)?, beta, diag),
            ModelSpec::Star { p, beta, diag } => build_bounded_degree_model(&Graph::star(p)?, beta, diag),
            ModelSpec::Empty { p } => build_bounded_degree_model(&Graph::empty(p), 0.0, 1.0),
            ModelSpec::Ensemble { p, d, lambda, index } => build_clique_ensemble(&EnsembleSpec { p, d, lambda, index }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Stationary,
    Zero,
}

impl InitKind {
    pub fn state(self) -> InitState {
        match self {
            InitKind::Stationary => InitState::Stationary,
            InitKind::Zero => InitState::Zero,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Model file; when absent the `[model]` section is built.
    pub model: Option<PathBuf>,
    pub horizon: f64,
    pub init: InitKind,
    pub record_noise: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            model: None,
            horizon: 1000.0,
            init: InitKind::Stationary,
            record_noise: false,
        }
    }
}

/// Where the learner takes its constants from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsConfig {
    pub c1: Option<f64>,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    /// JSON file written by `verify --calibrate`; explicit values win.
    pub file: Option<PathBuf>,
}

impl ConstantsConfig {
    pub fn resolve(&self, closed_form: bool) -> anyhow::Result<Constants> {
        let mut c = match &self.file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<Constants>(&text)
                    .map_err(|e| ConfigError(format!("constants file {}: {e}", path.display())))?
            }
            None => Constants::default(),
        };
        if let Some(v) = self.c1 {
            c.c1 = v;
        }
        if self.c3.is_some() || self.c4.is_some() {
            c.c3 = self.c3;
            c.c4 = self.c4;
        }
        if closed_form {
            c.c3 = None;
            c.c4 = None;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub trajectory: Option<PathBuf>,
    /// Ground-truth model; supplies default bounds and recovery metrics.
    pub model: Option<PathBuf>,
    pub delta: f64,
    pub d: Option<usize>,
    pub beta_min: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub constants: ConstantsConfig,
    pub threshold_override: Option<f64>,
    /// Optional CSV dump of every contributing term.
    pub evidence: Option<PathBuf>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            trajectory: None,
            model: None,
            delta: 0.1,
            d: None,
            beta_min: None,
            sigma_min: None,
            sigma_max: None,
            constants: ConstantsConfig::default(),
            threshold_override: None,
            evidence: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub p_grid: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub d: usize,
    pub diag: f64,
    pub delta: f64,
    pub trials: usize,
    pub constants: ConstantsConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            p_grid: vec![10, 20, 40],
            t_grid: vec![5e3, 1e4, 2e4, 5e4],
            beta_grid: vec![0.3],
            d: 2,
            diag: 1.0,
            delta: 0.1,
            trials: 20,
            constants: ConstantsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub event_a_taus: Vec<f64>,
    pub event_a_trials: usize,
    pub event_d_p: usize,
    pub event_d_tau: f64,
    pub event_d_trials: usize,
    pub delta: f64,
    /// Interval length for the conditional verifiers.
    pub interval_tau: f64,
    pub event_b_trials: usize,
    pub oracle_retain: usize,
    pub oracle_max_trials: usize,
    /// Edge weight of the three-node chain used for the non-edge oracle.
    pub chain_beta: f64,
    pub stationarity_chains: usize,
    pub stationarity_horizon: f64,
    /// Multiplies every target; values other than 1 self-test the checker.
    pub perturb_target: f64,
    /// Verifier names to run; empty runs all of them.
    pub only: Vec<String>,
    pub calibration: CalibrationConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            event_a_taus: vec![0.1, 0.3, 3.0 * std::f64::consts::LN_2],
            event_a_trials: 1_000_000,
            event_d_p: 10,
            event_d_tau: 0.5,
            event_d_trials: 100_000,
            delta: 0.1,
            interval_tau: 3.0 * std::f64::consts::LN_2,
            event_b_trials: 400_000,
            oracle_retain: 10_000,
            oracle_max_trials: 1 << 26,
            chain_beta: 0.4,
            stationarity_chains: 200,
            stationarity_horizon: 50.0,
            perturb_target: 1.0,
            only: Vec::new(),
            calibration: CalibrationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub p: usize,
    pub beta: f64,
    pub diag: f64,
    pub delta: f64,
    pub horizon: f64,
    pub runs: usize,
    pub c3_grid: Vec<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            p: 20,
            beta: 0.3,
            diag: 1.0,
            delta: 0.1,
            horizon: 5e4,
            runs: 10,
            c3_grid: vec![0.005, 0.05, 0.5],
        }
    }
}
