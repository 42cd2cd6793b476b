//! `gen-model`, `simulate` and `learn`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::Context;
use glauber_ggm::detector::{edge_statistic, write_evidence_csv};
use glauber_ggm::dynamics::{simulate, SimOptions};
use glauber_ggm::learner::{compare, learn, select_parameters, LearnOptions};
use glauber_ggm::model::Provenance;
use glauber_ggm::{GgmModel, IntervalGrid, LearnOutput, LearnerParams, RecoveryMetrics, Trajectory};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::ConfigError;

pub fn load_model(path: &Path) -> anyhow::Result<GgmModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    GgmModel::from_json(&text).with_context(|| format!("parsing model {}", path.display()))
}

pub fn load_trajectory(path: &Path) -> anyhow::Result<Trajectory> {
    let f = File::open(path).with_context(|| format!("opening trajectory {}", path.display()))?;
    Trajectory::read_jsonl(BufReader::new(f)).with_context(|| format!("parsing trajectory {}", path.display()))
}

/// Build the configured model and stamp it with the config hash and seed.
pub fn gen_model(cfg: &ExperimentConfig) -> anyhow::Result<GgmModel> {
    let model = cfg.model.build()?;
    let provenance = Provenance {
        seed: Some(cfg.seed),
        config_hash: Some(cfg.hash()),
        ..model.provenance().clone()
    };
    Ok(model.with_provenance(provenance))
}

pub fn simulate_model(cfg: &ExperimentConfig) -> anyhow::Result<Trajectory> {
    let model = match &cfg.simulate.model {
        Some(path) => load_model(path)?,
        None => gen_model(cfg)?,
    };
    let opts = SimOptions {
        record_noise: cfg.simulate.record_noise,
    };
    let mut traj = simulate(&model, cfg.simulate.horizon, &cfg.simulate.init.state(), cfg.seed, opts)?;
    traj.set_config_hash(cfg.hash());
    Ok(traj)
}

pub fn write_trajectory(traj: &Trajectory, out: &Path) -> anyhow::Result<()> {
    let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    traj.write_jsonl(BufWriter::new(f))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LearnReport {
    pub config_hash: String,
    pub seed: u64,
    pub trajectory_seed: u64,
    pub model_hash: String,
    pub realized_n: usize,
    pub params: LearnerParams,
    #[serde(flatten)]
    pub output: LearnOutput,
    pub metrics: Option<RecoveryMetrics>,
}

impl LearnReport {
    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

/// Learner parameters from explicit bounds in the config, falling back to
/// the bounds stored on the ground-truth model.
pub fn learner_params(cfg: &ExperimentConfig, p: usize, truth: Option<&GgmModel>) -> anyhow::Result<LearnerParams> {
    let lc = &cfg.learn;
    let bounds = truth.map(|m| m.bounds());
    let missing = |what: &str| {
        ConfigError(format!(
            "learner bound `{what}` is not configured and no model was given"
        ))
    };
    let d = match (lc.d, truth) {
        (Some(d), _) => d,
        (None, Some(m)) => m.graph().max_degree().max(1),
        (None, None) => return Err(missing("d").into()),
    };
    let beta_min = lc
        .beta_min
        .or(bounds.map(|b| b.beta_min))
        .ok_or_else(|| missing("beta_min"))?;
    let sigma_min = lc
        .sigma_min
        .or(bounds.map(|b| b.sigma_min))
        .ok_or_else(|| missing("sigma_min"))?;
    let sigma_max = lc
        .sigma_max
        .or(bounds.map(|b| b.sigma_max))
        .ok_or_else(|| missing("sigma_max"))?;
    let constants = lc.constants.resolve(cfg.closed_form)?;
    let params = select_parameters(p, d, lc.delta, beta_min, sigma_min, sigma_max, constants)?;
    Ok(match lc.threshold_override {
        Some(rho) => params.with_threshold(rho),
        None => params,
    })
}

pub fn learn_trajectory(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    truth: Option<&GgmModel>,
    workers: Option<usize>,
) -> anyhow::Result<LearnReport> {
    let params = learner_params(cfg, traj.p(), truth)?;
    let started = std::time::Instant::now();
    let output = learn(traj, &params, LearnOptions { workers })?;
    let metrics = match truth {
        Some(m) => {
            let mut metrics = compare(traj.p(), &output.edges, m.graph().edges())?;
            metrics.runtime = Some(started.elapsed());
            metrics.realized_n = Some(traj.len());
            Some(metrics)
        }
        None => None,
    };
    Ok(LearnReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        trajectory_seed: traj.seed(),
        model_hash: traj.model_hash().to_string(),
        realized_n: traj.len(),
        params,
        output,
        metrics,
    })
}

/// Write the per-term audit CSV for every ordered pair.
pub fn write_evidence(traj: &Trajectory, params: &LearnerParams, out: &Path) -> anyhow::Result<()> {
    let grid = IntervalGrid::for_trajectory(params.tau, traj)?;
    let p = traj.p();
    let mut all = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j {
                all.push(edge_statistic(traj, i, j, &grid, params.sigma_min)?);
            }
        }
    }
    let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_evidence_csv(BufWriter::new(f), &all)?;
    Ok(())
}
