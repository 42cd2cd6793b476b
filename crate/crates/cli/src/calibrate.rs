//! Fitting the learner constants on a calibration model.
//!
//! `C1` is the `1 - delta/2` quantile of `max |Y| / (sigma_max sqrt(log(p/delta)))`
//! over stationary runs. For each candidate `C3` the same runs are learned
//! and `C4` is set so the threshold sits midway between the typical weakest
//! edge score and the typical strongest non-edge score. The candidate with
//! the widest relative gap wins.

use glauber_ggm::analysis::{calibrate_c1, calibrate_c4, score_split, ScoreSplit};
use glauber_ggm::dynamics::{simulate, SimOptions};
use glauber_ggm::learner::{learn, select_parameters, LearnOptions};
use glauber_ggm::model::build_bounded_degree_model;
use glauber_ggm::rng::derive_seed;
use glauber_ggm::{Constants, EdgeSet, Graph, InitState, LearnOutput};
use serde::Serialize;

use crate::config::CalibrationConfig;
use crate::ConfigError;

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub c3: f64,
    pub c4: f64,
    pub tau: f64,
    pub rho: f64,
    pub split: ScoreSplit,
    /// `(weakest edge - strongest non-edge) / rho`.
    pub relative_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub constants: Constants,
    pub c1: f64,
    pub candidates: Vec<Candidate>,
    pub config: CalibrationConfig,
    pub seed: u64,
}

pub fn calibrate(cfg: &CalibrationConfig, seed: u64) -> anyhow::Result<CalibrationReport> {
    if cfg.c3_grid.is_empty() {
        return Err(ConfigError("calibration needs at least one C3 candidate".into()).into());
    }
    if cfg.runs < 2 {
        return Err(ConfigError("calibration needs at least two runs".into()).into());
    }
    let model = build_bounded_degree_model(&Graph::cycle(cfg.p)?, cfg.beta, cfg.diag)?;
    let b = model.bounds();
    let d = model.graph().max_degree();
    let c1 = calibrate_c1(&model, cfg.horizon, cfg.runs, cfg.delta, derive_seed(seed, &[1]))?;

    let params: Vec<_> = cfg
        .c3_grid
        .iter()
        .map(|&c3| {
            select_parameters(
                cfg.p,
                d,
                cfg.delta,
                cfg.beta.abs(),
                b.sigma_min,
                b.sigma_max,
                Constants::calibrated(c1, c3, 1.0),
            )
        })
        .collect::<Result<_, _>>()?;
    let mut runs: Vec<Vec<(LearnOutput, EdgeSet)>> = vec![Vec::new(); params.len()];
    for r in 0..cfg.runs {
        // one trajectory per run, learned under every candidate
        let traj = simulate(
            &model,
            cfg.horizon,
            &InitState::Stationary,
            derive_seed(seed, &[2, r as u64]),
            SimOptions::default(),
        )?;
        for (k, prm) in params.iter().enumerate() {
            let out = learn(&traj, prm, LearnOptions::default())?;
            runs[k].push((out, model.graph().edges().clone()));
        }
    }

    let mut candidates = Vec::new();
    for (prm, runs) in params.iter().zip(&runs) {
        let split = score_split(runs)?;
        let c4 = calibrate_c4(prm, runs)?;
        let rho = split.midpoint();
        candidates.push(Candidate {
            c3: prm.constants.c3.expect("calibrated"),
            c4,
            tau: prm.tau,
            rho,
            split,
            relative_gap: (split.weakest_edge - split.strongest_nonedge) / rho,
        });
    }
    let best = candidates
        .iter()
        .max_by(|a, b| a.relative_gap.total_cmp(&b.relative_gap))
        .expect("non-empty grid");
    Ok(CalibrationReport {
        constants: Constants::calibrated(c1, best.c3, best.c4),
        c1,
        candidates: candidates.clone(),
        config: cfg.clone(),
        seed,
    })
}
