//! Fixtures shared by the benchmarks.

use glauber_ggm::dynamics::{simulate, SimOptions};
use glauber_ggm::learner::select_parameters;
use glauber_ggm::model::build_bounded_degree_model;
use glauber_ggm::{Constants, GgmModel, Graph, InitState, LearnerParams, Trajectory};

pub const SEED: u64 = 11;

pub fn cycle(p: usize) -> GgmModel {
    build_bounded_degree_model(&Graph::cycle(p).expect("p >= 3"), 0.3, 1.0).expect("valid cycle model")
}

pub fn trajectory(model: &GgmModel, horizon: f64) -> Trajectory {
    simulate(model, horizon, &InitState::Stationary, SEED, SimOptions::default()).expect("simulation")
}

/// Calibrated-mode parameters with a loose `C1` so the gate passes.
pub fn params(model: &GgmModel) -> LearnerParams {
    let b = model.bounds();
    let d = model.graph().max_degree();
    select_parameters(
        model.p(),
        d,
        0.1,
        b.beta_min,
        b.sigma_min,
        b.sigma_max,
        Constants::calibrated(3.0, 0.005, 0.05),
    )
    .expect("valid parameters")
}
