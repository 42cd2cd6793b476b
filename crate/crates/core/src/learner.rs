//! Parameter selection, the thresholded edge sweep, the subsample-and-regress
//! baseline and recovery metrics.
//!
//! Two parameter modes are supported. In closed-form mode the interval
//! length and threshold come from the separation identity
//!
//! ```text
//! tau = 1 / (d (6 y_max / (b sigma_min beta_min) + 1))
//! rho = 3 eta / 2,   eta = (2 y_max / sigma_min) q tau d
//! ```
//!
//! In calibrated mode `tau` and `rho` use the asymptotic forms with explicit
//! constants `C3`, `C4`:
//!
//! ```text
//! tau = 1 / (d (C3 sqrt(log(p/delta)) / (sigma_min beta_min) + 1))
//! rho = C4 tau d sqrt(log(p/delta)) / sigma_min
//! ```

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{edge_statistic, IntervalGrid};
use crate::dynamics::Trajectory;
use crate::error::{out_of_range, Error, Result};
use crate::model::{normalize_pair, EdgeSet};
use crate::serde_f64;

/// Lower bound on `P(B | A, D)` before the `delta / 2` correction.
pub const B_BASE: f64 = 0.78;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Scale of `y_max = C1 sigma_max sqrt(log(p / delta))`.
    pub c1: f64,
    /// `None` selects the closed-form interval length.
    #[serde(default)]
    pub c3: Option<f64>,
    /// `None` selects the closed-form threshold. Required when `c3` is set.
    #[serde(default)]
    pub c4: Option<f64>,
}

impl Default for Constants {
    fn default() -> Self {
        Self::closed_form(1.0)
    }
}

impl Constants {
    pub fn closed_form(c1: f64) -> Self {
        Self { c1, c3: None, c4: None }
    }

    pub fn calibrated(c1: f64, c3: f64, c4: f64) -> Self {
        Self {
            c1,
            c3: Some(c3),
            c4: Some(c4),
        }
    }

    pub fn is_closed_form(&self) -> bool {
        self.c3.is_none() && self.c4.is_none()
    }

    fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(out_of_range("C1", self.c1, "(0, inf)"));
        }
        match (self.c3, self.c4) {
            (None, None) => Ok(()),
            (Some(c3), Some(c4)) => {
                if !(c3 > 0.0 && c3.is_finite()) {
                    return Err(out_of_range("C3", c3, "(0, inf)"));
                }
                if !(c4 > 0.0 && c4.is_finite()) {
                    return Err(out_of_range("C4", c4, "(0, inf)"));
                }
                Ok(())
            }
            _ => Err(Error::Config("C3 and C4 must be set together".into())),
        }
    }
}

/// `[(1 - e^{-tau/3}) e^{-tau/3}]^3`, the probability of event A.
pub fn event_a_probability(tau: f64) -> f64 {
    let e = (-tau / 3.0).exp();
    // -expm1 keeps precision for tiny tau
    let third = -(-tau / 3.0).exp_m1() * e;
    third.powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub p: usize,
    pub d: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub delta: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub beta_min: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub sigma_min: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub sigma_max: f64,
    pub constants: Constants,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub y_max: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub b: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub tau: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub q: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub eta: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub eta_prime: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub rho: f64,
}

impl LearnerParams {
    /// `beta_min (1 - tau d) b q - 3 eta`; zero up to rounding in closed-form mode.
    pub fn separation_residual(&self) -> f64 {
        self.beta_min * (1.0 - self.tau * self.d as f64) * self.b * self.q - 3.0 * self.eta
    }

    /// Lower bound on the expected edge statistic, `beta_min (1 - tau d) b q`.
    pub fn edge_mean_bound(&self) -> f64 {
        self.beta_min * (1.0 - self.tau * self.d as f64) * self.b * self.q
    }

    /// `2 y_max / sigma_min`, the almost-sure bound on any gated term.
    pub fn term_bound(&self) -> f64 {
        2.0 * self.y_max / self.sigma_min
    }

    pub fn log_p_over_delta(&self) -> f64 {
        (self.p as f64 / self.delta).ln()
    }

    /// Same parameters with the threshold replaced.
    pub fn with_threshold(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }
}

pub fn select_parameters(
    p: usize,
    d: usize,
    delta: f64,
    beta_min: f64,
    sigma_min: f64,
    sigma_max: f64,
    constants: Constants,
) -> Result<LearnerParams> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(out_of_range("delta", delta, "(0, 1/2)"));
    }
    if p < 2 {
        return Err(out_of_range("p", p as f64, "[2, inf)"));
    }
    if d == 0 {
        return Err(out_of_range("d", 0.0, "[1, inf)"));
    }
    for (what, v) in [
        ("beta_min", beta_min),
        ("sigma_min", sigma_min),
        ("sigma_max", sigma_max),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(out_of_range(what, v, "(0, inf)"));
        }
    }
    constants.validate()?;

    let df = d as f64;
    let log_term = (p as f64 / delta).ln();
    let y_max = constants.c1 * sigma_max * log_term.sqrt();
    let b = B_BASE - delta / 2.0;
    let tau = match constants.c3 {
        None => 1.0 / (df * (6.0 * y_max / (b * sigma_min * beta_min) + 1.0)),
        Some(c3) => 1.0 / (df * (c3 * log_term.sqrt() / (sigma_min * beta_min) + 1.0)),
    };
    let q = event_a_probability(tau);
    let eta = 2.0 * y_max / sigma_min * q * tau * df;
    let rho = match constants.c4 {
        None => 1.5 * eta,
        Some(c4) => c4 * tau * df * log_term.sqrt() / sigma_min,
    };
    Ok(LearnerParams {
        p,
        d,
        delta,
        beta_min,
        sigma_min,
        sigma_max,
        constants,
        y_max,
        b,
        tau,
        q,
        eta,
        eta_prime: 2.0 * eta,
        rho,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LearnOptions {
    /// Worker threads for the pair sweep; `None` uses the global pool.
    pub workers: Option<usize>,
}

/// Statistics for one unordered pair `{i, j}` with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    /// `sum / k_max` with `i` as the twice-updated node.
    #[serde(serialize_with = "serde_f64::serialize")]
    pub score_ij: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub score_ji: f64,
    pub active_ij: usize,
    pub active_ji: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub max_abs_term: f64,
}

impl PairScore {
    pub fn score(&self) -> f64 {
        self.score_ij.abs().max(self.score_ji.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnOutput {
    pub aborted: bool,
    #[serde(serialize_with = "serialize_edges")]
    pub edges: EdgeSet,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub threshold: f64,
    pub k_max: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub max_abs_term: f64,
    pub scores: Vec<PairScore>,
}

pub(crate) fn serialize_edges<S: serde::Serializer>(edges: &EdgeSet, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(edges.iter().map(|&(i, j)| [i, j]))
}

impl LearnOutput {
    /// Edges whose score clears `rho`; used to re-threshold without rescanning.
    pub fn edges_at(&self, rho: f64) -> EdgeSet {
        if self.aborted {
            return EdgeSet::new();
        }
        self.scores
            .iter()
            .filter(|s| s.score() >= rho)
            .map(|s| (s.i, s.j))
            .collect()
    }
}

fn run_in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// The structure learner.
///
/// Aborts with an empty edge set when the trajectory leaves the `y_max` box.
/// Otherwise every unordered pair is scanned in both orientations and kept
/// when either `|sum / k_max|` reaches the threshold.
pub fn learn(traj: &Trajectory, params: &LearnerParams, opts: LearnOptions) -> Result<LearnOutput> {
    if traj.p() != params.p {
        return Err(Error::Config(format!(
            "trajectory has p = {}, parameters were selected for p = {}",
            traj.p(),
            params.p
        )));
    }
    if !(params.rho >= 0.0) {
        return Err(out_of_range("rho", params.rho, "[0, inf)"));
    }
    let grid = IntervalGrid::for_trajectory(params.tau, traj)?;
    if grid.k_max() == 0 {
        return Err(Error::Config(format!(
            "horizon {} is shorter than tau = {}",
            traj.horizon(),
            params.tau
        )));
    }
    if !crate::detector::check_c(traj, params.y_max) {
        return Ok(LearnOutput {
            aborted: true,
            edges: EdgeSet::new(),
            threshold: params.rho,
            k_max: grid.k_max(),
            max_abs_term: 0.0,
            scores: Vec::new(),
        });
    }
    let p = traj.p();
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect();
    let scores = run_in_pool(opts.workers, || {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let ij = edge_statistic(traj, i, j, &grid, params.sigma_min)?;
                let ji = edge_statistic(traj, j, i, &grid, params.sigma_min)?;
                Ok(PairScore {
                    i,
                    j,
                    score_ij: ij.mean(),
                    score_ji: ji.mean(),
                    active_ij: ij.terms.len(),
                    active_ji: ji.terms.len(),
                    max_abs_term: ij.max_abs_term().max(ji.max_abs_term()),
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let max_abs_term = scores.iter().fold(0.0_f64, |m, s| m.max(s.max_abs_term));
    let mut out = LearnOutput {
        aborted: false,
        edges: EdgeSet::new(),
        threshold: params.rho,
        k_max: grid.k_max(),
        max_abs_term,
        scores,
    };
    out.edges = out.edges_at(params.rho);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    pub edges: EdgeSet,
    /// Row `i` holds the regression coefficients of `X_i` on the other nodes.
    pub coefficients: DMatrix<f64>,
    pub rows: usize,
}

/// Subsample the state every `gap` time units and regress each node on all
/// others by least squares. `{i, j}` is declared when either coefficient
/// reaches `threshold`.
pub fn baseline_subsample_learn(traj: &Trajectory, gap: f64, threshold: f64) -> Result<BaselineOutput> {
    if !(gap > 0.0 && gap.is_finite()) {
        return Err(out_of_range("gap", gap, "(0, inf)"));
    }
    let p = traj.p();
    let n = (traj.horizon() / gap).floor() as usize;
    if n < p + 1 {
        return Err(Error::Insufficient(format!(
            "{n} subsampled states, regression needs at least p + 1 = {}",
            p + 1
        )));
    }
    let mut data = DMatrix::<f64>::zeros(n, p);
    for r in 0..n {
        let t = ((r + 1) as f64 * gap).min(traj.horizon());
        for i in 0..p {
            data[(r, i)] = traj.value_at(i, t)?;
        }
    }
    let mut coefficients = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let others: Vec<usize> = (0..p).filter(|&j| j != i).collect();
        if others.is_empty() {
            continue;
        }
        let x = data.select_columns(&others);
        let y = DVector::from_iterator(n, data.column(i).iter().copied());
        let coef = x
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Internal(format!("least squares for node {i}: {e}")))?;
        for (c, &j) in others.iter().enumerate() {
            coefficients[(i, j)] = coef[c];
        }
    }
    let mut edges = EdgeSet::new();
    for i in 0..p {
        for j in 0..p {
            if i != j && coefficients[(i, j)].abs() >= threshold {
                edges.insert(normalize_pair(i, j));
            }
        }
    }
    Ok(BaselineOutput {
        edges,
        coefficients,
        rows: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryMetrics {
    pub exact: bool,
    pub hamming: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub precision: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub recall: f64,
    /// Wall-clock time; kept out of serialized payloads.
    #[serde(skip)]
    pub runtime: Option<Duration>,
    pub realized_n: Option<usize>,
}

/// Compare an estimated edge set against the truth on `p` vertices.
pub fn compare(p: usize, e_hat: &EdgeSet, e_true: &EdgeSet) -> Result<RecoveryMetrics> {
    for &(i, j) in e_hat.iter().chain(e_true) {
        if i >= p || j >= p || i >= j {
            return Err(Error::Validation(format!(
                "edge ({i}, {j}) is not a normalized pair on {p} vertices"
            )));
        }
    }
    let tp = e_hat.intersection(e_true).count();
    let hamming = e_hat.symmetric_difference(e_true).count();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(RecoveryMetrics {
        exact: hamming == 0,
        hamming,
        precision: ratio(tp, e_hat.len()),
        recall: ratio(tp, e_true.len()),
        runtime: None,
        realized_n: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, InitState, SimOptions};
    use crate::model::{build_bounded_degree_model, GgmModel, Graph, Provenance};

    #[test]
    fn frozen_closed_form_parameters() {
        let prm = select_parameters(20, 2, 0.1, 0.3, 1.0, 1.0, Constants::closed_form(1.0)).unwrap();
        // evaluated independently in double precision and frozen
        assert!((prm.y_max - 2.301807413001365).abs() < 1e-12);
        assert!((prm.b - 0.73).abs() < 1e-15);
        assert!((prm.tau - 0.007804790721069038).abs() < 1e-14);
        assert!((prm.q / 1.7403477010442103e-8 - 1.0).abs() < 1e-9);
        assert!((prm.eta / 1.2506225693629996e-9 - 1.0).abs() < 1e-9);
        assert_eq!(prm.eta_prime, 2.0 * prm.eta);
        assert_eq!(prm.rho, 1.5 * prm.eta);
        assert!(prm.separation_residual().abs() < 1e-12);
    }

    #[test]
    fn b_near_half_delta() {
        let prm = select_parameters(10, 2, 0.5 - 1e-12, 0.3, 1.0, 1.0, Constants::default()).unwrap();
        assert!((prm.b - 0.53).abs() < 1e-9);
        assert!(select_parameters(10, 2, 0.5, 0.3, 1.0, 1.0, Constants::default()).is_err());
        assert!(select_parameters(10, 2, 0.1, 0.0, 1.0, 1.0, Constants::default()).is_err());
    }

    #[test]
    fn calibrated_mode_formulas() {
        let prm = select_parameters(20, 2, 0.1, 0.3, 1.0, 1.0, Constants::calibrated(1.0, 0.5, 2.0)).unwrap();
        let l = (200.0_f64).ln().sqrt();
        assert!((prm.tau - 0.5 / (0.5 * l / 0.3 + 1.0)).abs() < 1e-15);
        assert!((prm.rho - 2.0 * prm.tau * 2.0 * l).abs() < 1e-14);
        let half = Constants {
            c1: 1.0,
            c3: Some(1.0),
            c4: None,
        };
        assert!(select_parameters(20, 2, 0.1, 0.3, 1.0, 1.0, half).is_err());
    }

    #[test]
    fn event_a_probability_at_three_ln_two() {
        assert!((event_a_probability(3.0 * 2f64.ln()) - 1.0 / 64.0).abs() < 1e-15);
        assert!(event_a_probability(1e-4) < 1e-12);
    }

    fn two_node() -> GgmModel {
        let theta = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        GgmModel::from_theta(theta, None, Provenance::default()).unwrap()
    }

    #[test]
    fn aborts_when_gate_fails() {
        let traj = Trajectory::from_records(10.0, vec![0.0, 0.0], [(1.0, 0, 50.0)]).unwrap();
        let prm = select_parameters(2, 1, 0.1, 0.5, 0.7, 0.8, Constants::default()).unwrap();
        let out = learn(&traj, &prm, LearnOptions::default()).unwrap();
        assert!(out.aborted && out.edges.is_empty());
        assert!(!crate::detector::check_c(&traj, prm.y_max));
    }

    #[test]
    fn k_max_zero_is_config_error() {
        let traj = Trajectory::from_records(1e-3, vec![0.0, 0.0], []).unwrap();
        let prm = select_parameters(2, 1, 0.1, 0.5, 0.7, 0.8, Constants::calibrated(1.0, 0.1, 1.0)).unwrap();
        assert!(matches!(
            learn(&traj, &prm, LearnOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let model = build_bounded_degree_model(&Graph::cycle(6).unwrap(), 0.3, 1.0).unwrap();
        let traj = simulate(&model, 300.0, &InitState::Stationary, 11, SimOptions::default()).unwrap();
        let prm = select_parameters(6, 2, 0.1, 0.3, 1.0, 2.0, Constants::calibrated(3.0, 0.05, 0.05)).unwrap();
        let one = learn(&traj, &prm, LearnOptions { workers: Some(1) }).unwrap();
        let four = learn(&traj, &prm, LearnOptions { workers: Some(4) }).unwrap();
        assert!(!one.aborted);
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&four).unwrap()
        );
        assert!(one.max_abs_term <= prm.term_bound());
    }

    #[test]
    fn baseline_identity_finds_nothing() {
        let model = build_bounded_degree_model(&Graph::empty(4), 0.0, 1.0).unwrap();
        let traj = simulate(&model, 2000.0, &InitState::Stationary, 3, SimOptions::default()).unwrap();
        let out = baseline_subsample_learn(&traj, 4.0, 0.15).unwrap();
        assert!(out.edges.is_empty(), "{:?}", out.coefficients);
    }

    #[test]
    fn baseline_two_node_coefficient() {
        let traj = simulate(&two_node(), 5000.0, &InitState::Stationary, 5, SimOptions::default()).unwrap();
        let out = baseline_subsample_learn(&traj, 10.0, 0.25).unwrap();
        assert_eq!(out.rows, 500);
        // OLS slope of one unit-correlation-1/2 Gaussian on another: se ~ sqrt(0.75/500)
        assert!((out.coefficients[(0, 1)] - 0.5).abs() < 4.0 * (0.75f64 / 500.0).sqrt());
        assert!(out.edges.contains(&(0, 1)));
    }

    #[test]
    fn baseline_needs_enough_rows() {
        let traj = Trajectory::from_records(2.0, vec![0.0; 4], []).unwrap();
        assert!(matches!(
            baseline_subsample_learn(&traj, 1.0, 0.1),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn compare_cases() {
        let e: EdgeSet = [(0, 1), (1, 2)].into_iter().collect();
        let m = compare(3, &EdgeSet::new(), &EdgeSet::new()).unwrap();
        assert!(m.exact && m.hamming == 0 && m.precision == 1.0 && m.recall == 1.0);
        let wrong: EdgeSet = [(0, 1), (0, 2)].into_iter().collect();
        let m = compare(3, &wrong, &e).unwrap();
        assert!(!m.exact);
        assert_eq!(m.hamming, 2);
        assert_eq!(m.precision, 0.5);
        assert!(compare(2, &e, &e).is_err());
    }
}
