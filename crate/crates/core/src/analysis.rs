//! Monte-Carlo verifiers and numeric utilities.
//!
//! Each verifier returns an [`McEstimate`] carrying the estimate, its
//! standard error, the closed-form target and the resulting z-score. Trials
//! run in fixed-size chunks, each on its own `(seed, chunk)` substream, and
//! are reduced in chunk order, so results do not depend on the thread count.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::detector::{edge_statistic, interval_bounds, IntervalGrid};
use crate::dynamics::{
    initial_state, simulate, simulate_terminal, GlauberChain, InitState, SimOptions, StationarySampler, Trajectory,
};
use crate::error::{out_of_range, Error, Result};
use crate::learner::{LearnOutput, LearnerParams};
use crate::model::{EdgeSet, GgmModel};
use crate::rng::{self, substream};
use crate::serde_f64;

/// Trials per independent RNG substream.
const CHUNK: usize = 4096;
/// Chunks simulated between checks of a retention target.
const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Worst of two verdicts: any failure wins, then inconclusive.
    pub fn and(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    /// Simulated units (intervals or chains).
    pub trials: u64,
    /// Samples entering the estimate; differs from `trials` under rejection.
    pub retained: u64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub estimate: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub std_error: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub target: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub z: f64,
}

impl McEstimate {
    /// Proportion estimate. The plug-in variance is floored at one success
    /// so an all-zero or all-one sample still has a positive error.
    pub fn proportion(trials: u64, successes: u64, target: f64) -> Self {
        let n = successes as f64;
        let t = trials.max(1) as f64;
        let est = n / t;
        let var = (est * (1.0 - est)).max(1.0 / t);
        Self::with(trials, trials, est, (var / t).sqrt(), target)
    }

    /// Sample-mean estimate over `values`.
    pub fn mean(trials: u64, values: &[f64], target: f64) -> Self {
        let (mean, se) = mean_and_se(values);
        Self::with(trials, values.len() as u64, mean, se, target)
    }

    fn with(trials: u64, retained: u64, estimate: f64, std_error: f64, target: f64) -> Self {
        let z = if std_error > 0.0 {
            (estimate - target) / std_error
        } else if estimate == target {
            0.0
        } else {
            f64::INFINITY.copysign(estimate - target)
        };
        Self {
            trials,
            retained,
            estimate,
            std_error,
            target,
            z,
        }
    }

    /// Copy with a different target, as in a perturbed-target self test.
    pub fn retarget(&self, target: f64) -> Self {
        Self::with(self.trials, self.retained, self.estimate, self.std_error, target)
    }

    pub fn two_sided(&self, k: f64) -> Verdict {
        Verdict::from_bool(self.z.abs() <= k)
    }

    /// `estimate + k * std_error >= target`.
    pub fn at_least_target(&self, k: f64) -> Verdict {
        Verdict::from_bool(self.estimate + k * self.std_error >= self.target)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Run `trials` in chunks on independent substreams and fold in chunk order.
fn chunked<T: Send>(seed: u64, trials: usize, f: impl Fn(&mut rng::Rng, usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(trials - c * CHUNK);
            f(&mut substream(seed, c as u64), n)
        })
        .collect()
}

/// Update times of the nodes flagged in `watch` during `[0, tau)` for a
/// rate-`p` superposed clock with uniform node choice.
fn identity_interval<R: Rng + ?Sized>(
    rng: &mut R,
    clock: &Exp<f64>,
    p: usize,
    tau: f64,
    mut on_update: impl FnMut(f64, usize),
) {
    let mut t = 0.0;
    loop {
        t += clock.sample(rng);
        if t >= tau {
            return;
        }
        on_update(t, rng.random_range(0..p));
    }
}

fn check_trials(trials: usize, min: usize) -> Result<()> {
    if trials < min {
        return Err(out_of_range("trials", trials as f64, format!("[{min}, inf)")));
    }
    Ok(())
}

/// Probability of the alternating pattern for a fixed ordered pair over one
/// interval, against `[(1 - e^{-tau/3}) e^{-tau/3}]^3`.
pub fn mc_event_a(tau: f64, p: usize, trials: usize, seed: u64) -> Result<McEstimate> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(out_of_range("tau", tau, "(0, inf)"));
    }
    if p < 2 {
        return Err(out_of_range("p", p as f64, "[2, inf)"));
    }
    check_trials(trials, 1000)?;
    let clock = Exp::new(p as f64).expect("p > 0");
    let w = interval_bounds(tau, 1);
    let hits = chunked(seed, trials, |rng, n| {
        let (mut ti, mut tj) = (Vec::new(), Vec::new());
        let mut hits = 0u64;
        for _ in 0..n {
            ti.clear();
            tj.clear();
            identity_interval(rng, &clock, p, tau, |t, node| match node {
                0 => ti.push(t),
                1 => tj.push(t),
                _ => {}
            });
            hits += crate::detector::a_pattern(&ti, &tj, w) as u64;
        }
        Ok(hits)
    })?;
    let target = crate::learner::event_a_probability(tau);
    Ok(McEstimate::proportion(trials as u64, hits.iter().sum(), target))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventDReport {
    /// Estimate of `P(D)` targeted at the exact `e^{-tau |N(i) \ {j}|}`.
    pub estimate: McEstimate,
    /// The lemma's lower bound `e^{-tau d}`.
    #[serde(serialize_with = "serde_f64::serialize")]
    pub bound: f64,
    pub bound_verdict: Verdict,
    pub exact_verdict: Verdict,
}

/// Ground-truth event D: no node of `N(i) \ {j}` updates in `[start, end)`.
pub fn event_d(traj: &Trajectory, model: &GgmModel, i: usize, j: usize, start: f64, end: f64) -> bool {
    model
        .graph()
        .neighbors(i)
        .iter()
        .filter(|&&u| u != j)
        .all(|&u| traj.count_in(u, start, end) == 0)
}

pub fn mc_event_d(model: &GgmModel, i: usize, j: usize, tau: f64, trials: usize, seed: u64) -> Result<EventDReport> {
    let p = model.p();
    if i >= p || j >= p || i == j {
        return Err(Error::Config(format!("invalid pair ({i}, {j}) for p = {p}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(out_of_range("tau", tau, "(0, inf)"));
    }
    check_trials(trials, 1000)?;
    let mut blocked = vec![false; p];
    for &u in model.graph().neighbors(i) {
        blocked[u] = u != j;
    }
    let n_blocked = blocked.iter().filter(|&&b| b).count();
    let clock = Exp::new(p as f64).expect("p > 0");
    let hits = chunked(seed, trials, |rng, n| {
        let mut hits = 0u64;
        for _ in 0..n {
            let mut clear = true;
            identity_interval(rng, &clock, p, tau, |_, node| clear &= !blocked[node]);
            hits += clear as u64;
        }
        Ok(hits)
    })?;
    let exact = (-tau * n_blocked as f64).exp();
    let bound = (-tau * model.graph().max_degree() as f64).exp();
    let estimate = McEstimate::proportion(trials as u64, hits.iter().sum(), exact);
    Ok(EventDReport {
        estimate,
        bound,
        bound_verdict: estimate.retarget(bound).at_least_target(3.0),
        exact_verdict: estimate.two_sided(3.0),
    })
}

/// Settings shared by the interval-level verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalSetup {
    #[serde(serialize_with = "serde_f64::serialize")]
    pub tau: f64,
    /// Threshold used for event B.
    #[serde(serialize_with = "serde_f64::serialize")]
    pub sigma_min: f64,
    /// Starting states are stationary draws rejected until `|y|_inf <= y_max`.
    pub y_max: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct IntervalObs {
    a: bool,
    d: bool,
    delta_i: f64,
    delta_j: f64,
}

struct IntervalSim<'a> {
    sampler: StationarySampler,
    chain: GlauberChain,
    blocked: Vec<bool>,
    setup: &'a IntervalSetup,
    i: usize,
    j: usize,
}

impl<'a> IntervalSim<'a> {
    fn new(model: &GgmModel, i: usize, j: usize, setup: &'a IntervalSetup) -> Result<Self> {
        let p = model.p();
        if i >= p || j >= p || i == j {
            return Err(Error::Config(format!("invalid pair ({i}, {j}) for p = {p}")));
        }
        if !(setup.tau > 0.0 && setup.tau.is_finite()) {
            return Err(out_of_range("tau", setup.tau, "(0, inf)"));
        }
        if !(setup.sigma_min >= 0.0) {
            return Err(out_of_range("sigma_min", setup.sigma_min, "[0, inf)"));
        }
        let mut blocked = vec![false; p];
        for &u in model.graph().neighbors(i) {
            blocked[u] = u != j;
        }
        Ok(Self {
            sampler: StationarySampler::new(model)?,
            chain: GlauberChain::new(model, vec![0.0; p]),
            blocked,
            setup,
            i,
            j,
        })
    }

    fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let x = self.sampler.sample(rng);
            match self.setup.y_max {
                Some(y) if x.iter().any(|v| v.abs() > y) => continue,
                _ => return x,
            }
        }
    }

    fn run<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<IntervalObs> {
        let x0 = self.start(rng);
        let (i, j) = (self.i, self.j);
        let w = interval_bounds(self.setup.tau, 1);
        self.chain.reset(&x0);
        let (mut ci, mut cj) = ([0u32; 3], [0u32; 3]);
        let mut d = true;
        let (mut yi_w1, mut yi_end, mut yj_w2) = (x0[i], x0[i], x0[j]);
        while let Some(s) = self.chain.advance(rng, w[3])? {
            if s.time >= w[3] {
                break;
            }
            let third = if s.time < w[1] {
                0
            } else if s.time < w[2] {
                1
            } else {
                2
            };
            if s.node == i {
                ci[third] += 1;
                yi_end = s.value;
                if s.time < w[1] {
                    yi_w1 = s.value;
                }
            } else if s.node == j {
                cj[third] += 1;
                if s.time <= w[2] {
                    yj_w2 = s.value;
                }
            }
            d &= !self.blocked[s.node];
        }
        let a = ci[0] > 0 && cj[0] == 0 && cj[1] > 0 && ci[1] == 0 && ci[2] > 0 && cj[2] == 0;
        Ok(IntervalObs {
            a,
            d,
            delta_i: yi_end - yi_w1,
            delta_j: yj_w2 - x0[j],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalReport {
    pub estimate: McEstimate,
    pub verdict: Verdict,
}

/// `P(B | A, D)` from bounded stationary starts, against `0.78 - delta / 2`.
/// Fewer than 100 retained intervals gives an inconclusive verdict.
pub fn mc_event_b_conditional(
    model: &GgmModel,
    i: usize,
    j: usize,
    setup: &IntervalSetup,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<ConditionalReport> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(out_of_range("delta", delta, "(0, 1/2)"));
    }
    IntervalSim::new(model, i, j, setup)?;
    let counts = chunked(seed, trials, |rng, n| {
        let mut sim = IntervalSim::new(model, i, j, setup)?;
        let (mut kept, mut hits) = (0u64, 0u64);
        for _ in 0..n {
            let obs = sim.run(rng)?;
            if obs.a && obs.d {
                kept += 1;
                hits += (obs.delta_j.abs() >= setup.sigma_min) as u64;
            }
        }
        Ok((kept, hits))
    })?;
    let kept: u64 = counts.iter().map(|c| c.0).sum();
    let hits: u64 = counts.iter().map(|c| c.1).sum();
    let target = crate::learner::B_BASE - delta / 2.0;
    let mut estimate = McEstimate::proportion(kept, hits, target);
    estimate.trials = trials as u64;
    let verdict = if kept < 100 {
        Verdict::Inconclusive
    } else {
        estimate.at_least_target(3.0)
    };
    Ok(ConditionalReport { estimate, verdict })
}

/// Conditional mean of `dY_i / dY_j` over intervals where A, B and the
/// ground-truth D all hold, against `beta_ij`. Intervals are simulated in
/// batches until `retain` samples are kept or `max_trials` is reached.
pub fn oracle_edge_expectation(
    model: &GgmModel,
    i: usize,
    j: usize,
    setup: &IntervalSetup,
    retain: usize,
    max_trials: usize,
    seed: u64,
) -> Result<ConditionalReport> {
    IntervalSim::new(model, i, j, setup)?;
    let mut ratios = Vec::with_capacity(retain);
    let mut chunk = 0usize;
    let mut trials = 0usize;
    while ratios.len() < retain && trials < max_trials {
        let batch: Vec<Vec<f64>> = (chunk..chunk + BATCH)
            .into_par_iter()
            .map(|c| {
                let mut sim = IntervalSim::new(model, i, j, setup)?;
                let mut rng = substream(seed, c as u64);
                let mut out = Vec::new();
                for _ in 0..CHUNK {
                    let obs = sim.run(&mut rng)?;
                    if obs.a && obs.d && obs.delta_j != 0.0 && obs.delta_j.abs() >= setup.sigma_min {
                        out.push(obs.delta_i / obs.delta_j);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        chunk += BATCH;
        trials += BATCH * CHUNK;
        ratios.extend(batch.into_iter().flatten());
    }
    let estimate = McEstimate::mean(trials as u64, &ratios, model.beta(i, j) + 0.0);
    let verdict = if ratios.len() < retain {
        Verdict::Inconclusive
    } else {
        estimate.two_sided(4.0)
    };
    Ok(ConditionalReport { estimate, verdict })
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Phi(hi) - Phi(lo)`, evaluated on the tail where it stays accurate.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        std_normal_cdf(-lo) - std_normal_cdf(-hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

/// KL divergence between `N(mu1, sigma^2)` and `N(mu2, sigma^2)`, both
/// truncated to `[-a, a]`:
///
/// ```text
/// KL = log(Z2 / Z1) + (2 (mu1 - mu2) E_P[x] + mu2^2 - mu1^2) / (2 sigma^2)
/// E_P[x] = mu1 + sigma (phi(alpha1) - phi(beta1)) / Z1
/// ```
///
/// with `alpha_k = (-a - mu_k) / sigma`, `beta_k = (a - mu_k) / sigma` and
/// `Z_k = Phi(beta_k) - Phi(alpha_k)`.
pub fn truncated_gaussian_kl(mu1: f64, mu2: f64, sigma: f64, a: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(out_of_range("sigma", sigma, "(0, inf)"));
    }
    if !(a > 0.0) {
        return Err(out_of_range("a", a, "(0, inf]"));
    }
    if !(mu1.is_finite() && mu2.is_finite()) {
        return Err(Error::Config("means must be finite".into()));
    }
    let (a1, b1) = ((-a - mu1) / sigma, (a - mu1) / sigma);
    let (a2, b2) = ((-a - mu2) / sigma, (a - mu2) / sigma);
    let z1 = normal_mass(a1, b1);
    let z2 = normal_mass(a2, b2);
    if !(z1 >= f64::MIN_POSITIVE && z2 >= f64::MIN_POSITIVE) {
        return Err(Error::Underflow(format!(
            "truncation mass Z1 = {z1:e}, Z2 = {z2:e} for a = {a}"
        )));
    }
    if mu1 == mu2 {
        return Ok(0.0);
    }
    let mean_p = mu1 + sigma * (std_normal_pdf(a1) - std_normal_pdf(b1)) / z1;
    let kl = (z2 / z1).ln() + (2.0 * (mu1 - mu2) * mean_p + mu2 * mu2 - mu1 * mu1) / (2.0 * sigma * sigma);
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovEntry {
    pub i: usize,
    pub j: usize,
    pub estimate: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub chains: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub horizon: f64,
    pub entries: Vec<CovEntry>,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub max_deviation: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub max_abs_z: f64,
}

impl StationarityReport {
    pub fn verdict(&self, k: f64) -> Verdict {
        Verdict::from_bool(self.max_abs_z <= k)
    }
}

/// Terminal second moments of independent chains run to `burn_in + horizon`,
/// compared entrywise with the stationary covariance (the mean is zero).
pub fn stationarity_check(
    model: &GgmModel,
    horizon: f64,
    chains: usize,
    burn_in: f64,
    init: &InitState,
    seed: u64,
) -> Result<StationarityReport> {
    check_trials(chains, 100)?;
    if !(horizon > 0.0 && burn_in >= 0.0) {
        return Err(out_of_range("horizon", horizon, "(0, inf)"));
    }
    let states: Vec<Vec<f64>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let x0 = initial_state(model, init, &mut rng)?;
            simulate_terminal(model, burn_in + horizon, x0, &mut rng)
        })
        .collect::<Result<_>>()?;
    let p = model.p();
    let mut entries = Vec::new();
    for i in 0..p {
        for j in i..p {
            let prods: Vec<f64> = states.iter().map(|x| x[i] * x[j]).collect();
            entries.push(CovEntry {
                i,
                j,
                estimate: McEstimate::mean(chains as u64, &prods, model.sigma()[(i, j)]),
            });
        }
    }
    let max_deviation = entries
        .iter()
        .fold(0.0_f64, |m, e| m.max((e.estimate.estimate - e.estimate.target).abs()));
    let max_abs_z = entries.iter().fold(0.0_f64, |m, e| m.max(e.estimate.z.abs()));
    Ok(StationarityReport {
        chains,
        horizon,
        entries,
        max_deviation,
        max_abs_z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub edge: Option<(usize, usize)>,
    pub nonedge: Option<(usize, usize)>,
    /// Per-interval mean of the statistic (zeros included) and its error.
    pub mean_edge: Option<McEstimate>,
    pub mean_nonedge: Option<McEstimate>,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub eta: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub eta_prime: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub rho: f64,
    pub k_max: usize,
}

impl SeparationReport {
    /// Non-edge mean at most `eta + 3 se`; edge mean (signed by beta) at
    /// least `3 eta - 3 se`.
    pub fn verdict(&self, model: &GgmModel) -> Verdict {
        let mut v = Verdict::Pass;
        if let Some(m) = &self.mean_nonedge {
            v = v.and(Verdict::from_bool(m.estimate.abs() <= self.eta + 3.0 * m.std_error));
        }
        if let (Some((i, j)), Some(m)) = (self.edge, &self.mean_edge) {
            let s = model.beta(i, j).signum();
            v = v.and(Verdict::from_bool(s * m.estimate >= 3.0 * self.eta - 3.0 * m.std_error));
        }
        v
    }
}

fn per_interval_mean(
    traj: &Trajectory,
    i: usize,
    j: usize,
    grid: &IntervalGrid,
    sigma_min: f64,
    target: f64,
) -> Result<McEstimate> {
    let ev = edge_statistic(traj, i, j, grid, sigma_min)?;
    let k = grid.k_max() as f64;
    let mean = ev.sum / k;
    let sq: f64 = ev.terms.iter().map(|t| t.term * t.term).sum();
    let var = if grid.k_max() > 1 {
        (sq - k * mean * mean) / (k - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate::with(
        grid.k_max() as u64,
        ev.terms.len() as u64,
        mean,
        (var.max(0.0) / k).sqrt(),
        target,
    ))
}

/// Empirical per-interval statistic means for the first edge and the first
/// non-edge of `model`, over `intervals` intervals of a stationary run.
pub fn separation_empirical(
    model: &GgmModel,
    params: &LearnerParams,
    intervals: usize,
    seed: u64,
) -> Result<SeparationReport> {
    if intervals == 0 {
        return Err(out_of_range("intervals", 0.0, "[1, inf)"));
    }
    let horizon = intervals as f64 * params.tau;
    let traj = simulate(model, horizon, &InitState::Stationary, seed, SimOptions::default())?;
    let grid = IntervalGrid::for_trajectory(params.tau, &traj)?;
    let p = model.p();
    let edge = model.graph().edges().iter().next().copied();
    let nonedge = (0..p)
        .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
        .find(|&(i, j)| !model.graph().has_edge(i, j));
    let mean_edge = edge
        .map(|(i, j)| per_interval_mean(&traj, i, j, &grid, params.sigma_min, model.beta(i, j) * params.q))
        .transpose()?;
    let mean_nonedge = nonedge
        .map(|(i, j)| per_interval_mean(&traj, i, j, &grid, params.sigma_min, 0.0))
        .transpose()?;
    Ok(SeparationReport {
        edge,
        nonedge,
        mean_edge,
        mean_nonedge,
        eta: params.eta,
        eta_prime: params.eta_prime,
        rho: params.rho,
        k_max: grid.k_max(),
    })
}

/// Smallest `C1` such that `check_c` passes on a `1 - delta / 2` fraction of
/// stationary runs of length `horizon`.
pub fn calibrate_c1(model: &GgmModel, horizon: f64, runs: usize, delta: f64, seed: u64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(out_of_range("delta", delta, "(0, 1/2)"));
    }
    check_trials(runs, 2)?;
    let scale = model.bounds().sigma_max * (model.p() as f64 / delta).ln().sqrt();
    let mut ratios: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let traj = simulate(
                model,
                horizon,
                &InitState::Stationary,
                rng::derive_seed(seed, &[r as u64]),
                SimOptions::default(),
            )?;
            Ok(traj.max_abs() / scale)
        })
        .collect::<Result<_>>()?;
    ratios.sort_by(f64::total_cmp);
    let idx = (((1.0 - delta / 2.0) * runs as f64).ceil() as usize).clamp(1, runs) - 1;
    Ok(ratios[idx])
}

/// Typical score of the weakest true edge and of the strongest non-edge
/// across gated runs (medians over runs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreSplit {
    #[serde(serialize_with = "serde_f64::serialize")]
    pub weakest_edge: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub strongest_nonedge: f64,
    pub runs: usize,
}

impl ScoreSplit {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.weakest_edge + self.strongest_nonedge)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn score_split(runs: &[(LearnOutput, EdgeSet)]) -> Result<ScoreSplit> {
    let mut weakest = Vec::new();
    let mut strongest = Vec::new();
    for (out, truth) in runs.iter().filter(|(o, _)| !o.aborted) {
        let (mut w, mut s) = (f64::INFINITY, 0.0_f64);
        for sc in &out.scores {
            if truth.contains(&(sc.i, sc.j)) {
                w = w.min(sc.score());
            } else {
                s = s.max(sc.score());
            }
        }
        if w.is_finite() {
            weakest.push(w);
            strongest.push(s);
        }
    }
    if weakest.is_empty() {
        return Err(Error::Insufficient("no gated calibration run with a true edge".into()));
    }
    Ok(ScoreSplit {
        weakest_edge: median(&mut weakest),
        strongest_nonedge: median(&mut strongest),
        runs: weakest.len(),
    })
}

/// `C4` placing the threshold midway between the typical weakest edge score
/// and the typical strongest non-edge score over calibration runs.
pub fn calibrate_c4(params: &LearnerParams, runs: &[(LearnOutput, EdgeSet)]) -> Result<f64> {
    let rho = score_split(runs)?.midpoint();
    Ok(rho * params.sigma_min / (params.tau * params.d as f64 * params.log_p_over_delta().sqrt()))
}

/// One line of a verifier report.
#[derive(Debug, Clone, Serialize)]
pub struct VerifierRecord {
    pub lemma: String,
    pub params: serde_json::Value,
    pub trials: u64,
    pub retained: u64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub estimate: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub target: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub std_error: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub z: f64,
    pub pass: Verdict,
}

impl VerifierRecord {
    pub fn new(lemma: impl Into<String>, params: serde_json::Value, est: &McEstimate, pass: Verdict) -> Self {
        Self {
            lemma: lemma.into(),
            params,
            trials: est.trials,
            retained: est.retained,
            estimate: est.estimate,
            target: est.target,
            std_error: est.std_error,
            z: est.z,
            pass,
        }
    }
}

pub fn write_report<W: Write>(mut w: W, records: &[VerifierRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
