//! Continuous-time Glauber dynamics.
//!
//! Update times form a rate-`p` Poisson process (i.i.d. `Exp(p)` gaps); at
//! each update a node is chosen uniformly and redrawn from its conditional
//! distribution given the others. A single RNG stream drives a trajectory,
//! so `(model, horizon, init, seed)` fixes it bit for bit.
//!
//! The recorded [`Trajectory`] is piecewise constant and right-continuous:
//! [`Trajectory::value_at`] at an update time returns the new value, while
//! [`Trajectory::value_before`] returns the left limit.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::model::GgmModel;
use crate::rng;
use crate::serde_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Round index, starting at 1.
    pub n: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub time: f64,
    pub node: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitState {
    Vector(Vec<f64>),
    Stationary,
    Zero,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Keep every noise draw in a side channel (see [`Trajectory::noise`]).
    pub record_noise: bool,
}

/// Draws `N(0, Sigma)` through a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct StationarySampler {
    chol: DMatrix<f64>,
}

impl StationarySampler {
    pub fn new(model: &GgmModel) -> Result<Self> {
        let chol = model
            .sigma()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Validation("covariance is not positive definite".into()))?
            .unpack();
        Ok(Self { chol })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.chol.nrows();
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        (0..p)
            .map(|i| (0..=i).map(|k| self.chol[(i, k)] * z[k]).sum())
            .collect()
    }
}

/// One applied update, as produced by [`GlauberChain::advance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub time: f64,
    pub node: usize,
    pub value: f64,
    pub noise: f64,
}

/// Mutable chain state. Simulation, terminal-state runs and the interval
/// verifiers all step through this type so they consume randomness in the
/// same order: holding time, node, noise.
#[derive(Debug, Clone)]
pub struct GlauberChain {
    neighbors: Vec<Vec<(usize, f64)>>,
    noise_sd: Vec<f64>,
    clock: Exp<f64>,
    state: Vec<f64>,
    time: f64,
    rounds: usize,
}

impl GlauberChain {
    pub fn new(model: &GgmModel, x0: Vec<f64>) -> Self {
        let p = model.p();
        assert_eq!(x0.len(), p, "initial state has wrong dimension");
        let neighbors = (0..p)
            .map(|i| {
                model
                    .graph()
                    .neighbors(i)
                    .iter()
                    .map(|&j| (j, model.beta(i, j)))
                    .collect()
            })
            .collect();
        Self {
            neighbors,
            noise_sd: model.cond_vars().iter().map(|v| v.sqrt()).collect(),
            clock: Exp::new(p as f64).expect("p > 0"),
            state: x0,
            time: 0.0,
            rounds: 0,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Restart from `x` at time 0 without rebuilding neighbor tables.
    pub fn reset(&mut self, x: &[f64]) {
        self.state.copy_from_slice(x);
        self.time = 0.0;
        self.rounds = 0;
    }

    /// Apply the next update if it falls at or before `horizon`.
    ///
    /// The holding time is drawn even when it overshoots, after which the
    /// chain stays parked at `horizon`.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R, horizon: f64) -> Result<Option<Step>> {
        let t = self.time + self.clock.sample(rng);
        if t > horizon {
            self.time = horizon;
            return Ok(None);
        }
        let node = rng.random_range(0..self.state.len());
        let z: f64 = StandardNormal.sample(rng);
        let noise = z * self.noise_sd[node];
        let mean: f64 = self.neighbors[node].iter().map(|&(j, b)| b * self.state[j]).sum();
        let value = mean + noise;
        self.rounds += 1;
        if !value.is_finite() {
            return Err(Error::NonFinite { n: self.rounds, node });
        }
        self.state[node] = value;
        self.time = t;
        Ok(Some(Step {
            time: t,
            node,
            value,
            noise,
        }))
    }
}

pub(crate) fn initial_state<R: Rng + ?Sized>(model: &GgmModel, init: &InitState, rng: &mut R) -> Result<Vec<f64>> {
    match init {
        InitState::Zero => Ok(vec![0.0; model.p()]),
        InitState::Vector(v) => {
            if v.len() != model.p() || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "initial vector must have {} finite entries",
                    model.p()
                )));
            }
            Ok(v.clone())
        }
        InitState::Stationary => Ok(StationarySampler::new(model)?.sample(rng)),
    }
}

/// Simulate the dynamics on `[0, horizon]`.
pub fn simulate(model: &GgmModel, horizon: f64, init: &InitState, seed: u64, opts: SimOptions) -> Result<Trajectory> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(out_of_range("horizon", horizon, "(0, inf)"));
    }
    let mut rng = rng::seeded(seed);
    let x0 = initial_state(model, init, &mut rng)?;
    let mut chain = GlauberChain::new(model, x0.clone());
    let p = model.p();
    let expected = (horizon * p as f64) as usize;
    let mut b = TrajectoryBuilder::with_capacity(p, expected + expected / 16 + 16);
    let mut noise = opts.record_noise.then(|| Vec::with_capacity(expected));
    while let Some(step) = chain.advance(&mut rng, horizon)? {
        b.push(step.time, step.node, step.value);
        if let Some(n) = noise.as_mut() {
            n.push(step.noise);
        }
    }
    let mut traj = b.finish(horizon, x0);
    traj.seed = seed;
    traj.model_hash = model.content_hash();
    traj.noise = noise;
    Ok(traj)
}

/// Run the chain to `horizon` and return only the final state.
pub fn simulate_terminal<R: Rng + ?Sized>(
    model: &GgmModel,
    horizon: f64,
    x0: Vec<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut chain = GlauberChain::new(model, x0);
    while chain.advance(rng, horizon)?.is_some() {}
    Ok(chain.state)
}

struct TrajectoryBuilder {
    times: Vec<f64>,
    nodes: Vec<u32>,
    values: Vec<f64>,
    node_times: Vec<Vec<f64>>,
    node_pos: Vec<Vec<u32>>,
}

impl TrajectoryBuilder {
    fn with_capacity(p: usize, n: usize) -> Self {
        let per = n / p.max(1) + 8;
        Self {
            times: Vec::with_capacity(n),
            nodes: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            node_times: (0..p).map(|_| Vec::with_capacity(per)).collect(),
            node_pos: (0..p).map(|_| Vec::with_capacity(per)).collect(),
        }
    }

    fn push(&mut self, time: f64, node: usize, value: f64) {
        let pos = u32::try_from(self.times.len()).expect("trajectory longer than u32::MAX updates");
        self.times.push(time);
        self.nodes.push(node as u32);
        self.values.push(value);
        self.node_times[node].push(time);
        self.node_pos[node].push(pos);
    }

    fn finish(self, horizon: f64, x0: Vec<f64>) -> Trajectory {
        Trajectory {
            p: x0.len(),
            horizon,
            seed: 0,
            model_hash: String::new(),
            config_hash: None,
            x0,
            times: self.times,
            nodes: self.nodes,
            values: self.values,
            node_times: self.node_times,
            node_pos: self.node_pos,
            noise: None,
        }
    }
}

/// Header line of the JSONL trajectory format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub p: usize,
    #[serde(rename = "T", serialize_with = "serde_f64::serialize")]
    pub horizon: f64,
    pub seed: u64,
    #[serde(serialize_with = "serde_f64::vec::serialize")]
    pub x0: Vec<f64>,
    pub model_hash: String,
    #[serde(rename = "realized_N")]
    pub realized_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// A recorded run: initial state plus the ordered update log, indexed per
/// node for `O(log N)` point queries.
#[derive(Debug, Clone)]
pub struct Trajectory {
    p: usize,
    horizon: f64,
    seed: u64,
    model_hash: String,
    config_hash: Option<String>,
    x0: Vec<f64>,
    times: Vec<f64>,
    nodes: Vec<u32>,
    values: Vec<f64>,
    node_times: Vec<Vec<f64>>,
    node_pos: Vec<Vec<u32>>,
    noise: Option<Vec<f64>>,
}

impl Trajectory {
    /// Assemble a trajectory from an explicit update log.
    ///
    /// Records must have strictly increasing times in `(0, horizon]` and
    /// in-range nodes; their `n` fields are ignored and renumbered.
    pub fn from_records(
        horizon: f64,
        x0: Vec<f64>,
        records: impl IntoIterator<Item = (f64, usize, f64)>,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(out_of_range("horizon", horizon, "(0, inf)"));
        }
        let p = x0.len();
        let mut b = TrajectoryBuilder::with_capacity(p, 0);
        let mut last = 0.0;
        for (time, node, value) in records {
            if !(time > last && time <= horizon) {
                return Err(Error::Validation(format!(
                    "record time {time} not in ({last}, {horizon}]"
                )));
            }
            if node >= p {
                return Err(Error::Validation(format!("record node {node} >= p = {p}")));
            }
            if !value.is_finite() {
                return Err(Error::Validation(format!("record value {value} is not finite")));
            }
            b.push(time, node, value);
            last = time;
        }
        Ok(b.finish(horizon, x0))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn set_config_hash(&mut self, hash: impl Into<String>) {
        self.config_hash = Some(hash.into());
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Realized number of updates.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn record(&self, pos: usize) -> UpdateRecord {
        UpdateRecord {
            n: pos + 1,
            time: self.times[pos],
            node: self.nodes[pos] as usize,
            value: self.values[pos],
        }
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = UpdateRecord> + '_ {
        (0..self.len()).map(|k| self.record(k))
    }

    /// Update times of node `i`, ascending.
    pub fn node_times(&self, i: usize) -> &[f64] {
        &self.node_times[i]
    }

    /// Values written by node `i`'s updates, aligned with [`Self::node_times`].
    pub fn node_value(&self, i: usize, k: usize) -> f64 {
        self.values[self.node_pos[i][k] as usize]
    }

    /// Noise draws per record, when recorded.
    pub fn noise(&self) -> Option<&[f64]> {
        self.noise.as_deref()
    }

    fn check_vertex(&self, i: usize) -> Result<()> {
        if i >= self.p {
            return Err(out_of_range("vertex", i as f64, format!("[0, {})", self.p)));
        }
        Ok(())
    }

    /// Coordinate `i` after every update at time `<= t`.
    pub fn value_at(&self, i: usize, t: f64) -> Result<f64> {
        self.check_vertex(i)?;
        if !(0.0..=self.horizon).contains(&t) {
            return Err(out_of_range("t", t, format!("[0, {}]", self.horizon)));
        }
        Ok(self.value_at_unchecked(i, t))
    }

    /// Coordinate `i` after every update at time `< t`.
    pub fn value_before(&self, i: usize, t: f64) -> Result<f64> {
        self.check_vertex(i)?;
        if !(t > 0.0 && t <= self.horizon) {
            return Err(out_of_range("t", t, format!("(0, {}]", self.horizon)));
        }
        Ok(self.value_before_unchecked(i, t))
    }

    pub(crate) fn value_at_unchecked(&self, i: usize, t: f64) -> f64 {
        let k = self.node_times[i].partition_point(|&s| s <= t);
        self.value_after_count(i, k)
    }

    pub(crate) fn value_before_unchecked(&self, i: usize, t: f64) -> f64 {
        let k = self.node_times[i].partition_point(|&s| s < t);
        self.value_after_count(i, k)
    }

    /// Value of node `i` once its first `k` updates have been applied.
    pub(crate) fn value_after_count(&self, i: usize, k: usize) -> f64 {
        if k == 0 {
            self.x0[i]
        } else {
            self.values[self.node_pos[i][k - 1] as usize]
        }
    }

    /// Number of updates of node `i` with time in `[t0, t1)`.
    pub fn count_in(&self, i: usize, t0: f64, t1: f64) -> usize {
        let ts = &self.node_times[i];
        ts.partition_point(|&s| s < t1) - ts.partition_point(|&s| s < t0)
    }

    /// Records of the given nodes with time in `[t0, t1)` (or `[t0, t1]`
    /// when `half_open` is false), in time order.
    pub fn updates_in(&self, nodes: &[usize], t0: f64, t1: f64, half_open: bool) -> Result<Vec<UpdateRecord>> {
        if !(0.0 <= t0 && t0 < t1 && t1 <= self.horizon) {
            return Err(Error::OutOfRange {
                what: "interval",
                value: t0,
                range: format!("need 0 <= t0 < t1 <= {}, got [{t0}, {t1})", self.horizon),
            });
        }
        let mut pos = Vec::new();
        let mut seen = vec![false; self.p];
        for &i in nodes {
            self.check_vertex(i)?;
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            let ts = &self.node_times[i];
            let lo = ts.partition_point(|&s| s < t0);
            let hi = if half_open {
                ts.partition_point(|&s| s < t1)
            } else {
                ts.partition_point(|&s| s <= t1)
            };
            pos.extend_from_slice(&self.node_pos[i][lo..hi]);
        }
        pos.sort_unstable();
        Ok(pos.into_iter().map(|k| self.record(k as usize)).collect())
    }

    /// Full state at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        (0..self.p).map(|i| self.value_at(i, t)).collect()
    }

    /// `max_t |Y(t)|_inf`, attained at `x0` or at some record.
    pub fn max_abs(&self) -> f64 {
        self.x0
            .iter()
            .chain(self.values.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn header(&self) -> TrajectoryHeader {
        TrajectoryHeader {
            p: self.p,
            horizon: self.horizon,
            seed: self.seed,
            x0: self.x0.clone(),
            model_hash: self.model_hash.clone(),
            realized_n: self.len(),
            config_hash: self.config_hash.clone(),
        }
    }

    /// JSONL: one header line, then one line per record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header())?;
        w.write_all(b"\n")?;
        for k in 0..self.len() {
            serde_json::to_writer(&mut w, &self.record(k))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: TrajectoryHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Validation("empty trajectory file".into())),
        };
        if header.x0.len() != header.p {
            return Err(Error::Validation("header x0 length does not match p".into()));
        }
        let mut records = Vec::with_capacity(header.realized_n);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: UpdateRecord = serde_json::from_str(&line)?;
            if rec.n != k + 1 {
                return Err(Error::Validation(format!("record {} has n = {}", k + 1, rec.n)));
            }
            records.push((rec.time, rec.node, rec.value));
        }
        if records.len() != header.realized_n {
            return Err(Error::Validation(format!(
                "header says {} records, file has {}",
                header.realized_n,
                records.len()
            )));
        }
        let mut traj = Self::from_records(header.horizon, header.x0, records)?;
        traj.seed = header.seed;
        traj.model_hash = header.model_hash;
        traj.config_hash = header.config_hash;
        Ok(traj)
    }
}
