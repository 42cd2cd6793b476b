//! Interval grid, observable events and the ratio statistic.
//!
//! `[0, T]` is cut into `k_max = floor(T / tau)` intervals of length `tau`,
//! each split into thirds `W1 = [(k-1)tau, (k-2/3)tau)`,
//! `W2 = [(k-2/3)tau, (k-1/3)tau)` and `W3 = [(k-1/3)tau, k tau)`. The
//! trailing fragment `(k_max tau, T]` is never scanned.
//!
//! For an ordered pair `(i, j)` the interval `k` contributes
//!
//! ```text
//! dY_i / dY_j   with   dY_i = Y_i(k tau -) - Y_i((k-2/3)tau -)
//!                      dY_j = Y_j((k-1/3)tau) - Y_j((k-1)tau)
//! ```
//!
//! whenever the update pattern `i | j | i` occurs across the thirds (event
//! A) and `|dY_j| >= sigma_min` (event B). The numerator uses left limits
//! and the denominator right-continuous values.

use std::io::Write;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{out_of_range, Error, Result};
use crate::serde_f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalGrid {
    tau: f64,
    k_max: usize,
}

impl IntervalGrid {
    pub fn new(tau: f64, horizon: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(out_of_range("tau", tau, "(0, inf)"));
        }
        if !(horizon > 0.0) {
            return Err(out_of_range("horizon", horizon, "(0, inf)"));
        }
        let mut k_max = (horizon / tau).floor() as usize;
        // guard against floor() landing one past the horizon through rounding
        while k_max > 0 && k_max as f64 * tau > horizon {
            k_max -= 1;
        }
        Ok(Self { tau, k_max })
    }

    pub fn for_trajectory(tau: f64, traj: &Trajectory) -> Result<Self> {
        Self::new(tau, traj.horizon())
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `[(k-1)tau, (k-2/3)tau, (k-1/3)tau, k tau]` for `k` in `1..=k_max`.
    pub fn bounds(&self, k: usize) -> [f64; 4] {
        interval_bounds(self.tau, k)
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k_max {
            return Err(out_of_range("k", k as f64, format!("[1, {}]", self.k_max)));
        }
        Ok(())
    }
}

pub(crate) fn interval_bounds(tau: f64, k: usize) -> [f64; 4] {
    let start = (k - 1) as f64 * tau;
    [start, start + tau / 3.0, start + 2.0 * tau / 3.0, k as f64 * tau]
}

fn count_in(ts: &[f64], a: f64, b: f64) -> usize {
    ts.partition_point(|&s| s < b) - ts.partition_point(|&s| s < a)
}

/// Event A on raw update-time lists: `i` but not `j` in `W1`, `j` but not
/// `i` in `W2`, `i` but not `j` in `W3`.
pub fn a_pattern(i_times: &[f64], j_times: &[f64], w: [f64; 4]) -> bool {
    let thirds = [(w[0], w[1], true), (w[1], w[2], false), (w[2], w[3], true)];
    thirds.iter().all(|&(a, b, i_moves)| {
        let (ci, cj) = (count_in(i_times, a, b), count_in(j_times, a, b));
        if i_moves {
            ci >= 1 && cj == 0
        } else {
            cj >= 1 && ci == 0
        }
    })
}

fn check_pair(traj: &Trajectory, i: usize, j: usize) -> Result<()> {
    let p = traj.p();
    if i >= p || j >= p {
        return Err(out_of_range("vertex", i.max(j) as f64, format!("[0, {p})")));
    }
    if i == j {
        return Err(Error::Config(format!("pair needs distinct vertices, got ({i}, {i})")));
    }
    Ok(())
}

pub fn detect_a(traj: &Trajectory, i: usize, j: usize, k: usize, grid: &IntervalGrid) -> Result<bool> {
    check_pair(traj, i, j)?;
    grid.check_k(k)?;
    Ok(a_pattern(traj.node_times(i), traj.node_times(j), grid.bounds(k)))
}

pub fn detect_b(traj: &Trajectory, j: usize, k: usize, grid: &IntervalGrid, sigma_min: f64) -> Result<bool> {
    if !(sigma_min > 0.0) {
        return Err(out_of_range("sigma_min", sigma_min, "(0, inf)"));
    }
    if j >= traj.p() {
        return Err(out_of_range("vertex", j as f64, format!("[0, {})", traj.p())));
    }
    grid.check_k(k)?;
    Ok(denominator(traj, j, grid.bounds(k)).abs() >= sigma_min)
}

/// Gate: `|Y(t)|_inf <= y_max` for all `t`. The path is piecewise constant,
/// so checking `x0` and every record value suffices.
pub fn check_c(traj: &Trajectory, y_max: f64) -> bool {
    traj.max_abs() <= y_max
}

fn numerator(traj: &Trajectory, i: usize, w: [f64; 4]) -> f64 {
    traj.value_before_unchecked(i, w[3]) - traj.value_before_unchecked(i, w[1])
}

fn denominator(traj: &Trajectory, j: usize, w: [f64; 4]) -> f64 {
    traj.value_at_unchecked(j, w[2]) - traj.value_at_unchecked(j, w[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatisticTerm {
    pub k: usize,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub term: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub delta_i: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub delta_j: f64,
}

/// `dY_i / dY_j` for interval `k`. The caller is responsible for A and B.
pub fn statistic_term(traj: &Trajectory, i: usize, j: usize, k: usize, grid: &IntervalGrid) -> Result<StatisticTerm> {
    check_pair(traj, i, j)?;
    grid.check_k(k)?;
    term_unchecked(traj, i, j, k, grid.bounds(k))
}

fn term_unchecked(traj: &Trajectory, i: usize, j: usize, k: usize, w: [f64; 4]) -> Result<StatisticTerm> {
    let delta_i = numerator(traj, i, w);
    let delta_j = denominator(traj, j, w);
    if delta_j == 0.0 {
        return Err(Error::Internal(format!(
            "zero denominator for pair ({i}, {j}) at interval {k}"
        )));
    }
    Ok(StatisticTerm {
        k,
        term: delta_i / delta_j,
        delta_i,
        delta_j,
    })
}

/// Accumulated `T_ij` for one ordered pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeEvidence {
    pub i: usize,
    pub j: usize,
    pub k_max: usize,
    pub terms: Vec<StatisticTerm>,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub sum: f64,
}

impl EdgeEvidence {
    pub fn active_intervals(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().map(|t| t.k)
    }

    /// `sum / k_max`, the quantity compared against the threshold.
    pub fn mean(&self) -> f64 {
        if self.k_max == 0 {
            0.0
        } else {
            self.sum / self.k_max as f64
        }
    }

    pub fn max_abs_term(&self) -> f64 {
        self.terms.iter().fold(0.0_f64, |m, t| m.max(t.term.abs()))
    }
}

/// Scan `k = 1..=k_max` and accumulate terms where A and B both hold.
///
/// A single forward cursor per node replaces the per-interval binary
/// searches of [`detect_a`], so a scan costs `O(N_i + N_j + k_max)`.
pub fn edge_statistic(
    traj: &Trajectory,
    i: usize,
    j: usize,
    grid: &IntervalGrid,
    sigma_min: f64,
) -> Result<EdgeEvidence> {
    check_pair(traj, i, j)?;
    if !(sigma_min >= 0.0) {
        return Err(out_of_range("sigma_min", sigma_min, "[0, inf)"));
    }
    let (ti, tj) = (traj.node_times(i), traj.node_times(j));
    let (mut ci, mut cj) = (0usize, 0usize);
    let mut terms = Vec::new();
    let mut sum = 0.0;
    for k in 1..=grid.k_max() {
        let w = grid.bounds(k);
        // counts of updates strictly before each boundary
        let mut ni = [0usize; 4];
        let mut nj = [0usize; 4];
        for m in 0..4 {
            while ci < ti.len() && ti[ci] < w[m] {
                ci += 1;
            }
            while cj < tj.len() && tj[cj] < w[m] {
                cj += 1;
            }
            ni[m] = ci;
            nj[m] = cj;
        }
        let a = ni[1] > ni[0] && nj[1] == nj[0] && nj[2] > nj[1] && ni[2] == ni[1] && ni[3] > ni[2] && nj[3] == nj[2];
        if !a {
            continue;
        }
        let delta_j = denominator(traj, j, w);
        if delta_j.abs() < sigma_min || delta_j == 0.0 {
            continue;
        }
        let t = term_unchecked(traj, i, j, k, w)?;
        sum += t.term;
        terms.push(t);
    }
    Ok(EdgeEvidence {
        i,
        j,
        k_max: grid.k_max(),
        terms,
        sum,
    })
}

/// Audit dump: `pair_i,pair_j,k,term,deltaYi,deltaYj`.
pub fn write_evidence_csv<'a, W: Write>(mut w: W, evidence: impl IntoIterator<Item = &'a EdgeEvidence>) -> Result<()> {
    writeln!(w, "pair_i,pair_j,k,term,deltaYi,deltaYj")?;
    for ev in evidence {
        for t in &ev.terms {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                ev.i,
                ev.j,
                t.k,
                serde_f64::format(t.term),
                serde_f64::format(t.delta_i),
                serde_f64::format(t.delta_j)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(tau: f64, horizon: f64) -> IntervalGrid {
        IntervalGrid::new(tau, horizon).unwrap()
    }

    /// i at 0.05 (0 -> 0.5), j at 0.12 (0 -> 1), i at 0.25 (-> 0.8).
    fn alternating(j_value: f64) -> Trajectory {
        Trajectory::from_records(
            0.3,
            vec![0.0, 0.0],
            [(0.05, 0, 0.5), (0.12, 1, j_value), (0.25, 0, 0.8)],
        )
        .unwrap()
    }

    #[test]
    fn grid_boundaries_and_fragment() {
        let g = grid(0.3, 1.0);
        assert_eq!(g.k_max(), 3);
        let w = g.bounds(2);
        assert!((w[0] - 0.3).abs() < 1e-15 && (w[3] - 0.6).abs() < 1e-15);
        assert!(((w[1] - w[0]) - (w[3] - w[2])).abs() < 1e-15);
        assert_eq!(g.bounds(1)[3], g.bounds(2)[0]);
        assert_eq!(grid(2.0, 1.0).k_max(), 0);
        assert!(IntervalGrid::new(0.0, 1.0).is_err());
    }

    #[test]
    fn event_a_on_hand_log() {
        let t = alternating(1.0);
        let g = grid(0.3, 0.3);
        assert!(detect_a(&t, 0, 1, 1, &g).unwrap());
        // j never moves in W1 / W3 from i's point of view, but reversed roles fail
        assert!(!detect_a(&t, 1, 0, 1, &g).unwrap());
        assert!(detect_a(&t, 0, 0, 1, &g).is_err());
        assert!(detect_a(&t, 0, 1, 2, &g).is_err());
    }

    #[test]
    fn event_a_fails_with_j_in_first_third() {
        let t = Trajectory::from_records(
            0.3,
            vec![0.0, 0.0],
            [(0.02, 1, 0.1), (0.05, 0, 0.5), (0.12, 1, 1.0), (0.25, 0, 0.8)],
        )
        .unwrap();
        assert!(!detect_a(&t, 0, 1, 1, &grid(0.3, 0.3)).unwrap());
    }

    #[test]
    fn event_a_empty_log() {
        let t = Trajectory::from_records(1.0, vec![0.0, 0.0], []).unwrap();
        assert!(!detect_a(&t, 0, 1, 1, &grid(0.3, 1.0)).unwrap());
    }

    #[test]
    fn event_b_cases() {
        let g = grid(0.3, 0.3);
        let still = Trajectory::from_records(0.3, vec![0.0, 0.0], [(0.05, 0, 0.5)]).unwrap();
        assert!(!detect_b(&still, 1, 1, &g, 0.5).unwrap());
        assert!(detect_b(&alternating(1.0), 1, 1, &g, 0.5).unwrap());
        // |dY_j| = sigma_min exactly is inclusive
        assert!(detect_b(&alternating(0.5), 1, 1, &g, 0.5).unwrap());
        assert!(!detect_b(&alternating(0.5), 1, 1, &g, 0.5 + 1e-12).unwrap());
        assert!(detect_b(&alternating(1.0), 1, 1, &g, 0.0).is_err());
    }

    #[test]
    fn event_c_cases() {
        let zero = Trajectory::from_records(1.0, vec![0.0; 3], []).unwrap();
        assert!(check_c(&zero, 1e-9));
        let over = Trajectory::from_records(1.0, vec![0.0; 2], [(0.5, 1, 2.0 + 1e-9)]).unwrap();
        assert!(!check_c(&over, 2.0));
        assert!(check_c(&over, 2.0 + 1e-9));
    }

    #[test]
    fn statistic_term_hand_replay() {
        let g = grid(0.3, 0.3);
        let t = statistic_term(&alternating(1.0), 0, 1, 1, &g).unwrap();
        assert!((t.delta_i - 0.3).abs() < 1e-15);
        assert_eq!(t.delta_j, 1.0);
        assert!((t.term - 0.3).abs() < 1e-15);
        let flipped = statistic_term(&alternating(-1.0), 0, 1, 1, &g).unwrap();
        assert!((flipped.term + 0.3).abs() < 1e-15);
    }

    #[test]
    fn numerator_ignores_update_at_right_endpoint() {
        // i's W3 update lands exactly at k tau = 0.3
        let t = Trajectory::from_records(
            0.6,
            vec![0.0, 0.0],
            [(0.05, 0, 0.5), (0.12, 1, 1.0), (0.25, 0, 0.8), (0.3, 0, 9.0)],
        )
        .unwrap();
        let g = IntervalGrid::new(0.3, 0.6).unwrap();
        let term = statistic_term(&t, 0, 1, 1, &g).unwrap();
        assert!((term.delta_i - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_is_an_internal_error() {
        let t = Trajectory::from_records(0.3, vec![0.0, 0.0], [(0.05, 0, 0.5)]).unwrap();
        assert!(matches!(
            statistic_term(&t, 0, 1, 1, &grid(0.3, 0.3)),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn edge_statistic_single_interval() {
        let ev = edge_statistic(&alternating(1.0), 0, 1, &grid(0.3, 0.3), 0.5).unwrap();
        assert_eq!(ev.active_intervals().collect::<Vec<_>>(), vec![1]);
        assert!((ev.sum - 0.3).abs() < 1e-15);
        let none = edge_statistic(&alternating(1.0), 1, 0, &grid(0.3, 0.3), 0.5).unwrap();
        assert_eq!(none.sum, 0.0);
        assert!(none.terms.is_empty());
    }

    #[test]
    fn evidence_csv_layout() {
        let ev = edge_statistic(&alternating(1.0), 0, 1, &grid(0.3, 0.3), 0.5).unwrap();
        let mut buf = Vec::new();
        write_evidence_csv(&mut buf, [&ev]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "pair_i,pair_j,k,term,deltaYi,deltaYj");
        assert!(lines[1].starts_with("0,1,1,"));
    }
}
