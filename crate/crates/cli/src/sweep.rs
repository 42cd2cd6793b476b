//! Recovery-rate sweeps over `(p, T, beta_min)` on the cycle family.
//!
//! Each cell runs `trials` independent simulate-then-learn trials. A trial's
//! seed is derived from the master seed and the cell coordinates, so a cell
//! produces the same row wherever it sits in the grid and whichever worker
//! runs it. Output CSVs are appended to, and cells already present (by cell
//! hash) are skipped on rerun.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::Context;
use glauber_ggm::dynamics::{simulate, SimOptions};
use glauber_ggm::learner::{compare, learn, select_parameters, LearnOptions};
use glauber_ggm::model::build_bounded_degree_model;
use glauber_ggm::rng::derive_seed;
use glauber_ggm::{Constants, Graph, InitState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{hash_json, SweepConfig};
use crate::{sidecar_path, with_workers, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub p: usize,
    pub d: usize,
    pub beta: f64,
    pub diag: f64,
    pub delta: f64,
    pub horizon: f64,
    pub trials: usize,
    pub constants: Constants,
    pub seed: u64,
}

impl Cell {
    pub fn hash(&self) -> String {
        hash_json(self)[..16].to_string()
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(
            self.seed,
            &[
                self.p as u64,
                self.d as u64,
                self.beta.to_bits(),
                self.horizon.to_bits(),
                trial as u64,
            ],
        )
    }
}

pub fn cells(cfg: &SweepConfig, constants: Constants, seed: u64) -> anyhow::Result<Vec<Cell>> {
    if cfg.p_grid.is_empty() || cfg.t_grid.is_empty() || cfg.beta_grid.is_empty() {
        return Err(ConfigError("sweep grids must be non-empty".into()).into());
    }
    if cfg.trials < 10 {
        return Err(ConfigError(format!("sweep needs at least 10 trials per cell, got {}", cfg.trials)).into());
    }
    let mut out = Vec::new();
    for &p in &cfg.p_grid {
        for &beta in &cfg.beta_grid {
            for &horizon in &cfg.t_grid {
                out.push(Cell {
                    p,
                    d: cfg.d,
                    beta,
                    diag: cfg.diag,
                    delta: cfg.delta,
                    horizon,
                    trials: cfg.trials,
                    constants,
                    seed,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub exact: bool,
    pub hamming: usize,
    pub aborted: bool,
    /// Largest gated term divided by `2 y_max / sigma_min`.
    pub term_ratio: f64,
}

pub fn run_trial(cell: &Cell, trial: usize) -> anyhow::Result<TrialOutcome> {
    let model = build_bounded_degree_model(&Graph::cycle(cell.p)?, cell.beta, cell.diag)?;
    let b = model.bounds();
    let params = select_parameters(
        cell.p,
        cell.d,
        cell.delta,
        cell.beta.abs(),
        b.sigma_min,
        b.sigma_max,
        cell.constants,
    )?;
    let traj = simulate(
        &model,
        cell.horizon,
        &InitState::Stationary,
        cell.trial_seed(trial),
        SimOptions::default(),
    )?;
    let out = learn(&traj, &params, LearnOptions::default())?;
    let m = compare(cell.p, &out.edges, model.graph().edges())?;
    Ok(TrialOutcome {
        exact: m.exact && !out.aborted,
        hamming: m.hamming,
        aborted: out.aborted,
        term_ratio: out.max_abs_term / params.term_bound(),
    })
}

/// One CSV row per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub cell_hash: String,
    pub family: String,
    pub p: usize,
    pub d: usize,
    pub beta_min: f64,
    pub horizon: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_hamming: f64,
    pub aborted: usize,
    pub bound_violations: usize,
    pub max_term_ratio: f64,
    pub seed: u64,
    pub config_hash: String,
    pub error: String,
}

pub struct CellResult {
    pub row: Row,
    pub runtime: Duration,
}

/// Run all cells, parallel over `(cell, trial)`, reduced in grid order.
pub fn run_cells(cells: &[Cell], config_hash: &str, workers: Option<usize>) -> anyhow::Result<Vec<CellResult>> {
    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| (0..cell.trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<(anyhow::Result<TrialOutcome>, Duration)> = with_workers(workers, || {
        jobs.par_iter()
            .map(|&(c, t)| {
                let start = Instant::now();
                (run_trial(&cells[c], t), start.elapsed())
            })
            .collect()
    })?;
    let mut results = Vec::with_capacity(cells.len());
    let mut it = outcomes.into_iter();
    for cell in cells {
        let mut row = Row {
            cell_hash: cell.hash(),
            family: "cycle".into(),
            p: cell.p,
            d: cell.d,
            beta_min: cell.beta,
            horizon: cell.horizon,
            trials: cell.trials,
            successes: 0,
            success_rate: 0.0,
            mean_hamming: 0.0,
            aborted: 0,
            bound_violations: 0,
            max_term_ratio: 0.0,
            seed: cell.seed,
            config_hash: config_hash.to_string(),
            error: String::new(),
        };
        let mut runtime = Duration::ZERO;
        let mut hamming = 0usize;
        let mut completed = 0usize;
        for (res, dt) in it.by_ref().take(cell.trials) {
            runtime += dt;
            match res {
                Ok(o) => {
                    completed += 1;
                    row.successes += o.exact as usize;
                    row.aborted += o.aborted as usize;
                    hamming += o.hamming;
                    row.bound_violations += (o.term_ratio > 1.0) as usize;
                    row.max_term_ratio = row.max_term_ratio.max(o.term_ratio);
                }
                Err(e) if row.error.is_empty() => row.error = format!("{e:#}"),
                Err(_) => {}
            }
        }
        row.success_rate = row.successes as f64 / cell.trials as f64;
        row.mean_hamming = if completed > 0 {
            hamming as f64 / completed as f64
        } else {
            f64::NAN
        };
        results.push(CellResult { row, runtime });
    }
    Ok(results)
}

pub fn to_csv(rows: &[Row], header: bool) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

pub fn read_rows(path: &Path) -> anyhow::Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Run the missing cells of a sweep and append them to `out`. Returns the
/// full set of rows for the requested cells, in grid order.
pub fn sweep_to_file(
    cells: &[Cell],
    config_hash: &str,
    out: &Path,
    workers: Option<usize>,
) -> anyhow::Result<Vec<Row>> {
    let existing: Vec<Row> = if out.exists() { read_rows(out)? } else { Vec::new() };
    let done: HashSet<&str> = existing.iter().map(|r| r.cell_hash.as_str()).collect();
    let todo: Vec<Cell> = cells
        .iter()
        .filter(|c| !done.contains(c.hash().as_str()))
        .copied()
        .collect();
    let results = run_cells(&todo, config_hash, workers)?;
    let rows: Vec<Row> = results.iter().map(|r| r.row.clone()).collect();

    let fresh = !out.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(out)?;
    std::io::Write::write_all(&mut f, &to_csv(&rows, fresh)?)?;

    let timing_path = sidecar_path(out, "csv");
    let timing_fresh = !timing_path.exists();
    let mut tw = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(OpenOptions::new().create(true).append(true).open(&timing_path)?);
    if timing_fresh {
        tw.write_record(["cell_hash", "runtime_secs"])?;
    }
    for r in &results {
        tw.write_record([r.row.cell_hash.clone(), format!("{:.3}", r.runtime.as_secs_f64())])?;
    }
    tw.flush()?;

    let mut all: Vec<Row> = existing;
    all.extend(rows);
    Ok(cells
        .iter()
        .filter_map(|c| {
            let h = c.hash();
            all.iter().find(|r| r.cell_hash == h).cloned()
        })
        .collect())
}
