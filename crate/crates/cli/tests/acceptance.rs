//! Acceptance suite. Run with `cargo test -p glauber-ggm-cli --test acceptance`.
//!
//! Prints one `[PASS]` / `[FAIL]` line per criterion and exits nonzero if any
//! criterion fails. Tolerances are fixed below.

use std::process::ExitCode;
use std::time::Instant;

use ggm_cli::calibrate::calibrate;
use ggm_cli::config::{CalibrationConfig, ExperimentConfig, ModelSpec, SweepConfig, VerifyConfig};
use ggm_cli::run::{gen_model, learn_trajectory};
use ggm_cli::sweep::{cells, run_cells, to_csv, Row};
use ggm_cli::verify::run_verifiers;
use glauber_ggm::analysis::{truncated_gaussian_kl, VerifierRecord};
use glauber_ggm::dynamics::{simulate, SimOptions};
use glauber_ggm::model::{build_clique_ensemble, min_eigenvalue, EnsembleSpec};
use glauber_ggm::{Constants, InitState, Verdict};

const SEED: u64 = 20_240_601;
const CALIBRATION_SEED: u64 = 77_001;

/// Two-sided z tolerance for the interval and stationarity checks.
const Z_TOL: f64 = 3.0;
/// Two-sided z tolerance for the conditional-mean oracle.
const Z_TOL_ORACLE: f64 = 4.0;
const KL_TOL: f64 = 1e-8;
const RECOVERY_TRIALS: usize = 20;
const RECOVERY_SUCCESSES: usize = 18;
const RECOVERY_GRID: [f64; 4] = [5e3, 1e4, 2e4, 5e4];
const SCALING_PS: [usize; 3] = [10, 20, 40];
const WORKER_COUNTS: [usize; 3] = [1, 4, 8];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome, secs: f64) {
    println!(
        "[{}] {:<34} ({:6.1}s) {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.name,
        secs,
        o.detail
    );
}

fn summarize(recs: &[&VerifierRecord]) -> String {
    recs.iter()
        .map(|r| {
            format!(
                "{} est={:.6} target={:.6} se={:.2e} z={:+.2}",
                r.lemma, r.estimate, r.target, r.std_error, r.z
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn verifier_criteria(out: &mut Vec<(Outcome, f64)>) -> anyhow::Result<()> {
    let t = Instant::now();
    let cfg = VerifyConfig::default();
    let recs = run_verifiers(&cfg, SEED)?;
    let secs = t.elapsed().as_secs_f64();
    let pick = |lemma: &str| recs.iter().filter(|r| r.lemma == lemma).collect::<Vec<_>>();
    let all = |v: &[&VerifierRecord]| !v.is_empty() && v.iter().all(|r| r.pass == Verdict::Pass);

    let a = pick("event_a");
    out.push((
        Outcome {
            name: "1 event A probability",
            pass: a.len() == 3 && all(&a) && a.iter().all(|r| r.z.abs() <= Z_TOL),
            detail: summarize(&a),
        },
        secs,
    ));
    let mut d = pick("event_d_bound");
    d.extend(pick("event_d_exact"));
    let d_ok = d.len() == 2 && d[0].estimate + Z_TOL * d[0].std_error >= d[0].target && d[1].z.abs() <= Z_TOL;
    out.push((
        Outcome {
            name: "2 event D bound",
            pass: d_ok,
            detail: summarize(&d),
        },
        secs,
    ));
    let mut o = pick("edge_expectation_edge");
    o.extend(pick("edge_expectation_nonedge"));
    let o_ok = o.len() == 2
        && all(&o)
        && o.iter()
            .all(|r| r.z.abs() <= Z_TOL_ORACLE && r.retained >= cfg.oracle_retain as u64);
    out.push((
        Outcome {
            name: "3 conditional-mean oracle",
            pass: o_ok,
            detail: summarize(&o),
        },
        secs,
    ));
    let b = pick("event_b_conditional");
    let b_ok = b.len() == 1 && b[0].pass == Verdict::Pass && b[0].estimate + Z_TOL * b[0].std_error >= b[0].target;
    out.push((
        Outcome {
            name: "4 event B given A and D",
            pass: b_ok,
            detail: format!("{} retained={}", summarize(&b), b.first().map_or(0, |r| r.retained)),
        },
        secs,
    ));
    let s = pick("stationarity");
    out.push((
        Outcome {
            name: "6 stationarity",
            pass: s.len() == 3 && all(&s) && s.iter().all(|r| r.z.abs() <= Z_TOL),
            detail: summarize(&s),
        },
        secs,
    ));
    Ok(())
}

fn rows_for(rows: &[Row], p: usize) -> Vec<&Row> {
    rows.iter().filter(|r| r.p == p).collect()
}

fn recovery_criteria(out: &mut Vec<(Outcome, f64)>) -> anyhow::Result<()> {
    let t = Instant::now();
    let cal = CalibrationConfig::default();
    let report = calibrate(&cal, CALIBRATION_SEED)?;
    let constants = report.constants;
    let cal_secs = t.elapsed().as_secs_f64();
    println!(
        "       calibrated constants: C1={:.4} C3={:?} C4={:?} ({:.1}s)",
        report.c1, constants.c3, constants.c4, cal_secs
    );

    // p = 20 over the grid and its tenths; p = 10, 40 at the grid endpoints
    let t = Instant::now();
    let mut t20: Vec<f64> = RECOVERY_GRID.iter().flat_map(|&h| [h, h / 10.0]).collect();
    t20.sort_by(f64::total_cmp);
    t20.dedup();
    let base = SweepConfig {
        trials: RECOVERY_TRIALS,
        ..Default::default()
    };
    let ends = vec![RECOVERY_GRID[0], RECOVERY_GRID[RECOVERY_GRID.len() - 1]];
    let mut all_cells = Vec::new();
    for &p in &SCALING_PS {
        let grid = if p == 20 { t20.clone() } else { ends.clone() };
        let cfg = SweepConfig {
            p_grid: vec![p],
            t_grid: grid,
            ..base.clone()
        };
        all_cells.extend(cells(&cfg, constants, SEED)?);
    }
    let rows: Vec<Row> = run_cells(&all_cells, "acceptance", None)?
        .into_iter()
        .map(|r| r.row)
        .collect();
    let secs = t.elapsed().as_secs_f64();
    for r in &rows {
        println!(
            "       p={:<3} T={:<8} success={:>2}/{} hamming={:.2} aborted={} max_term_ratio={:.3}{}",
            r.p,
            r.horizon,
            r.successes,
            r.trials,
            r.mean_hamming,
            r.aborted,
            r.max_term_ratio,
            if r.error.is_empty() {
                String::new()
            } else {
                format!(" error={}", r.error)
            }
        );
    }

    let violations: usize = rows.iter().map(|r| r.bound_violations).sum();
    let worst = rows.iter().map(|r| r.max_term_ratio).fold(0.0, f64::max);
    let errors = rows.iter().filter(|r| !r.error.is_empty()).count();
    out.push((
        Outcome {
            name: "5 term bound on gated runs",
            pass: violations == 0 && errors == 0,
            detail: format!(
                "{} runs, {violations} violations, max term / bound = {worst:.4}",
                rows.iter().map(|r| r.trials).sum::<usize>()
            ),
        },
        secs,
    ));

    let r20 = rows_for(&rows, 20);
    let at = |h: f64| r20.iter().find(|r| r.horizon == h).map_or(0, |r| r.successes);
    let witness = RECOVERY_GRID
        .iter()
        .find(|&&h| at(h) >= RECOVERY_SUCCESSES && at(h / 10.0) < at(h));
    out.push((
        Outcome {
            name: "7 end-to-end recovery",
            pass: witness.is_some(),
            detail: match witness {
                Some(h) => format!(
                    "T={h}: {}/{}, T/10: {}/{}",
                    at(*h),
                    RECOVERY_TRIALS,
                    at(h / 10.0),
                    RECOVERY_TRIALS
                ),
                None => format!(
                    "no T in {:?} reaches {}/{}; successes {:?}",
                    RECOVERY_GRID,
                    RECOVERY_SUCCESSES,
                    RECOVERY_TRIALS,
                    RECOVERY_GRID.iter().map(|&h| at(h)).collect::<Vec<_>>()
                ),
            },
        },
        secs + cal_secs,
    ));

    let mut ok = true;
    let mut detail = Vec::new();
    for &p in &SCALING_PS {
        let rp = rows_for(&rows, p);
        let s = |h: f64| rp.iter().find(|r| r.horizon == h).map(|r| r.success_rate);
        match (s(ends[0]), s(ends[1])) {
            (Some(lo), Some(hi)) => {
                ok &= hi >= lo;
                detail.push(format!("p={p}: {lo:.2} -> {hi:.2}"));
            }
            _ => {
                ok = false;
                detail.push(format!("p={p}: missing cell"));
            }
        }
    }
    out.push((
        Outcome {
            name: "8 success monotone in T",
            pass: ok,
            detail: detail.join(", "),
        },
        secs,
    ));
    Ok(())
}

fn determinism_criterion() -> anyhow::Result<Outcome> {
    let cfg = ExperimentConfig {
        seed: SEED,
        model: ModelSpec::Cycle {
            p: 12,
            beta: 0.3,
            diag: 1.0,
        },
        ..Default::default()
    };
    let model = gen_model(&cfg)?;
    let traj = simulate(&model, 2000.0, &InitState::Stationary, SEED, SimOptions::default())?;
    let sweep_cfg = SweepConfig {
        p_grid: vec![8, 12],
        t_grid: vec![200.0, 400.0],
        trials: 10,
        ..Default::default()
    };
    let cs = cells(&sweep_cfg, Constants::calibrated(2.4, 0.005, 0.05), SEED)?;

    let mut learn_bytes = Vec::new();
    let mut sweep_bytes = Vec::new();
    for &w in &WORKER_COUNTS {
        learn_bytes.push(learn_trajectory(&cfg, &traj, Some(&model), Some(w))?.to_bytes()?);
        let rows: Vec<Row> = run_cells(&cs, &cfg.hash(), Some(w))?
            .into_iter()
            .map(|r| r.row)
            .collect();
        sweep_bytes.push(to_csv(&rows, true)?);
    }
    let same = |v: &[Vec<u8>]| v.windows(2).all(|w| w[0] == w[1]);
    Ok(Outcome {
        name: "9 parallel determinism",
        pass: same(&learn_bytes) && same(&sweep_bytes),
        detail: format!(
            "workers {:?}: learn {} bytes identical={}, sweep {} bytes identical={}",
            WORKER_COUNTS,
            learn_bytes[0].len(),
            same(&learn_bytes),
            sweep_bytes[0].len(),
            same(&sweep_bytes)
        ),
    })
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let s: f64 = (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(lo + k as f64 * h)
        })
        .sum();
    s * h / 3.0
}

fn kl_criterion() -> anyhow::Result<Outcome> {
    let (mu1, mu2, sigma) = (0.3, 0.0, 1.0);
    let wide = truncated_gaussian_kl(mu1, mu2, sigma, 20.0 * sigma)?;
    let closed = (mu1 - mu2) * (mu1 - mu2) / (2.0 * sigma * sigma);

    let a = 2.0;
    let dens = |x: f64, mu: f64| (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp();
    let n = 20_000;
    let z1 = simpson(|x| dens(x, mu1), -a, a, n);
    let z2 = simpson(|x| dens(x, mu2), -a, a, n);
    let quad = simpson(
        |x| {
            let f = dens(x, mu1) / z1;
            f * (f / (dens(x, mu2) / z2)).ln()
        },
        -a,
        a,
        n,
    );
    let narrow = truncated_gaussian_kl(mu1, mu2, sigma, a)?;
    let (e1, e2) = ((wide - closed).abs(), (narrow - quad).abs());
    Ok(Outcome {
        name: "10 truncated-Gaussian KL",
        pass: e1 <= KL_TOL && e2 <= KL_TOL,
        detail: format!(
            "a=20: {wide:.12} vs {closed} (err {e1:.1e}); a=2: {narrow:.12} vs quadrature {quad:.12} (err {e2:.1e})"
        ),
    })
}

fn ensemble_criterion() -> anyhow::Result<Outcome> {
    let (p, d, lambda) = (6, 2, 0.2);
    let base = build_clique_ensemble(&EnsembleSpec { p, d, lambda, index: 0 })?;
    let size = EnsembleSpec { p, d, lambda, index: 0 }.size();
    let mut ok = size == 6;
    let mut min_eig = f64::INFINITY;
    for v in 1..=size {
        let m = build_clique_ensemble(&EnsembleSpec { p, d, lambda, index: v })?;
        let diff = (m.theta() - base.theta()).abs().max();
        min_eig = min_eig.min(min_eigenvalue(m.theta()));
        ok &= diff == lambda && min_eigenvalue(m.theta()) > 0.0;
    }
    Ok(Outcome {
        name: "11 restricted ensemble",
        pass: ok,
        detail: format!("M={size}, every |Theta_v - Theta_0|_max == {lambda}, min eigenvalue {min_eig:.4}"),
    })
}

fn timed(f: impl FnOnce() -> anyhow::Result<Outcome>) -> (Outcome, f64) {
    let t = Instant::now();
    let o = f().unwrap_or_else(|e| Outcome {
        name: "error",
        pass: false,
        detail: format!("{e:#}"),
    });
    (o, t.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let mut results: Vec<(Outcome, f64)> = Vec::new();
    let guard = |name: &'static str, r: anyhow::Result<()>, results: &mut Vec<(Outcome, f64)>| {
        if let Err(e) = r {
            results.push((
                Outcome {
                    name,
                    pass: false,
                    detail: format!("{e:#}"),
                },
                0.0,
            ));
        }
    };
    results.push(timed(kl_criterion));
    results.push(timed(ensemble_criterion));
    let r = verifier_criteria(&mut results);
    guard("1-4, 6 verifiers", r, &mut results);
    results.push(timed(determinism_criterion));
    let r = recovery_criteria(&mut results);
    guard("5, 7, 8 recovery", r, &mut results);

    results.sort_by_key(|(o, _)| {
        o.name
            .split_whitespace()
            .next()
            .and_then(|n| n.parse::<u32>().ok())
            .unwrap_or(0)
    });
    println!();
    for (o, secs) in &results {
        line(o, *secs);
    }
    let failed = results.iter().filter(|(o, _)| !o.pass).count();
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
