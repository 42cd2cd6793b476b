//! The verifier suite behind `ggm verify`.

use glauber_ggm::analysis::{
    mc_event_a, mc_event_b_conditional, mc_event_d, oracle_edge_expectation, stationarity_check, IntervalSetup,
    McEstimate, VerifierRecord,
};
use glauber_ggm::learner::{event_a_probability, select_parameters};
use glauber_ggm::model::{build_bounded_degree_model, Provenance};
use glauber_ggm::rng::derive_seed;
use glauber_ggm::{Constants, GgmModel, Graph, InitState, Verdict};
use serde_json::json;

use crate::config::VerifyConfig;
use crate::{ConfigError, Status};

/// Precision `[[2, -1], [-1, 2]]`.
pub fn two_node() -> glauber_ggm::Result<GgmModel> {
    let m = build_bounded_degree_model(&Graph::path(2)?, 0.5, 2.0)?;
    Ok(m.with_provenance(Provenance {
        factory: "two_node".into(),
        ..Default::default()
    }))
}

/// Minimum trial counts below which a verifier is reported inconclusive.
const MIN_INTERVAL_TRIALS: usize = 1000;
const MIN_CHAINS: usize = 100;

fn record(
    lemma: &str,
    params: serde_json::Value,
    est: &McEstimate,
    perturb: f64,
    check: impl Fn(&McEstimate) -> Verdict,
) -> VerifierRecord {
    let est = if perturb == 1.0 {
        *est
    } else {
        est.retarget(est.target * perturb)
    };
    VerifierRecord::new(lemma, params, &est, check(&est))
}

fn inconclusive(lemma: &str, params: serde_json::Value, trials: usize, target: f64) -> VerifierRecord {
    let mut est = McEstimate::proportion(trials as u64, 0, target);
    est.retained = 0;
    VerifierRecord::new(lemma, params, &est, Verdict::Inconclusive)
}

/// Verifier names accepted by `only`.
pub const VERIFIERS: [&str; 6] = [
    "event_a",
    "event_d",
    "event_b_conditional",
    "edge_expectation_edge",
    "edge_expectation_nonedge",
    "stationarity",
];

pub fn run_verifiers(cfg: &VerifyConfig, seed: u64) -> anyhow::Result<Vec<VerifierRecord>> {
    if let Some(bad) = cfg.only.iter().find(|n| !VERIFIERS.contains(&n.as_str())) {
        return Err(ConfigError(format!("unknown verifier `{bad}`; expected one of {VERIFIERS:?}")).into());
    }
    let want = |name: &str| cfg.only.is_empty() || cfg.only.iter().any(|n| n == name);
    let k = cfg.perturb_target;
    let mut out = Vec::new();

    for (n, &tau) in cfg.event_a_taus.iter().enumerate().filter(|_| want("event_a")) {
        let params = json!({"tau": tau, "p": 2});
        if cfg.event_a_trials < MIN_INTERVAL_TRIALS {
            out.push(inconclusive(
                "event_a",
                params,
                cfg.event_a_trials,
                event_a_probability(tau),
            ));
            continue;
        }
        let est = mc_event_a(tau, 2, cfg.event_a_trials, derive_seed(seed, &[1, n as u64]))?;
        out.push(record("event_a", params, &est, k, |e| e.two_sided(3.0)));
    }

    let (i, j) = (0, cfg.event_d_p / 2);
    let params = json!({"p": cfg.event_d_p, "i": i, "j": j, "tau": cfg.event_d_tau});
    if !want("event_d") {
        // skipped
    } else if cfg.event_d_trials < MIN_INTERVAL_TRIALS {
        out.push(inconclusive("event_d_bound", params.clone(), cfg.event_d_trials, 0.0));
        out.push(inconclusive("event_d_exact", params, cfg.event_d_trials, 0.0));
    } else {
        let cycle = build_bounded_degree_model(&Graph::cycle(cfg.event_d_p)?, 0.3, 1.0)?;
        let r = mc_event_d(
            &cycle,
            i,
            j,
            cfg.event_d_tau,
            cfg.event_d_trials,
            derive_seed(seed, &[2]),
        )?;
        out.push(record(
            "event_d_bound",
            params.clone(),
            &r.estimate.retarget(r.bound),
            k,
            |e| e.at_least_target(3.0),
        ));
        out.push(record("event_d_exact", params, &r.estimate, k, |e| e.two_sided(3.0)));
    }

    let pair = two_node()?;
    let b = pair.bounds();
    let prm = select_parameters(
        2,
        1,
        cfg.delta,
        b.beta_min,
        b.sigma_min,
        b.sigma_max,
        Constants::closed_form(1.0),
    )?;
    let setup = IntervalSetup {
        tau: cfg.interval_tau,
        sigma_min: b.sigma_min,
        y_max: Some(prm.y_max),
    };
    let params = json!({"model": "two_node", "tau": setup.tau, "sigma_min": setup.sigma_min, "y_max": prm.y_max, "delta": cfg.delta});
    if want("event_b_conditional") {
        let r = mc_event_b_conditional(
            &pair,
            0,
            1,
            &setup,
            cfg.delta,
            cfg.event_b_trials,
            derive_seed(seed, &[3]),
        )?;
        out.push(record("event_b_conditional", params, &r.estimate, k, |e| {
            if r.verdict == Verdict::Inconclusive {
                Verdict::Inconclusive
            } else {
                e.at_least_target(3.0)
            }
        }));
    }

    let params = json!({"model": "two_node", "pair": [0, 1], "tau": setup.tau, "retain": cfg.oracle_retain});
    if want("edge_expectation_edge") {
        let r = oracle_edge_expectation(
            &pair,
            0,
            1,
            &setup,
            cfg.oracle_retain,
            cfg.oracle_max_trials,
            derive_seed(seed, &[4]),
        )?;
        out.push(oracle_record(
            "edge_expectation_edge",
            params,
            &r.estimate,
            r.verdict,
            k,
        ));
    }

    let chain = build_bounded_degree_model(&Graph::path(3)?, cfg.chain_beta, 1.0)?;
    let cb = chain.bounds();
    let cprm = select_parameters(
        3,
        2,
        cfg.delta,
        cb.beta_min,
        cb.sigma_min,
        cb.sigma_max,
        Constants::closed_form(1.0),
    )?;
    let csetup = IntervalSetup {
        tau: cfg.interval_tau,
        sigma_min: cb.sigma_min,
        y_max: Some(cprm.y_max),
    };
    let params = json!({"model": "path3", "beta": cfg.chain_beta, "pair": [0, 2], "tau": csetup.tau, "retain": cfg.oracle_retain});
    if want("edge_expectation_nonedge") {
        let r = oracle_edge_expectation(
            &chain,
            0,
            2,
            &csetup,
            cfg.oracle_retain,
            cfg.oracle_max_trials,
            derive_seed(seed, &[5]),
        )?;
        out.push(oracle_record(
            "edge_expectation_nonedge",
            params,
            &r.estimate,
            r.verdict,
            k,
        ));
    }

    let params = json!({"model": "two_node", "chains": cfg.stationarity_chains, "T": cfg.stationarity_horizon});
    if !want("stationarity") {
        // skipped
    } else if cfg.stationarity_chains < MIN_CHAINS {
        out.push(inconclusive("stationarity", params, cfg.stationarity_chains, 0.0));
    } else {
        let r = stationarity_check(
            &pair,
            cfg.stationarity_horizon,
            cfg.stationarity_chains,
            0.0,
            &InitState::Stationary,
            derive_seed(seed, &[6]),
        )?;
        for e in &r.entries {
            let mut params = params.clone();
            params["entry"] = json!([e.i, e.j]);
            out.push(record("stationarity", params, &e.estimate, k, |e| e.two_sided(3.0)));
        }
    }
    Ok(out)
}

fn oracle_record(lemma: &str, params: serde_json::Value, est: &McEstimate, verdict: Verdict, k: f64) -> VerifierRecord {
    record(lemma, params, est, k, |e| {
        if verdict == Verdict::Inconclusive {
            Verdict::Inconclusive
        } else {
            e.two_sided(4.0)
        }
    })
}

/// Failure beats inconclusive beats pass.
pub fn status(records: &[VerifierRecord]) -> Status {
    let v = records.iter().fold(Verdict::Pass, |v, r| v.and(r.pass));
    match v {
        Verdict::Pass => Status::Pass,
        Verdict::Fail => Status::Failure,
        Verdict::Inconclusive => Status::Inconclusive,
    }
}
