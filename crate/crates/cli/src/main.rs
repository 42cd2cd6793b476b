use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ggm_cli::config::ExperimentConfig;
use ggm_cli::{calibrate, classify, run, sweep, verify, with_workers, write_timing, Status};

/// Structure learning from Glauber dynamics: experiment harness.
///
/// Every flag can also be set through the environment with the `GGM_`
/// prefix, e.g. `GGM_SEED=7`. Exit status: 0 pass, 1 failure,
/// 2 inconclusive, 3 configuration error.
#[derive(Debug, Parser)]
#[command(name = "ggm", version)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true, env = "GGM_CONFIG")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config file.
    #[arg(long, global = true, env = "GGM_SEED")]
    seed: Option<u64>,

    /// Output path.
    #[arg(long, global = true, env = "GGM_OUT")]
    out: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GGM_WORKERS")]
    workers: Option<usize>,

    /// Fixed threshold in place of the selected one.
    #[arg(long, global = true, env = "GGM_THRESHOLD_OVERRIDE")]
    threshold_override: Option<f64>,

    /// Use the closed-form interval length and threshold.
    #[arg(long, global = true, env = "GGM_CLOSED_FORM")]
    closed_form: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured model as JSON.
    GenModel,
    /// Simulate a trajectory and write it as JSONL.
    Simulate {
        /// Model file; defaults to building the `[model]` section.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Learn the edge set from a trajectory.
    Learn {
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Ground-truth model for default bounds and metrics.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write the per-term audit CSV here.
        #[arg(long)]
        evidence: Option<PathBuf>,
    },
    /// Success rate over the `(p, T, beta)` grid; resumable CSV.
    Sweep,
    /// Run the Monte-Carlo verifiers and write a JSONL report.
    Verify {
        /// Fit the learner constants instead and write them as JSON.
        #[arg(long)]
        calibrate: bool,
    },
}

fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threshold_override.is_some() {
        cfg.learn.threshold_override = cli.threshold_override;
    }
    cfg.closed_form |= cli.closed_form;
    match &cli.command {
        Command::Simulate { model, horizon } => {
            if model.is_some() {
                cfg.simulate.model = model.clone();
            }
            if let Some(h) = horizon {
                cfg.simulate.horizon = *h;
            }
        }
        Command::Learn {
            trajectory,
            model,
            evidence,
        } => {
            if trajectory.is_some() {
                cfg.learn.trajectory = trajectory.clone();
            }
            if model.is_some() {
                cfg.learn.model = model.clone();
            }
            if evidence.is_some() {
                cfg.learn.evidence = evidence.clone();
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write(out: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))
}

fn execute(cli: &Cli) -> anyhow::Result<Status> {
    let cfg = resolve_config(cli)?;
    let started = Instant::now();
    match &cli.command {
        Command::GenModel => {
            let out = out_path(cli, "model.json");
            let model = run::gen_model(&cfg)?;
            write(&out, (model.to_json() + "\n").as_bytes())?;
            write_timing(&out, "gen-model", started.elapsed())?;
            println!(
                "wrote {} (p = {}, {} edges)",
                out.display(),
                model.p(),
                model.graph().edges().len()
            );
            Ok(Status::Pass)
        }
        Command::Simulate { .. } => {
            let out = out_path(cli, "trajectory.jsonl");
            let traj = with_workers(cli.workers, || run::simulate_model(&cfg))??;
            run::write_trajectory(&traj, &out)?;
            write_timing(&out, "simulate", started.elapsed())?;
            println!(
                "wrote {} ({} updates over T = {})",
                out.display(),
                traj.len(),
                traj.horizon()
            );
            Ok(Status::Pass)
        }
        Command::Learn { .. } => {
            let out = out_path(cli, "results.json");
            let path = cfg
                .learn
                .trajectory
                .clone()
                .ok_or_else(|| ggm_cli::ConfigError("learn needs a trajectory (--trajectory)".into()))?;
            let traj = run::load_trajectory(&path)?;
            let truth = cfg.learn.model.as_deref().map(run::load_model).transpose()?;
            let report = with_workers(cli.workers, || run::learn_trajectory(&cfg, &traj, truth.as_ref(), None))??;
            write(&out, &report.to_bytes()?)?;
            if let Some(ev) = &cfg.learn.evidence {
                run::write_evidence(&traj, &report.params, ev)?;
            }
            write_timing(&out, "learn", started.elapsed())?;
            let edges: Vec<_> = report.output.edges.iter().collect();
            println!("aborted: {}  edges: {:?}", report.output.aborted, edges);
            if let Some(m) = &report.metrics {
                println!("exact: {}  hamming: {}", m.exact, m.hamming);
            }
            Ok(Status::Pass)
        }
        Command::Sweep => {
            let out = out_path(cli, "sweep.csv");
            let constants = cfg.sweep.constants.resolve(cfg.closed_form)?;
            let cells = sweep::cells(&cfg.sweep, constants, cfg.seed)?;
            let rows = sweep::sweep_to_file(&cells, &cfg.hash(), &out, cli.workers)?;
            for r in &rows {
                println!(
                    "p={:<4} T={:<10} beta={:<6} success={}/{}{}",
                    r.p,
                    r.horizon,
                    r.beta_min,
                    r.successes,
                    r.trials,
                    if r.error.is_empty() {
                        String::new()
                    } else {
                        format!("  error: {}", r.error)
                    }
                );
            }
            Ok(if rows.iter().any(|r| !r.error.is_empty()) {
                Status::Failure
            } else {
                Status::Pass
            })
        }
        Command::Verify { calibrate: true } => {
            let out = out_path(cli, "constants.json");
            let report = with_workers(cli.workers, || calibrate::calibrate(&cfg.verify.calibration, cfg.seed))??;
            write(
                &out,
                (serde_json::to_string_pretty(&report.constants)? + "\n").as_bytes(),
            )?;
            let mut details = out.clone().into_os_string();
            details.push(".report.json");
            write(
                Path::new(&details),
                (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
            )?;
            write_timing(&out, "calibrate", started.elapsed())?;
            for c in &report.candidates {
                println!(
                    "C3={:<8} tau={:.4}  weakest edge={:.3e}  strongest non-edge={:.3e}  gap={:+.3}",
                    c.c3, c.tau, c.split.weakest_edge, c.split.strongest_nonedge, c.relative_gap
                );
            }
            println!("wrote {}: {:?}", out.display(), report.constants);
            Ok(Status::Pass)
        }
        Command::Verify { calibrate: false } => {
            let out = out_path(cli, "verify.jsonl");
            let records = with_workers(cli.workers, || verify::run_verifiers(&cfg.verify, cfg.seed))??;
            let mut buf = Vec::new();
            for r in &records {
                serde_json::to_writer(
                    &mut buf,
                    &serde_json::json!({"config_hash": cfg.hash(), "seed": cfg.seed, "record": r}),
                )?;
                buf.push(b'\n');
            }
            write(&out, &buf)?;
            write_timing(&out, "verify", started.elapsed())?;
            for r in &records {
                println!(
                    "{:<26} {:>12} z={:+8.3} estimate={:.6} target={:.6}",
                    r.lemma,
                    format!("{:?}", r.pass).to_lowercase(),
                    r.z,
                    r.estimate,
                    r.target
                );
            }
            Ok(verify::status(&records))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(status) => status.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            classify(&e).into()
        }
    }
}
