use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn ggm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggm"))
        .current_dir(dir)
        .args(args)
        .env_remove("GGM_CONFIG")
        .env_remove("GGM_SEED")
        .env_remove("GGM_OUT")
        .env_remove("GGM_WORKERS")
        .env_remove("GGM_THRESHOLD_OVERRIDE")
        .env_remove("GGM_CLOSED_FORM")
        .output()
        .expect("run ggm")
}

fn file_hash(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

const CONFIG: &str = r#"
seed = 9

[model]
kind = "cycle"
p = 6
beta = 0.3
diag = 1.0

[simulate]
horizon = 500.0

[sweep]
p_grid = [5]
t_grid = [50.0, 100.0]
trials = 10

[sweep.constants]
c1 = 3.0
c3 = 0.05
c4 = 0.01

[verify]
event_a_taus = [2.0794415416798357]
event_a_trials = 200000
event_d_trials = 5000
event_b_trials = 5000
oracle_retain = 100
oracle_max_trials = 1048576
stationarity_chains = 100
stationarity_horizon = 5.0
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = setup();
    let p = dir.path();
    for out in ["a.jsonl", "b.jsonl"] {
        let o = ggm(p, &["--config", "cfg.toml", "simulate", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(file_hash(&p.join("a.jsonl")), file_hash(&p.join("b.jsonl")));
    assert!(p.join("a.jsonl.timing.json").exists());

    let o = ggm(
        p,
        &["--config", "cfg.toml", "--seed", "10", "simulate", "--out", "c.jsonl"],
    );
    assert!(o.status.success());
    assert_ne!(file_hash(&p.join("a.jsonl")), file_hash(&p.join("c.jsonl")));
}

#[test]
fn trajectory_header_echoes_model_hash() {
    let dir = setup();
    let p = dir.path();
    assert!(ggm(p, &["--config", "cfg.toml", "gen-model", "--out", "m.json"])
        .status
        .success());
    assert!(ggm(
        p,
        &["--config", "cfg.toml", "simulate", "--model", "m.json", "--out", "t.jsonl"]
    )
    .status
    .success());
    let model = glauber_ggm::GgmModel::from_json(&std::fs::read_to_string(p.join("m.json")).unwrap()).unwrap();
    let header: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(p.join("t.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(header["model_hash"].as_str().unwrap(), model.content_hash());
    assert_eq!(header["seed"], 9);
}

#[test]
fn learn_reports_and_reproduces() {
    let dir = setup();
    let p = dir.path();
    assert!(ggm(p, &["--config", "cfg.toml", "gen-model", "--out", "m.json"])
        .status
        .success());
    assert!(ggm(
        p,
        &["--config", "cfg.toml", "simulate", "--model", "m.json", "--out", "t.jsonl"]
    )
    .status
    .success());

    // no model and no bounds in the config
    let o = ggm(
        p,
        &[
            "--config",
            "cfg.toml",
            "learn",
            "--trajectory",
            "t.jsonl",
            "--out",
            "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    for (out, workers) in [("r1.json", "1"), ("r4.json", "4")] {
        let o = ggm(
            p,
            &[
                "--config",
                "cfg.toml",
                "--workers",
                workers,
                "learn",
                "--trajectory",
                "t.jsonl",
                "--model",
                "m.json",
                "--out",
                out,
                "--evidence",
                "ev.csv",
            ],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(file_hash(&p.join("r1.json")), file_hash(&p.join("r4.json")));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("r1.json")).unwrap()).unwrap();
    assert_eq!(r["seed"], 9);
    assert!(r["config_hash"].as_str().unwrap().len() == 64);
    assert!(r["edges"].is_array() && r["scores"].is_array() && r["metrics"].is_object());
    let ev = std::fs::read_to_string(p.join("ev.csv")).unwrap();
    assert!(ev.starts_with("pair_i,pair_j,k,term,deltaYi,deltaYj"));

    let o = ggm(
        p,
        &[
            "--config",
            "cfg.toml",
            "--threshold-override",
            "1e9",
            "learn",
            "--trajectory",
            "t.jsonl",
            "--model",
            "m.json",
            "--out",
            "r9.json",
        ],
    );
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("r9.json")).unwrap()).unwrap();
    assert_eq!(r["edges"].as_array().unwrap().len(), 0);
}

#[test]
fn sweep_resumes_from_existing_csv() {
    let dir = setup();
    let p = dir.path();
    let o = ggm(p, &["--config", "cfg.toml", "sweep", "--out", "s.csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(p.join("s.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3);
    assert!(ggm(p, &["--config", "cfg.toml", "sweep", "--out", "s.csv"])
        .status
        .success());
    assert_eq!(std::fs::read(p.join("s.csv")).unwrap(), first);
    assert!(p.join("s.csv.timing.csv").exists());
}

#[test]
fn verify_exit_codes() {
    let dir = setup();
    let p = dir.path();
    let perturbed = format!("{CONFIG}perturb_target = 1.1\n");
    std::fs::write(p.join("bad.toml"), perturbed).unwrap();
    let o = ggm(p, &["--config", "bad.toml", "verify", "--out", "v.jsonl"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    let first: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(p.join("v.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first["record"]["lemma"], "event_a");
    assert_eq!(first["record"]["pass"], "fail");

    let selected = format!("{CONFIG}only = [\"event_a\", \"event_d\"]\n");
    std::fs::write(p.join("ok.toml"), &selected).unwrap();
    let o = ggm(p, &["--config", "ok.toml", "verify", "--out", "v.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));

    let tiny = selected.replace("event_a_trials = 200000", "event_a_trials = 10");
    std::fs::write(p.join("tiny.toml"), tiny).unwrap();
    let o = ggm(p, &["--config", "tiny.toml", "verify", "--out", "v.jsonl"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    let text = std::fs::read_to_string(p.join("v.jsonl")).unwrap();
    assert!(text.lines().next().unwrap().contains("\"inconclusive\""));

    std::fs::write(p.join("typo.toml"), "seeed = 1\n").unwrap();
    assert_eq!(ggm(p, &["--config", "typo.toml", "gen-model"]).status.code(), Some(3));
}

#[test]
fn env_vars_set_flags() {
    let dir = setup();
    let p = dir.path();
    let o = Command::new(env!("CARGO_BIN_EXE_ggm"))
        .current_dir(p)
        .args(["gen-model"])
        .env("GGM_CONFIG", "cfg.toml")
        .env("GGM_SEED", "4")
        .env("GGM_OUT", "env.json")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("env.json")).unwrap()).unwrap();
    assert_eq!(m["provenance"]["seed"], 4);
}
