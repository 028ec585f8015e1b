use std::path::Path;
use std::process::{Command, Output};

use bilevel_rl::design::DesignSolution;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bilevel-rl"))
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("BILEVEL_RL_THREADS", n);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{"pretrain": {"n_iter": 100, "n_episodes": 4}, "train": {"epochs": 5, "episodes": 4}, "design": {"n_runs": 1, "mc_noise_pct": 0.0, "tank": {"n_starts": 2, "max_evals": 60, "tol": 0.1}}}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = run(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_config_names_the_path() {
    let o = run(
        &["pretrain", "--config", "/no/such/tank.json", "--out", "/tmp/unused"],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/tank.json"), "{}", stderr(&o));
}

#[test]
fn schema_violation_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"train": {"gamma": 1.5}}"#);
    let o = run(
        &["pretrain", "--config", &cfg, "--out", tmp.path().to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.gamma"), "{}", stderr(&o));
}

#[test]
fn design_without_policy_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{}");
    let out = tmp.path().join("empty");
    let o = run(&["design", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("policy not found"), "{}", stderr(&o));
}

#[test]
fn pipeline_artifacts_are_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("run{threads}"));
        let o = run(
            &[
                "pipeline",
                "--config",
                &cfg,
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "11",
                "--quiet",
            ],
            Some(threads),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        for f in [
            "policy.json",
            "train.csv",
            "design.json",
            "eval.csv",
            "summary.json",
            "config.json",
        ] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        outputs.push(out);
    }
    for f in ["policy.json", "design.json", "eval.csv"] {
        assert_eq!(
            std::fs::read(outputs[0].join(f)).unwrap(),
            std::fs::read(outputs[1].join(f)).unwrap(),
            "{f}"
        );
    }

    // effective config records the seed override and re-reads unchanged
    let eff = std::fs::read_to_string(outputs[0].join("config.json")).unwrap();
    let parsed = bilevel_rl::config::RunConfig::from_json(&eff).unwrap();
    assert_eq!(parsed.seed, 11);

    // one noiseless run: flat bands, n_T + 1 rows, PD and PG series
    let text = std::fs::read_to_string(outputs[0].join("eval.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert!(header.contains(&"pd_mean_V".to_string()));
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), parsed.env.n_steps + 1);
    for (i, name) in header.iter().enumerate() {
        if name.contains("std_") {
            assert!(
                rows.iter()
                    .all(|row| row[i].is_empty() || row[i].parse::<f64>().unwrap() == 0.0),
                "{name}"
            );
        }
    }
    let sol = DesignSolution::from_json(&std::fs::read_to_string(outputs[0].join("design.json")).unwrap()).unwrap();
    assert_eq!(sol.problem, "tank");
    assert_eq!(sol.mc.unwrap().n_runs, 1);
}

#[test]
fn stages_chain_through_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("staged");
    let out_s = out.to_str().unwrap();
    for stage in ["pretrain", "train", "design"] {
        let o = run(&[stage, "--config", &cfg, "--out", out_s, "--quiet"], None);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    let o = run(
        &["evaluate", "--config", &cfg, "--out", out_s, "--runs", "2", "--quiet"],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_runs"], 2);
    assert!(summary["pd"]["mean_err"].as_f64().is_some());
}

#[test]
fn infeasible_design_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    // an untrained network cannot hold the nominal design
    let cfg = write_config(
        tmp.path(),
        r#"{"pretrain": {"n_iter": 0}, "train": {"epochs": 0}, "design": {"tank": {"n_starts": 1, "max_evals": 30}}}"#,
    );
    let out = tmp.path().join("raw");
    let o = run(
        &["pipeline", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"],
        None,
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("cannot stabilize"), "{}", stderr(&o));
}
