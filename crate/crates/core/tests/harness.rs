use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dstlab::harness::{compare, read_summary, run_config, RunConfig, METRICS_COLUMNS, STEP_COLUMNS};
use dstlab::Error;

const BLOBS: &str = r#"{"generator": "gaussian_blobs", "classes": 3, "n_per_class": 60, "spread": 0.4, "distance_profile": [1.0, 1.0, 0.5]}"#;

fn blobs_config(algorithm: &str, extra: &str) -> RunConfig {
    let text = format!(
        r#"{{"dataset": {BLOBS}, "algorithm": {algorithm}, "total_steps": 200, "eval_every": 50,
            "bias_reference_steps": 50 {extra}}}"#
    );
    RunConfig::from_json(&text).unwrap()
}

fn header(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(str::to_string).collect()
}

/// Every opening tag has a matching close, in order.
fn balanced_tags(svg: &str) -> bool {
    let mut stack = Vec::new();
    let mut rest = svg;
    while let Some(open) = rest.find('<') {
        let close = match rest[open..].find('>') {
            Some(c) => open + c,
            None => return false,
        };
        let tag = &rest[open + 1..close];
        rest = &rest[close + 1..];
        if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
            continue;
        }
        let name = tag.trim_start_matches('/').split_whitespace().next().unwrap_or("");
        if tag.starts_with('/') {
            if stack.pop() != Some(name.to_string()) {
                return false;
            }
        } else {
            stack.push(name.to_string());
        }
    }
    stack.is_empty()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let c = blobs_config(r#"{"kind": "supervised"}"#, "");
    let r = run_config(&c, dir.path(), None).unwrap();
    assert!(r.final_accuracy.is_finite());
    for f in [
        "config.resolved.json",
        "metrics.csv",
        "steps.csv",
        "bias_report.json",
        "rounds.json",
        "summary.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(header(&dir.path().join("metrics.csv")), METRICS_COLUMNS);
    assert_eq!(header(&dir.path().join("steps.csv")), STEP_COLUMNS);
    let rows = fs::read_to_string(dir.path().join("metrics.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 200 / 50);
    assert_eq!(r.charts.len(), 5);
    for chart in &r.charts {
        let svg = fs::read_to_string(dir.path().join(chart)).unwrap();
        assert!(svg.contains("<svg") && balanced_tags(&svg), "{chart}");
    }
    assert_eq!(read_summary(dir.path()).unwrap(), r);
    let resolved = RunConfig::from_path(dir.path().join("config.resolved.json")).unwrap();
    assert_eq!(resolved, c);
}

#[test]
fn debiased_run_reports_disagreement() {
    let dir = tempfile::tempdir().unwrap();
    let c = blobs_config(
        r#"{"kind": "fix_match", "debiased": true, "tau": 0.6}"#,
        r#", "dst": {"warmup_steps_adv": 20}"#,
    );
    let r = run_config(&c, dir.path(), None).unwrap();
    assert_eq!(r.algorithm, "dst_fix_match");
    let steps = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    let col = STEP_COLUMNS
        .iter()
        .position(|&c| c == "worst_disagreement_rate")
        .unwrap();
    let reported: Vec<&str> = steps.lines().skip(1).map(|l| l.split(',').nth(col).unwrap()).collect();
    assert!(
        reported[..20].iter().all(|&v| v == "n/a"),
        "no disagreement during warmup"
    );
    assert!(reported[20..].iter().any(|&v| v != "n/a"));
}

#[test]
fn exploding_run_aborts_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let c = blobs_config(
        r#"{"kind": "supervised"}"#,
        r#", "optimizer": {"lr": 1e200, "momentum": 0.0, "schedule": "constant", "clip_norm": 1e12}"#,
    );
    let err = run_config(&c, dir.path(), None).unwrap_err();
    let Error::NonFinite { step } = err else {
        panic!("expected a non-finite abort, got {err}")
    };
    let summary = read_summary(dir.path()).unwrap();
    assert_eq!(summary.aborted.as_ref().map(|a| a.step), Some(step));
    assert!(summary.steps_completed <= step + 1);
    assert!(dir.path().join("metrics.csv").is_file());
}

#[test]
fn compare_overlays_runs() {
    let root = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|n| root.path().join(n)).collect();
    run_config(&blobs_config(r#"{"kind": "supervised"}"#, ""), &dirs[0], None).unwrap();
    run_config(&blobs_config(r#"{"kind": "pseudo_label"}"#, ""), &dirs[1], None).unwrap();
    let out = root.path().join("cmp");
    let rows = compare(&dirs, &out).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "supervised");
    assert!(out.join("comparison.csv").is_file());
    let charts: Vec<_> = fs::read_dir(out.join("charts")).unwrap().collect();
    assert!(!charts.is_empty());
    for c in charts {
        assert!(balanced_tags(&fs::read_to_string(c.unwrap().path()).unwrap()));
    }

    let self_cmp = compare(&[dirs[0].clone(), dirs[0].clone()], &root.path().join("self")).unwrap();
    assert_eq!(self_cmp[0][2..], self_cmp[1][2..]);

    let metrics = dirs[1].join("metrics.csv");
    let text = fs::read_to_string(&metrics).unwrap().replacen("worst20", "worst_20", 1);
    fs::write(&metrics, text).unwrap();
    match compare(&dirs, &out) {
        Err(Error::HeaderMismatch { missing, extra, .. }) => {
            assert_eq!(missing, ["worst20"]);
            assert_eq!(extra, ["worst_20"]);
        }
        other => panic!("expected a header mismatch, got {other:?}"),
    }
    assert!(compare(&dirs[..1], &out).is_err());
}

fn dstlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dstlab"))
}

#[test]
fn cli_rejects_invalid_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"algorithm": {"kind": "fix_match", "tau": 1.5}}"#).unwrap();
    let out = dstlab()
        .args(["run", "--config"])
        .arg(&path)
        .env("DSTLAB_OUT", dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tau"), "{stderr}");
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn cli_run_uses_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("smoke.json");
    fs::write(&path, blobs_config(r#"{"kind": "supervised"}"#, "").to_json()).unwrap();
    let out = dstlab()
        .args(["run", "--seed", "4", "--config"])
        .arg(&path)
        .env("DSTLAB_OUT", dir.path().join("runs"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_summary(&dir.path().join("runs/smoke")).unwrap();
    assert_eq!(summary.seed, 4);
}

#[test]
fn cli_sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let mut c = blobs_config(r#"{"kind": "supervised"}"#, "");
    c.total_steps = 60;
    fs::write(&path, c.to_json()).unwrap();
    let sweep_out = dir.path().join("sw");
    let out = dstlab()
        .args(["sweep", "--seeds", "1,2", "--jobs", "2", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&sweep_out)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sweep_out.join("aggregate.json").is_file());
    let runs = format!(
        "{},{}",
        sweep_out.join("seed_1").display(),
        sweep_out.join("seed_2").display()
    );
    let out = dstlab()
        .args(["compare", "--runs", &runs, "--out"])
        .arg(dir.path().join("cmp"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("cmp/comparison.csv").is_file());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            RunConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n > 0);
}
