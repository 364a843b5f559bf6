use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{ratio, run_config, RunReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    #[serde(with = "ratio")]
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    #[serde(with = "ratio")]
    pub std: f64,
    pub n: usize,
}

impl MetricAggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Contents of `aggregate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub completed: Vec<u64>,
    pub failures: Vec<SeedFailure>,
    /// Set when at least one seed failed.
    pub partial: bool,
    pub metrics: BTreeMap<String, MetricAggregate>,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn summary_metrics(r: &RunReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("final_accuracy", Some(r.final_accuracy)),
        ("best_accuracy", Some(r.best_accuracy)),
        ("worst1", Some(r.worst1)),
        ("worst10", Some(r.worst10)),
        ("worst20", Some(r.worst20)),
        ("final_imbalance_ratio", Some(r.final_imbalance_ratio)),
        ("pl_quality_tail", r.pl_quality_tail),
        ("pl_quantity_tail", r.pl_quantity_tail),
    ]
}

/// Averages per-seed summaries metric by metric, skipping absent values.
pub fn aggregate(reports: &[RunReport]) -> BTreeMap<String, MetricAggregate> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in summary_metrics(r) {
            let entry = values.entry(name.to_string()).or_default();
            if let Some(v) = v {
                entry.push(v);
            }
        }
    }
    values
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k, MetricAggregate::of(&v)))
        .collect()
}

/// Runs `config` once per seed on up to `jobs` threads, one directory per
/// seed, then writes `aggregate.json`.
pub fn sweep_config(
    config: &RunConfig,
    seeds: &[u64],
    jobs: usize,
    out: &Path,
    base: Option<&Path>,
) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<RunReport, String>>>> = Mutex::new(vec![None; seeds.len()]);
    thread::scope(|s| {
        for _ in 0..jobs.clamp(1, seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let cfg = RunConfig {
                    seed: seeds[i],
                    ..config.clone()
                };
                let r = run_config(&cfg, &seed_dir(out, seeds[i]), base).map_err(|e| e.to_string());
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("workers joined");
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Some(Ok(rep)) => {
                completed.push(*seed);
                reports.push(rep);
            }
            Some(Err(error)) => failures.push(SeedFailure { seed: *seed, error }),
            None => failures.push(SeedFailure {
                seed: *seed,
                error: "worker did not report".into(),
            }),
        }
    }
    let report = SweepReport {
        seeds: seeds.to_vec(),
        completed,
        partial: !failures.is_empty(),
        failures,
        metrics: aggregate(&reports),
    };
    let path = out.join("aggregate.json");
    let text = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

pub fn sweep(config_path: impl AsRef<Path>, seeds: &[u64], jobs: usize, out: impl AsRef<Path>) -> Result<SweepReport> {
    let config_path = config_path.as_ref();
    let config = RunConfig::from_path(config_path)?;
    sweep_config(&config, seeds, jobs, out.as_ref(), config_path.parent())
}
