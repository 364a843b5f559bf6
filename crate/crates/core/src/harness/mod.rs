//! Declarative experiment runner: JSON configs, seeded runs, sweeps and
//! comparisons, with CSV/JSON artifacts and SVG charts.
//!
//! A run directory holds `config.resolved.json`, `metrics.csv` (one row per
//! evaluation interval, columns [`METRICS_COLUMNS`]), `steps.csv` (one row
//! per training step, columns [`STEP_COLUMNS`]), `bias_report.json`,
//! `rounds.json`, `summary.json` and `charts/*.svg`. Missing values are
//! written as `n/a` and infinite ones as `inf`.

mod compare;
mod config;
mod run;
mod svg;
mod sweep;

pub use compare::{compare, MetricsTable, OVERLAY_METRICS};
pub use config::{DatasetSpec, OptimizerSpec, RunConfig, ScheduleKind, SplitSpec};
pub use run::{
    build_trainer, cell, drive, parse_cell, prepare, read_summary, run, run_config, AbortInfo, BiasArtifact,
    ImbalanceSummary, MetricsRow, Prepared, RoundReport, RunReport, METRICS_COLUMNS, STEP_COLUMNS,
};
pub use svg::{escape, line_chart, Series};
pub use sweep::{aggregate, seed_dir, sweep, sweep_config, MetricAggregate, SeedFailure, SweepReport};

/// Environment variable naming the default output root of the CLI.
pub const OUT_ENV: &str = "DSTLAB_OUT";
