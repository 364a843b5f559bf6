use std::fs;
use std::path::{Path, PathBuf};

use super::run::{parse_cell, read_summary};
use super::svg::{line_chart, Series};
use crate::error::{Error, Result};

/// Parsed `metrics.csv` of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r.get(j).and_then(|c| parse_cell(c))).collect())
    }

    pub fn points(&self, metric: &str) -> Vec<(f64, f64)> {
        let (Some(steps), Some(values)) = (self.column("step"), self.column(metric)) else {
            return Vec::new();
        };
        steps
            .into_iter()
            .zip(values)
            .filter_map(|(s, v)| Some((s?, v?)))
            .collect()
    }
}

/// Metrics drawn as overlays, with their chart titles.
pub const OVERLAY_METRICS: [(&str, &str); 5] = [
    ("acc", "Evaluation accuracy"),
    ("pl_quantity", "Pseudo-label quantity"),
    ("pl_quality", "Pseudo-label quality"),
    ("imbalance_ratio", "Class imbalance ratio"),
    ("loss_adv", "Adversarial term"),
];

/// Columns of `comparison.csv`, after the run name and algorithm.
const FINAL_COLUMNS: [&str; 9] = [
    "step",
    "acc",
    "worst10",
    "worst20",
    "imbalance_ratio",
    "pl_quantity",
    "pl_quality",
    "loss_adv",
    "best_acc",
];

fn run_names(dirs: &[PathBuf]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for d in dirs {
        let base = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| d.display().to_string());
        let mut name = base.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{base}#{k}");
            k += 1;
        }
        names.push(name);
    }
    names
}

fn header_diff(first: &[String], other: &[String]) -> (Vec<String>, Vec<String>) {
    let missing = first.iter().filter(|h| !other.contains(h)).cloned().collect();
    let extra = other.iter().filter(|h| !first.contains(h)).cloned().collect();
    (missing, extra)
}

/// Writes `comparison.csv` (final metrics per run) and overlay charts under
/// `out/charts`. Returns the comparison rows.
pub fn compare(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<Vec<String>>> {
    if run_dirs.len() < 2 {
        return Err(Error::config("runs", "need at least two run directories"));
    }
    let tables = run_dirs
        .iter()
        .map(|d| MetricsTable::read(&d.join("metrics.csv")))
        .collect::<Result<Vec<_>>>()?;
    for (d, t) in run_dirs.iter().zip(&tables).skip(1) {
        if t.header != tables[0].header {
            let (missing, extra) = header_diff(&tables[0].header, &t.header);
            return Err(Error::HeaderMismatch {
                path: d.join("metrics.csv"),
                missing,
                extra,
            });
        }
    }
    let names = run_names(run_dirs);
    fs::create_dir_all(out.join("charts")).map_err(|e| Error::io(out, e))?;

    let mut header = vec!["run".to_string(), "algorithm".to_string()];
    header.extend(FINAL_COLUMNS.iter().map(|c| c.to_string()));
    let mut rows = Vec::new();
    for ((dir, t), name) in run_dirs.iter().zip(&tables).zip(&names) {
        let algorithm = read_summary(dir).map(|s| s.algorithm).unwrap_or_else(|_| "n/a".into());
        let mut row = vec![name.clone(), algorithm];
        let last = t.rows.last();
        for c in &FINAL_COLUMNS[..FINAL_COLUMNS.len() - 1] {
            let j = t.header.iter().position(|h| h == c);
            row.push(
                j.and_then(|j| last.and_then(|r| r.get(j)).cloned())
                    .unwrap_or_else(|| "n/a".into()),
            );
        }
        let best = t
            .column("acc")
            .unwrap_or_default()
            .into_iter()
            .flatten()
            .reduce(f64::max);
        row.push(super::run::cell(best));
        rows.push(row);
    }
    let path = out.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(&header)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for (metric, title) in OVERLAY_METRICS {
        let series: Vec<Series> = tables
            .iter()
            .zip(&names)
            .map(|(t, n)| Series {
                name: n.clone(),
                points: t.points(metric),
            })
            .collect();
        let svg = line_chart(title, "step", metric, &series);
        let p = out.join("charts").join(format!("{metric}.svg"));
        fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    }
    Ok(rows)
}
