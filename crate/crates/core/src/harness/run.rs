use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::svg::{line_chart, Series};
use crate::autodiff::Tensor;
use crate::data::{make_ssl_split, JointBatcher, SslSplit, StepInputs};
use crate::dst::DebiasedTrainer;
use crate::error::{Error, Result};
use crate::metrics::{
    bias_decomposition, evaluate, imbalance_ratio, pseudo_stats, worst_k_accuracy, BiasReport, ClassStats, PseudoWindow,
};
use crate::rng::{stream, Stream};
use crate::selftrain::{
    build_baseline, AlgorithmConfig, AlgorithmKind, PseudoBatchRecord, SelfTrainer, StepMetrics, TrainSettings,
};

/// Column order of `metrics.csv`.
pub const METRICS_COLUMNS: [&str; 11] = [
    "step",
    "acc",
    "worst10",
    "worst20",
    "imbalance_ratio",
    "pl_quantity",
    "pl_quality",
    "loss_sup",
    "loss_pseudo",
    "loss_adv",
    "lr",
];

/// Column order of `steps.csv`.
pub const STEP_COLUMNS: [&str; 10] = [
    "step",
    "round",
    "loss_sup",
    "loss_pseudo",
    "loss_adv",
    "retained_count",
    "worst_disagreement_rate",
    "lr",
    "retained_per_class",
    "adv_skipped",
];

/// Formats a metric cell: `n/a` for missing, `inf` for infinite.
pub fn cell(v: Option<f64>) -> String {
    match v {
        None => "n/a".into(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-inf".into(),
        Some(x) => x.to_string(),
    }
}

/// Inverse of [`cell`].
pub fn parse_cell(s: &str) -> Option<f64> {
    match s {
        "n/a" | "" => None,
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse().ok(),
    }
}

pub(crate) mod ratio {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::cell(Some(*v)))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => super::parse_cell(&t).ok_or_else(|| serde::de::Error::custom(format!("bad ratio `{t}`"))),
        }
    }
}

/// One evaluation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub acc: f64,
    pub worst10: f64,
    pub worst20: f64,
    pub imbalance_ratio: f64,
    pub pl_quantity: Option<f64>,
    pub pl_quality: Option<f64>,
    pub loss_sup: f64,
    pub loss_pseudo: Option<f64>,
    pub loss_adv: Option<f64>,
    pub lr: f64,
}

impl MetricsRow {
    fn cells(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            cell(Some(self.acc)),
            cell(Some(self.worst10)),
            cell(Some(self.worst20)),
            cell(Some(self.imbalance_ratio)),
            cell(self.pl_quantity),
            cell(self.pl_quality),
            cell(Some(self.loss_sup)),
            cell(self.loss_pseudo),
            cell(self.loss_adv),
            cell(Some(self.lr)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSummary {
    #[serde(with = "ratio")]
    pub initial: f64,
    #[serde(with = "ratio")]
    pub last: f64,
    /// Largest finite value seen; `None` if none was finite.
    pub max_finite: Option<f64>,
    pub infinite_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub last_step: usize,
    pub acc: f64,
    pub worst10: f64,
    #[serde(with = "ratio")]
    pub imbalance_ratio: f64,
    pub per_class_accuracy: Vec<f64>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: String,
    pub seed: u64,
    pub steps_completed: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Accuracy of the single worst class.
    pub worst1: f64,
    pub worst10: f64,
    pub worst20: f64,
    #[serde(with = "ratio")]
    pub final_imbalance_ratio: f64,
    pub imbalance: ImbalanceSummary,
    /// Pseudo-label quality pooled over the trailing `quality_tail_steps`.
    pub pl_quality_tail: Option<f64>,
    pub pl_quantity_tail: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub metrics_csv: String,
    pub steps_csv: String,
    pub bias_report: String,
    pub charts: Vec<String>,
    pub aborted: Option<AbortInfo>,
    pub wall_time_secs: f64,
}

/// Contents of `bias_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasArtifact {
    #[serde(flatten)]
    pub report: BiasReport,
    /// `labeled_only_reference` or `first_evaluation`.
    pub data_bias_source: String,
    pub reference_steps: usize,
    pub init_per_class_accuracy: Vec<f64>,
    pub final_per_class_accuracy: Vec<f64>,
}

/// Split plus trainer settings derived from a config.
pub struct Prepared {
    pub split: SslSplit,
    pub settings: TrainSettings,
    pub eval_x: Tensor,
}

pub fn prepare(config: &RunConfig, base: Option<&Path>) -> Result<Prepared> {
    config.validate()?;
    let ds = config.dataset.load(config.seed, base)?;
    let sp = &config.split;
    let mut split = make_ssl_split(
        &ds,
        sp.k_per_class,
        sp.eval_fraction,
        sp.include_labeled_in_unlabeled,
        config.seed,
    )?;
    if sp.standardize {
        split.standardize();
    }
    let settings = TrainSettings {
        spec: config.model,
        input_dim: split.feature_dim(),
        classes: split.num_classes(),
        sgd: config.optimizer.sgd(config.total_steps),
        clip_norm: config.optimizer.clip_norm,
        total_steps: config.total_steps,
        seed: config.seed,
    };
    let rows: Vec<Vec<f64>> = split.eval().iter().map(|e| e.features.clone()).collect();
    let eval_x = Tensor::from_rows(&rows)?;
    Ok(Prepared {
        split,
        settings,
        eval_x,
    })
}

pub fn build_trainer(config: &RunConfig, settings: &TrainSettings) -> Result<Box<dyn SelfTrainer>> {
    if config.algorithm.debiased {
        Ok(Box::new(DebiasedTrainer::build(
            &config.algorithm,
            config.dst,
            settings,
        )?))
    } else {
        build_baseline(&config.algorithm, settings)
    }
}

/// Feeds `steps` joint batches to `trainer`, with batch order and
/// augmentation drawn from the run seed's streams. `observe` sees every step.
pub fn drive(
    trainer: &mut dyn SelfTrainer,
    split: &SslSplit,
    config: &RunConfig,
    steps: usize,
    mut observe: impl FnMut(usize, &StepMetrics, &dyn SelfTrainer) -> Result<()>,
) -> Result<()> {
    let mut batcher = JointBatcher::for_split(split, config.batch, stream(config.seed, Stream::Shuffle))?;
    let mut aug = stream(config.seed, Stream::Augment);
    for step in 0..steps {
        let batch = batcher.next_joint_batch();
        let inputs = StepInputs::assemble(split, &batch, &config.augmentation, &mut aug)?;
        let m = trainer.train_step(&inputs, step)?;
        observe(step, &m, trainer)?;
    }
    Ok(())
}

fn class_stats(trainer: &dyn SelfTrainer, p: &Prepared) -> Result<ClassStats> {
    let preds = trainer.predict(&p.eval_x)?;
    evaluate(&preds, p.split.eval(), p.split.num_classes())
}

fn labeled_only_reference(config: &RunConfig, p: &Prepared) -> Result<ClassStats> {
    let steps = config.bias_reference_steps;
    let algo = AlgorithmConfig {
        kind: AlgorithmKind::Supervised,
        debiased: false,
        ..config.algorithm.clone()
    };
    let settings = TrainSettings {
        sgd: config.optimizer.sgd(steps),
        total_steps: steps,
        ..p.settings.clone()
    };
    let mut reference = build_baseline(&algo, &settings)?;
    drive(reference.as_mut(), &p.split, config, steps, |_, _, _| Ok(()))?;
    class_stats(reference.as_ref(), p)
}

#[derive(Default)]
struct Interval {
    sup: f64,
    pseudo: f64,
    n_pseudo: usize,
    adv: f64,
    n_adv: usize,
    steps: usize,
}

impl Interval {
    fn add(&mut self, m: &StepMetrics) {
        self.steps += 1;
        self.sup += m.loss_sup;
        if let Some(v) = m.loss_pseudo {
            self.pseudo += v;
            self.n_pseudo += 1;
        }
        if let Some(v) = m.loss_adv {
            self.adv += v;
            self.n_adv += 1;
        }
    }

    fn mean(sum: f64, n: usize) -> Option<f64> {
        (n > 0).then(|| sum / n as f64)
    }
}

fn step_cells(step: usize, m: &StepMetrics, classes: usize) -> Vec<String> {
    let hist = m
        .record
        .as_ref()
        .map(|r| {
            r.retained_histogram(classes)
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(";")
        })
        .unwrap_or_else(|| "n/a".into());
    vec![
        step.to_string(),
        m.round.to_string(),
        cell(Some(m.loss_sup)),
        cell(m.loss_pseudo),
        cell(m.loss_adv),
        m.retained_count().to_string(),
        cell(m.worst_disagreement),
        cell(Some(m.lr)),
        hist,
        m.adv_skipped.unwrap_or("").to_string(),
    ]
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn series(name: &str, rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> Option<f64>) -> Series {
    Series {
        name: name.into(),
        points: rows.iter().filter_map(|r| f(r).map(|y| (r.step as f64, y))).collect(),
    }
}

fn write_charts(dir: &Path, rows: &[MetricsRow], steps: &[(usize, Option<f64>)]) -> Result<Vec<String>> {
    let charts_dir = dir.join("charts");
    fs::create_dir_all(&charts_dir).map_err(|e| Error::io(&charts_dir, e))?;
    let mut smoothed = Vec::new();
    for chunk in steps.chunks(50) {
        let vals: Vec<f64> = chunk.iter().filter_map(|(_, v)| *v).collect();
        if !vals.is_empty() {
            let x = chunk.last().map_or(0, |(s, _)| s + 1) as f64;
            smoothed.push((x, vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    let charts = [
        (
            "accuracy.svg",
            line_chart(
                "Evaluation accuracy",
                "step",
                "accuracy",
                &[
                    series("acc", rows, |r| Some(r.acc)),
                    series("worst10", rows, |r| Some(r.worst10)),
                ],
            ),
        ),
        (
            "pseudo_labels.svg",
            line_chart(
                "Pseudo labels",
                "step",
                "fraction",
                &[
                    series("quantity", rows, |r| r.pl_quantity),
                    series("quality", rows, |r| r.pl_quality),
                ],
            ),
        ),
        (
            "imbalance.svg",
            line_chart(
                "Class imbalance ratio",
                "step",
                "I",
                &[series("I", rows, |r| Some(r.imbalance_ratio))],
            ),
        ),
        (
            "losses.svg",
            line_chart(
                "Losses",
                "step",
                "loss",
                &[
                    series("loss_sup", rows, |r| Some(r.loss_sup)),
                    series("loss_pseudo", rows, |r| r.loss_pseudo),
                    series("loss_adv", rows, |r| r.loss_adv),
                ],
            ),
        ),
        (
            "worst_disagreement.svg",
            line_chart(
                "Worst-case head disagreement",
                "step",
                "rate",
                &[Series {
                    name: "disagreement".into(),
                    points: smoothed,
                }],
            ),
        ),
    ];
    let mut names = Vec::new();
    for (name, svg) in charts {
        write_text(&charts_dir.join(name), &svg)?;
        names.push(format!("charts/{name}"));
    }
    Ok(names)
}

/// Runs `config` and writes its artifacts into `out_dir`. Relative dataset
/// paths resolve against `base`.
pub fn run_config(config: &RunConfig, out_dir: &Path, base: Option<&Path>) -> Result<RunReport> {
    let started = Instant::now();
    let prepared = prepare(config, base)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join("config.resolved.json"), &(config.to_json() + "\n"))?;

    let p = &prepared;
    let classes = p.split.num_classes();
    let mut trainer = build_trainer(config, &p.settings)?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut step_rows: Vec<Vec<String>> = Vec::new();
    let mut disagreement: Vec<(usize, Option<f64>)> = Vec::new();
    let mut window = PseudoWindow::new(config.pseudo_window);
    let mut tail: Vec<PseudoBatchRecord> = Vec::new();
    let tail_start = config.total_steps.saturating_sub(config.quality_tail_steps);
    let mut interval = Interval::default();
    let mut rounds: Vec<RoundReport> = Vec::new();
    let mut first_stats: Option<ClassStats> = None;
    let mut last_stats: Option<ClassStats> = None;
    let plan = trainer.round_plan();

    let outcome = drive(trainer.as_mut(), &p.split, config, config.total_steps, |step, m, t| {
        interval.add(m);
        step_rows.push(step_cells(step, m, classes));
        disagreement.push((step, m.worst_disagreement));
        if let Some(r) = &m.record {
            window.push(r.clone());
            if step >= tail_start {
                tail.push(r.clone());
            }
        }
        let done = step + 1;
        let eval_now = done % config.eval_every == 0 || done == config.total_steps;
        let round_end = plan.is_some_and(|pl| pl.is_round_end(step));
        if !(eval_now || round_end) {
            return Ok(());
        }
        let stats = class_stats(t, p)?;
        let preds = t.predict(&p.eval_x)?;
        let ir = imbalance_ratio(&preds, classes);
        let w10 = worst_k_accuracy(&stats, 10.min(classes))?;
        if round_end {
            rounds.push(RoundReport {
                round: m.round,
                last_step: done,
                acc: stats.accuracy,
                worst10: w10,
                imbalance_ratio: ir,
                per_class_accuracy: stats.per_class_accuracy(),
            });
        }
        if eval_now {
            let ws = window.stats(p.split.hidden_labels(), classes)?;
            rows.push(MetricsRow {
                step: done,
                acc: stats.accuracy,
                worst10: w10,
                worst20: worst_k_accuracy(&stats, 20.min(classes))?,
                imbalance_ratio: ir,
                pl_quantity: (!window.is_empty()).then_some(ws.quantity),
                pl_quality: ws.quality,
                loss_sup: interval.sup / interval.steps.max(1) as f64,
                loss_pseudo: Interval::mean(interval.pseudo, interval.n_pseudo),
                loss_adv: Interval::mean(interval.adv, interval.n_adv),
                lr: m.lr,
            });
            interval = Interval::default();
            if first_stats.is_none() {
                first_stats = Some(stats.clone());
            }
            last_stats = Some(stats);
        }
        Ok(())
    });

    let aborted = match outcome {
        Ok(()) => None,
        Err(Error::NonFinite { step }) => Some(AbortInfo {
            step,
            reason: format!("non-finite loss at step {step}"),
        }),
        Err(e) => return Err(e),
    };

    write_table(
        &out_dir.join("metrics.csv"),
        &METRICS_COLUMNS,
        &rows.iter().map(MetricsRow::cells).collect::<Vec<_>>(),
    )?;
    write_table(&out_dir.join("steps.csv"), &STEP_COLUMNS, &step_rows)?;
    write_json(&out_dir.join("rounds.json"), &rounds)?;
    let charts = write_charts(out_dir, &rows, &disagreement)?;

    let final_stats = match &last_stats {
        Some(s) => s.clone(),
        None => class_stats(trainer.as_ref(), p)?,
    };
    // A diverging reference falls back to the first evaluation.
    let reference = match config.bias_reference_steps {
        0 => None,
        _ => match labeled_only_reference(config, p) {
            Ok(s) => Some(s),
            Err(Error::NonFinite { .. }) => None,
            Err(e) => return Err(e),
        },
    };
    let (init_stats, source, ref_steps) = match reference {
        Some(s) => (s, "labeled_only_reference", config.bias_reference_steps),
        None => (
            first_stats.clone().unwrap_or_else(|| final_stats.clone()),
            "first_evaluation",
            0,
        ),
    };
    let bias = BiasArtifact {
        report: bias_decomposition(&init_stats, &final_stats)?,
        data_bias_source: source.into(),
        reference_steps: ref_steps,
        init_per_class_accuracy: init_stats.per_class_accuracy(),
        final_per_class_accuracy: final_stats.per_class_accuracy(),
    };
    write_json(&out_dir.join("bias_report.json"), &bias)?;

    let tail_stats = pseudo_stats(tail.iter(), p.split.hidden_labels(), classes)?;
    let finite: Vec<f64> = rows
        .iter()
        .map(|r| r.imbalance_ratio)
        .filter(|v| v.is_finite())
        .collect();
    let report = RunReport {
        algorithm: trainer.name(),
        seed: config.seed,
        steps_completed: step_rows.len(),
        final_accuracy: final_stats.accuracy,
        best_accuracy: rows.iter().map(|r| r.acc).fold(final_stats.accuracy, f64::max),
        worst1: worst_k_accuracy(&final_stats, 1)?,
        worst10: worst_k_accuracy(&final_stats, 10.min(classes))?,
        worst20: worst_k_accuracy(&final_stats, 20.min(classes))?,
        final_imbalance_ratio: rows.last().map_or(f64::INFINITY, |r| r.imbalance_ratio),
        imbalance: ImbalanceSummary {
            initial: rows.first().map_or(f64::INFINITY, |r| r.imbalance_ratio),
            last: rows.last().map_or(f64::INFINITY, |r| r.imbalance_ratio),
            max_finite: finite.iter().copied().reduce(f64::max),
            infinite_evals: rows.len() - finite.len(),
        },
        pl_quality_tail: tail_stats.quality,
        pl_quantity_tail: (tail_stats.examined > 0).then_some(tail_stats.quantity),
        per_class_accuracy: final_stats.per_class_accuracy(),
        metrics_csv: "metrics.csv".into(),
        steps_csv: "steps.csv".into(),
        bias_report: "bias_report.json".into(),
        charts,
        aborted: aborted.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&out_dir.join("summary.json"), &report)?;
    match aborted {
        Some(a) => Err(Error::NonFinite { step: a.step }),
        None => Ok(report),
    }
}

/// Loads `config_path`, optionally overrides the seed, and runs it.
pub fn run(config_path: impl AsRef<Path>, out_dir: impl AsRef<Path>, seed: Option<u64>) -> Result<RunReport> {
    let config_path = config_path.as_ref();
    let mut config = RunConfig::from_path(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    run_config(&config, out_dir.as_ref(), config_path.parent())
}

pub fn read_summary(dir: &Path) -> Result<RunReport> {
    let path: PathBuf = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
