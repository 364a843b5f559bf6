//! Bias instrumentation: per-class error, class imbalance ratio, worst-k
//! accuracy, pseudo-label quantity/quality and the data/training bias split.
//!
//! This is the only module that can read the hidden labels of the unlabeled
//! pool: [`HiddenLabels::reveal`] needs a [`GroundTruthKey`], and only code in
//! this module can construct one.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::{HiddenLabels, LabeledExample};
use crate::error::{Error, Result};
use crate::selftrain::PseudoBatchRecord;

/// Capability to read hidden ground truth. Not constructible outside this module.
#[derive(Debug)]
pub struct GroundTruthKey(());

const KEY: GroundTruthKey = GroundTruthKey(());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// `errors_k / count_k` for each class.
    pub per_class_error: Vec<f64>,
    pub per_class_count: Vec<usize>,
    pub accuracy: f64,
}

impl ClassStats {
    pub fn num_classes(&self) -> usize {
        self.per_class_error.len()
    }

    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.per_class_error.iter().map(|e| 1.0 - e).collect()
    }

    pub fn is_balanced(&self) -> bool {
        self.per_class_count.windows(2).all(|w| w[0] == w[1])
    }

    pub fn macro_accuracy(&self) -> f64 {
        let acc = self.per_class_accuracy();
        acc.iter().sum::<f64>() / acc.len().max(1) as f64
    }
}

/// Exact per-class error counting against ground truth.
pub fn per_class_error(predictions: &[usize], truth: &[usize], num_classes: usize) -> Result<ClassStats> {
    if predictions.len() != truth.len() {
        return Err(Error::Metrics(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut count = vec![0usize; num_classes];
    let mut wrong = vec![0usize; num_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if t >= num_classes {
            return Err(Error::Metrics(format!("label {t} outside {num_classes} classes")));
        }
        count[t] += 1;
        if p != t {
            wrong[t] += 1;
        }
    }
    if let Some(c) = count.iter().position(|&n| n == 0) {
        return Err(Error::Metrics(format!("class {c} absent from the evaluation set")));
    }
    let total_wrong: usize = wrong.iter().sum();
    Ok(ClassStats {
        per_class_error: wrong.iter().zip(&count).map(|(&w, &n)| w as f64 / n as f64).collect(),
        per_class_count: count,
        accuracy: 1.0 - total_wrong as f64 / truth.len() as f64,
    })
}

/// Class statistics on a labeled evaluation set.
pub fn evaluate(predictions: &[usize], eval: &[LabeledExample], num_classes: usize) -> Result<ClassStats> {
    let truth: Vec<usize> = eval.iter().map(|e| e.label).collect();
    per_class_error(predictions, &truth, num_classes)
}

/// Class statistics of predictions over the unlabeled pool, joined with its
/// hidden labels.
pub fn pool_class_stats(predictions: &[usize], hidden: &HiddenLabels, num_classes: usize) -> Result<ClassStats> {
    per_class_error(predictions, hidden.reveal(&KEY), num_classes)
}

/// `max_c N(c) / min_c N(c)` over prediction counts; `+∞` if some class is
/// never predicted.
pub fn imbalance_ratio(predictions: &[usize], num_classes: usize) -> f64 {
    let mut counts = vec![0usize; num_classes];
    for &p in predictions {
        if p < num_classes {
            counts[p] += 1;
        }
    }
    ratio_of_counts(&counts)
}

fn ratio_of_counts(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    if min == 0 {
        f64::INFINITY
    } else {
        max as f64 / min as f64
    }
}

/// Mean of the `k` smallest per-class accuracies.
pub fn worst_k_accuracy(stats: &ClassStats, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Metrics("worst-k needs k >= 1".into()));
    }
    let mut acc: Vec<(f64, usize)> = stats
        .per_class_accuracy()
        .into_iter()
        .enumerate()
        .map(|(c, a)| (a, c))
        .collect();
    if k > acc.len() {
        return Err(Error::Metrics(format!("k = {k} exceeds {} classes", acc.len())));
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(acc[..k].iter().map(|(a, _)| a).sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelStats {
    pub examined: usize,
    pub retained: usize,
    /// Retained fraction.
    pub quantity: f64,
    /// Accuracy among retained pseudo labels; `None` when nothing was retained.
    pub quality: Option<f64>,
    pub per_class_retained: Vec<usize>,
    /// Imbalance ratio of the retained pseudo-label histogram.
    pub imbalance_ratio: f64,
}

/// Quantity and quality of pseudo labels over a set of batch records.
pub fn pseudo_stats<'a>(
    records: impl IntoIterator<Item = &'a PseudoBatchRecord>,
    hidden: &HiddenLabels,
    num_classes: usize,
) -> Result<PseudoLabelStats> {
    let truth = hidden.reveal(&KEY);
    let mut examined = 0;
    let mut retained = 0;
    let mut correct = 0;
    let mut hist = vec![0usize; num_classes];
    for r in records {
        examined += r.len();
        for i in 0..r.len() {
            if !r.retained[i] {
                continue;
            }
            let idx = r.indices[i];
            let t = *truth
                .get(idx)
                .ok_or_else(|| Error::Metrics(format!("pool index {idx} outside hidden labels")))?;
            retained += 1;
            let p = r.predicted_class[i];
            if p < num_classes {
                hist[p] += 1;
            }
            if p == t {
                correct += 1;
            }
        }
    }
    Ok(PseudoLabelStats {
        examined,
        retained,
        quantity: if examined == 0 {
            0.0
        } else {
            retained as f64 / examined as f64
        },
        quality: (retained > 0).then(|| correct as f64 / retained as f64),
        imbalance_ratio: ratio_of_counts(&hist),
        per_class_retained: hist,
    })
}

/// Fixed-length window of the most recent batch records.
#[derive(Debug, Clone)]
pub struct PseudoWindow {
    capacity: usize,
    records: VecDeque<PseudoBatchRecord>,
}

impl PseudoWindow {
    pub const DEFAULT_BATCHES: usize = 100;

    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, record: PseudoBatchRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn records(&self) -> impl Iterator<Item = &PseudoBatchRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stats(&self, hidden: &HiddenLabels, num_classes: usize) -> Result<PseudoLabelStats> {
        pseudo_stats(self.records.iter(), hidden, num_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// Per-class error of the pseudolabeler trained on labeled data only.
    pub data_bias: Vec<f64>,
    /// Change in per-class error brought by self-training.
    pub training_bias: Vec<f64>,
    pub total: Vec<f64>,
}

/// Splits the final per-class error into data bias (error of the initial
/// pseudolabeler, since the ideal classifier has zero error) and training
/// bias (final minus initial; negative where self-training helped).
pub fn bias_decomposition(init: &ClassStats, last: &ClassStats) -> Result<BiasReport> {
    if init.num_classes() != last.num_classes() {
        return Err(Error::Metrics(format!(
            "class count mismatch: {} vs {}",
            init.num_classes(),
            last.num_classes()
        )));
    }
    let data_bias = init.per_class_error.clone();
    let training_bias: Vec<f64> = last
        .per_class_error
        .iter()
        .zip(&data_bias)
        .map(|(f, i)| f - i)
        .collect();
    let total = data_bias.iter().zip(&training_bias).map(|(d, t)| d + t).collect();
    Ok(BiasReport {
        data_bias,
        training_bias,
        total,
    })
}
