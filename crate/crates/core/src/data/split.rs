use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::metrics::GroundTruthKey;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Training-facing view of an unlabeled example. There is no label accessor.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledExample {
    features: Vec<f64>,
}

impl UnlabeledExample {
    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Ground truth of the unlabeled pool, readable only through a key that the
/// metrics module alone can mint.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reveal(&self, _key: &GroundTruthKey) -> &[usize] {
        &self.0
    }
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Labeled subset, unlabeled pool and class-balanced evaluation set.
#[derive(Debug, Clone)]
pub struct SslSplit {
    labeled: Vec<LabeledExample>,
    unlabeled: Vec<UnlabeledExample>,
    hidden: HiddenLabels,
    eval: Vec<LabeledExample>,
    labeled_source: Vec<usize>,
    num_classes: usize,
    feature_dim: usize,
    k_per_class: usize,
    include_labeled_in_unlabeled: bool,
    grid: Option<(usize, usize)>,
}

/// Stratified split.
///
/// For each class the examples are shuffled with the split stream of `seed`;
/// the first `k_per_class` become labeled, the next
/// `round(eval_fraction · n / K)` go to evaluation and the rest are unlabeled.
/// The labeled subset therefore depends only on the dataset, `k_per_class` and
/// `seed`.
pub fn make_ssl_split(
    dataset: &Dataset,
    k_per_class: usize,
    eval_fraction: f64,
    include_labeled_in_unlabeled: bool,
    seed: u64,
) -> Result<SslSplit> {
    if k_per_class == 0 {
        return Err(Error::config("k_per_class", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(Error::config(
            "eval_fraction",
            format!("{eval_fraction} outside [0, 1)"),
        ));
    }
    let k = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in dataset.examples().iter().enumerate() {
        let label = e
            .label
            .ok_or_else(|| Error::Contract(format!("example {i} has no label to stratify on")))?;
        by_class[label].push(i);
    }
    let eval_per_class = (eval_fraction * dataset.len() as f64 / k as f64).round() as usize;
    for (class, idx) in by_class.iter().enumerate() {
        if idx.len() < k_per_class + eval_per_class {
            return Err(Error::Split {
                class,
                available: idx.len(),
                required: k_per_class + eval_per_class,
            });
        }
    }

    let mut rng = stream(seed, Stream::Split);
    let mut labeled_source = Vec::with_capacity(k * k_per_class);
    let mut eval_idx = Vec::new();
    let mut unlabeled_idx = Vec::new();
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
        labeled_source.extend_from_slice(&idx[..k_per_class]);
        eval_idx.extend_from_slice(&idx[k_per_class..k_per_class + eval_per_class]);
        unlabeled_idx.extend_from_slice(&idx[k_per_class + eval_per_class..]);
    }
    if include_labeled_in_unlabeled {
        unlabeled_idx.extend_from_slice(&labeled_source);
    }
    unlabeled_idx.sort_unstable();
    eval_idx.sort_unstable();

    let ex = dataset.examples();
    let labeled_of = |i: usize| LabeledExample {
        features: ex[i].features.clone(),
        label: ex[i].label.expect("checked above"),
    };
    Ok(SslSplit {
        labeled: labeled_source.iter().map(|&i| labeled_of(i)).collect(),
        unlabeled: unlabeled_idx
            .iter()
            .map(|&i| UnlabeledExample {
                features: ex[i].features.clone(),
            })
            .collect(),
        hidden: HiddenLabels(
            unlabeled_idx
                .iter()
                .map(|&i| ex[i].label.expect("checked above"))
                .collect(),
        ),
        eval: eval_idx.iter().map(|&i| labeled_of(i)).collect(),
        labeled_source,
        num_classes: k,
        feature_dim: dataset.feature_dim(),
        k_per_class,
        include_labeled_in_unlabeled,
        grid: dataset.grid(),
    })
}

impl SslSplit {
    pub fn labeled(&self) -> &[LabeledExample] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[UnlabeledExample] {
        &self.unlabeled
    }

    pub fn hidden_labels(&self) -> &HiddenLabels {
        &self.hidden
    }

    pub fn eval(&self) -> &[LabeledExample] {
        &self.eval
    }

    /// Dataset indices of the labeled subset, in draw order.
    pub fn labeled_source(&self) -> &[usize] {
        &self.labeled_source
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn k_per_class(&self) -> usize {
        self.k_per_class
    }

    pub fn include_labeled_in_unlabeled(&self) -> bool {
        self.include_labeled_in_unlabeled
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    /// Fits a [`Standardizer`] on the training pool (labeled plus unlabeled,
    /// never eval) and applies it to every part of the split.
    pub fn standardize(&mut self) -> Standardizer {
        let dup = self.include_labeled_in_unlabeled;
        let rows = self
            .unlabeled
            .iter()
            .map(|u| u.features.as_slice())
            .chain(self.labeled.iter().filter(|_| !dup).map(|l| l.features.as_slice()));
        let st = Standardizer::fit(rows, self.feature_dim);
        self.labeled.iter_mut().for_each(|e| st.apply(&mut e.features));
        self.unlabeled.iter_mut().for_each(|e| st.apply(&mut e.features));
        self.eval.iter_mut().for_each(|e| st.apply(&mut e.features));
        st
    }
}
