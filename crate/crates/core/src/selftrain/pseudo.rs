use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Head, Mode};

use super::model::Predictor;

/// Probability floor inside every cross-entropy.
pub const CLAMP_EPS: f64 = 1e-7;

/// Confidence thresholding of pseudo labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelPolicy {
    tau: f64,
    per_class_tau: Option<Vec<f64>>,
}

impl PseudoLabelPolicy {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::config("tau", format!("{tau} outside (0, 1]")));
        }
        Ok(Self {
            tau,
            per_class_tau: None,
        })
    }

    /// Per-class thresholds may only relax the global one.
    pub fn with_per_class(mut self, per_class: Vec<f64>) -> Result<Self> {
        if let Some(c) = per_class.iter().position(|&t| !(t > 0.0 && t <= self.tau)) {
            return Err(Error::config(
                "per_class_tau",
                format!("class {c} threshold {} outside (0, {}]", per_class[c], self.tau),
            ));
        }
        self.per_class_tau = Some(per_class);
        Ok(self)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn per_class_tau(&self) -> Option<&[f64]> {
        self.per_class_tau.as_deref()
    }

    pub fn threshold(&self, class: usize) -> f64 {
        self.per_class_tau
            .as_ref()
            .and_then(|t| t.get(class).copied())
            .unwrap_or(self.tau)
    }
}

/// Pseudo-labeling outcome for one unlabeled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatchRecord {
    pub predicted_class: Vec<usize>,
    pub confidence: Vec<f64>,
    pub retained: Vec<bool>,
    /// Unlabeled pool indices, row-aligned with the other fields.
    pub indices: Vec<usize>,
}

impl PseudoBatchRecord {
    pub fn len(&self) -> usize {
        self.predicted_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted_class.is_empty()
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }

    /// Cross-entropy targets: the class when retained, `-1` otherwise.
    pub fn targets(&self) -> Vec<i64> {
        self.predicted_class
            .iter()
            .zip(&self.retained)
            .map(|(&c, &r)| if r { c as i64 } else { -1 })
            .collect()
    }

    pub fn retained_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for (&c, &r) in self.predicted_class.iter().zip(&self.retained) {
            if r && c < classes {
                h[c] += 1;
            }
        }
        h
    }
}

/// Thresholded argmax labeling from eval-mode logits.
pub fn pseudo_label_from_logits(
    logits: &Tensor,
    policy: &PseudoLabelPolicy,
    indices: &[usize],
) -> Result<PseudoBatchRecord> {
    if logits.rows() != indices.len() {
        return Err(Error::Shape {
            op: "pseudo_label",
            expected: vec![indices.len()],
            got: logits.shape().to_vec(),
        });
    }
    let probs = logits.softmax_rows();
    let predicted_class = probs.argmax_rows();
    let confidence: Vec<f64> = predicted_class
        .iter()
        .enumerate()
        .map(|(r, &c)| probs.get(r, c))
        .collect();
    let retained = predicted_class
        .iter()
        .zip(&confidence)
        .map(|(&c, &p)| p >= policy.threshold(c))
        .collect();
    Ok(PseudoBatchRecord {
        predicted_class,
        confidence,
        retained,
        indices: indices.to_vec(),
    })
}

/// Labels a weak-view batch with `labeler` in eval mode. The forward runs on
/// its own tape, so the labels are constants to every training loss.
pub fn pseudo_label(
    labeler: &(impl Predictor + ?Sized),
    weak: &Tensor,
    policy: &PseudoLabelPolicy,
    indices: &[usize],
) -> Result<PseudoBatchRecord> {
    pseudo_label_from_logits(&labeler.eval_logits(weak)?, policy, indices)
}

/// Mean cross-entropy of `head` on already-computed labeled features.
pub fn supervised_loss(
    tape: &mut Tape,
    head: &Head,
    features: Var,
    labels: &[usize],
    mode: &mut Mode<'_>,
    eps: f64,
) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Contract("supervised loss on an empty batch".into()));
    }
    let z = head.forward(tape, features, mode)?;
    let targets: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    tape.softmax_cross_entropy(z, &targets, labels.len(), eps)
}

/// Cross-entropy against retained pseudo labels, summed and divided by the
/// full unlabeled batch size.
pub fn unlabeled_loss(
    tape: &mut Tape,
    head: &Head,
    features: Var,
    record: &PseudoBatchRecord,
    mode: &mut Mode<'_>,
    eps: f64,
) -> Result<Var> {
    let rows = tape.value(features).rows();
    if rows != record.len() {
        return Err(Error::Shape {
            op: "unlabeled_loss",
            expected: vec![record.len()],
            got: vec![rows],
        });
    }
    let z = head.forward(tape, features, mode)?;
    tape.softmax_cross_entropy(z, &record.targets(), rows.max(1), eps)
}
