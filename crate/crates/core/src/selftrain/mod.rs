//! Pseudo-labeling primitives and the baseline self-training algorithms.

mod algorithms;
mod flex;
mod model;
mod pseudo;
mod source;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tensor};
use crate::data::StepInputs;
use crate::error::{Error, Result};

pub use algorithms::{
    build_baseline, classifier_step, ClassifierTrainer, MutualLearning, TrainSettings, UnlabeledView,
};
pub(crate) use algorithms::{restep, round_sgd, Rounds};
pub use flex::{flexmatch_lite_thresholds, FlexWindow};
pub use model::{eval_logits, Classifier, HeadView, ModelSpec, Predictor};
pub use pseudo::{
    pseudo_label, pseudo_label_from_logits, supervised_loss, unlabeled_loss, PseudoBatchRecord, PseudoLabelPolicy,
    CLAMP_EPS,
};
pub use source::LabelSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Supervised,
    PseudoLabel,
    FixMatch,
    FlexMatchLite,
    MeanTeacher,
    NoisyStudent,
    MutualLearning,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Supervised => "supervised",
            Self::PseudoLabel => "pseudo_label",
            Self::FixMatch => "fix_match",
            Self::FlexMatchLite => "flex_match_lite",
            Self::MeanTeacher => "mean_teacher",
            Self::NoisyStudent => "noisy_student",
            Self::MutualLearning => "mutual_learning",
        }
    }
}

/// Algorithm choice and its hyperparameters. With `debiased` set, the base
/// algorithm only decides where pseudo labels come from and the debiased
/// trainer decides how they are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    pub debiased: bool,
    pub lambda: f64,
    pub tau: f64,
    pub ema_decay: f64,
    /// Total rounds, the supervised round included.
    pub rounds: usize,
    /// Batches in the FlexMatch-lite learning-status window.
    pub flex_window: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            kind: AlgorithmKind::FixMatch,
            debiased: false,
            lambda: 1.0,
            tau: 0.7,
            ema_decay: 0.999,
            rounds: 4,
            flex_window: 100,
        }
    }
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(
                "lambda",
                format!("{} must be finite and >= 0", self.lambda),
            ));
        }
        PseudoLabelPolicy::new(self.tau)?;
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::config("ema_decay", format!("{} outside (0, 1)", self.ema_decay)));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.flex_window == 0 {
            return Err(Error::config("flex_window", "must be at least 1"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.debiased {
            format!("dst_{}", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }
}

/// Split of a run into equal rounds; the last round absorbs the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundPlan {
    pub rounds: usize,
    pub total_steps: usize,
}

impl RoundPlan {
    pub fn new(rounds: usize, total_steps: usize) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if total_steps < rounds {
            return Err(Error::config(
                "rounds",
                format!("{rounds} rounds do not fit in {total_steps} steps"),
            ));
        }
        Ok(Self { rounds, total_steps })
    }

    fn base_len(&self) -> usize {
        self.total_steps / self.rounds
    }

    pub fn round_of(&self, step: usize) -> usize {
        (step / self.base_len()).min(self.rounds - 1)
    }

    pub fn start_of(&self, round: usize) -> usize {
        round * self.base_len()
    }

    pub fn len_of(&self, round: usize) -> usize {
        if round + 1 == self.rounds {
            self.total_steps - self.start_of(round)
        } else {
            self.base_len()
        }
    }

    /// Whether `step` is the last step of its round.
    pub fn is_round_end(&self, step: usize) -> bool {
        let r = self.round_of(step);
        step + 1 == self.start_of(r) + self.len_of(r)
    }
}

/// What one training step reports to the harness.
#[derive(Debug, Clone, Default)]
pub struct StepMetrics {
    pub loss_sup: f64,
    /// Unlabeled-loss value; `None` when the term was not computed.
    pub loss_pseudo: Option<f64>,
    /// Adversarial term `T`; `None` when it was not active.
    pub loss_adv: Option<f64>,
    pub record: Option<PseudoBatchRecord>,
    /// Fraction of retained rows on which the worst-case head disagrees with
    /// the pseudo label.
    pub worst_disagreement: Option<f64>,
    pub lr: f64,
    pub round: usize,
    /// Why the adversarial term was skipped, if it was.
    pub adv_skipped: Option<&'static str>,
}

impl StepMetrics {
    pub fn retained_count(&self) -> usize {
        self.record.as_ref().map_or(0, PseudoBatchRecord::retained_count)
    }
}

/// A self-training algorithm driven one joint batch at a time.
pub trait SelfTrainer {
    fn name(&self) -> String;

    fn train_step(&mut self, inputs: &StepInputs, step: usize) -> Result<StepMetrics>;

    /// Eval-mode logits of the inference model.
    fn eval_logits(&self, x: &Tensor) -> Result<Tensor>;

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.eval_logits(x)?.argmax_rows())
    }

    /// Parameters of the inference model.
    fn inference_params(&self) -> Vec<Param>;

    fn round_plan(&self) -> Option<RoundPlan> {
        None
    }
}

pub(crate) fn ensure_finite(value: f64, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}
