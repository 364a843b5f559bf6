use crate::autodiff::{Param, Tensor};
use crate::error::Result;
use crate::nn::{EmaShadow, Module};

use super::flex::FlexWindow;
use super::model::{Classifier, Predictor};
use super::pseudo::{pseudo_label, PseudoBatchRecord, PseudoLabelPolicy};

/// Where the pseudo labels of a step come from.
#[derive(Debug, Clone)]
pub enum LabelSource {
    /// No pseudo labels.
    Nothing,
    /// The model being trained.
    Current,
    /// The model being trained, with per-class curriculum thresholds.
    Flex(FlexWindow),
    /// An exponential moving average of the model being trained.
    Ema { teacher: Classifier, shadow: EmaShadow },
    /// A frozen copy from the previous round; none during round zero.
    PreviousRound(Option<Classifier>),
}

impl LabelSource {
    pub fn ema(current: &Classifier, decay: f64) -> Result<Self> {
        let teacher = current.deep_copy();
        let shadow = EmaShadow::new(&current.params(), decay)?;
        Ok(Self::Ema { teacher, shadow })
    }

    /// The threshold policy in force for the next labeling.
    pub fn effective_policy(&self, base: &PseudoLabelPolicy) -> Result<PseudoLabelPolicy> {
        match self {
            Self::Flex(w) => base.clone().with_per_class(w.thresholds(base.tau())),
            _ => Ok(base.clone()),
        }
    }

    pub fn label(
        &self,
        current: &dyn Predictor,
        weak: &Tensor,
        policy: &PseudoLabelPolicy,
        indices: &[usize],
    ) -> Result<Option<PseudoBatchRecord>> {
        let labeler: &dyn Predictor = match self {
            Self::Nothing | Self::PreviousRound(None) => return Ok(None),
            Self::Current | Self::Flex(_) => current,
            Self::Ema { teacher, .. } => teacher,
            Self::PreviousRound(Some(t)) => t,
        };
        let policy = self.effective_policy(policy)?;
        pseudo_label(labeler, weak, &policy, indices).map(Some)
    }

    /// Bookkeeping after the optimizer step; `current` are the parameters the
    /// EMA teacher tracks.
    pub fn after_step(&mut self, record: Option<&PseudoBatchRecord>, classes: usize, current: &[Param]) -> Result<()> {
        match self {
            Self::Flex(w) => {
                if let Some(r) = record {
                    w.push(r.retained_histogram(classes));
                }
                Ok(())
            }
            Self::Ema { teacher, shadow } => {
                shadow.update(current)?;
                shadow.write_to(&teacher.params())
            }
            _ => Ok(()),
        }
    }
}
