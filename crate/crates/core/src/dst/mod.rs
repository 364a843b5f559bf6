//! Debiased self-training: a pseudo head that alone consumes pseudo labels,
//! and a worst-case head whose adversarial term shapes the features.

mod model;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selftrain::CLAMP_EPS;

pub use model::DstModel;
pub use trainer::{dst_losses, worst_disagreement, wrap_debiased, DebiasedTrainer, DstLosses, PseudoOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// Ascend the worst-case head, then descend the rest on a fresh forward.
    TwoStep,
    /// One backward pass with the worst-case head's gradients negated.
    GradientReversal,
}

/// Adversary and decoupling options as they appear in a run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DstOptions {
    pub clamp_eps: f64,
    pub alternation: Alternation,
    pub adv_skip_when_empty: bool,
    pub warmup_steps_adv: usize,
    /// Keep the feature generator out of the gradient of `−L_L(ψ, h′)`.
    pub detach_labeled_adv_from_psi: bool,
    /// Disable to ablate the worst-case term.
    pub worst_case: bool,
}

impl Default for DstOptions {
    fn default() -> Self {
        Self {
            clamp_eps: CLAMP_EPS,
            alternation: Alternation::TwoStep,
            adv_skip_when_empty: true,
            warmup_steps_adv: 500,
            detach_labeled_adv_from_psi: false,
            worst_case: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DstConfig {
    pub lambda: f64,
    pub tau: f64,
    pub options: DstOptions,
}

impl DstConfig {
    pub fn new(lambda: f64, tau: f64, options: DstOptions) -> Result<Self> {
        let c = Self { lambda, tau, options };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(
                "lambda",
                format!("{} must be finite and >= 0", self.lambda),
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", format!("{} outside (0, 1]", self.tau)));
        }
        let eps = self.options.clamp_eps;
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::config("dst.clamp_eps", format!("{eps} outside (0, 0.5)")));
        }
        Ok(())
    }
}
