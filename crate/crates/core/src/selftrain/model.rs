use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{FeatureGenerator, Head, HeadKind, Mode, Module};
use crate::rng::Rng;

/// Architecture of the feature generator and the heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub embedding_dim: usize,
    pub depth: usize,
    pub main_head: HeadKind,
    pub pseudo_head: HeadKind,
    pub worst_head: HeadKind,
    /// Width of the hidden layer of nonlinear heads; `None` means
    /// `2 × embedding_dim`.
    pub projection_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            depth: 3,
            main_head: HeadKind::Linear,
            pseudo_head: HeadKind::Nonlinear,
            worst_head: HeadKind::Nonlinear,
            projection_dim: None,
            dropout: 0.1,
        }
    }
}

impl ModelSpec {
    pub fn resolved_projection_dim(&self) -> usize {
        self.projection_dim.unwrap_or(2 * self.embedding_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("model.embedding_dim", "must be positive"));
        }
        if self.projection_dim == Some(0) {
            return Err(Error::config("model.projection_dim", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "model.dropout",
                format!("{} outside [0, 1)", self.dropout),
            ));
        }
        Ok(())
    }

    pub fn feature_generator(&self, input_dim: usize, rng: &mut Rng) -> FeatureGenerator {
        FeatureGenerator::new(input_dim, self.embedding_dim, self.depth, rng)
    }

    pub fn head(&self, kind: HeadKind, embedding_dim: usize, classes: usize, rng: &mut Rng) -> Result<Head> {
        Head::build(
            kind,
            embedding_dim,
            Some(self.resolved_projection_dim()),
            classes,
            self.dropout,
            rng,
        )
    }
}

/// Feature generator plus a single classification head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub psi: FeatureGenerator,
    pub head: Head,
}

impl Classifier {
    pub fn new(psi: FeatureGenerator, head: Head) -> Self {
        Self { psi, head }
    }

    pub fn init(spec: &ModelSpec, input_dim: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        let psi = spec.feature_generator(input_dim, rng);
        let head = spec.head(spec.main_head, psi.embedding_dim(), classes, rng)?;
        Ok(Self { psi, head })
    }

    pub fn logits(&self, tape: &mut Tape, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let f = self.psi.forward(tape, x)?;
        self.head.forward(tape, f, mode)
    }

    pub fn deep_copy(&self) -> Self {
        Self {
            psi: self.psi.deep_copy(),
            head: self.head.deep_copy(),
        }
    }
}

impl Module<f64> for Classifier {
    fn params(&self) -> Vec<Param> {
        let mut p = self.psi.params();
        p.extend(self.head.params());
        p
    }
}

/// Eval-mode logits through a feature generator and head on a throwaway tape;
/// nothing computed here can receive gradient.
pub fn eval_logits(psi: &FeatureGenerator, head: &Head, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let f = psi.forward(&mut tape, xv)?;
    let z = head.forward(&mut tape, f, &mut Mode::Eval)?;
    Ok(tape.value(z).clone())
}

/// Anything that can classify a batch in eval mode.
pub trait Predictor {
    fn eval_logits(&self, x: &Tensor) -> Result<Tensor>;

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.eval_logits(x)?.argmax_rows())
    }
}

impl Predictor for Classifier {
    fn eval_logits(&self, x: &Tensor) -> Result<Tensor> {
        eval_logits(&self.psi, &self.head, x)
    }
}

/// Borrowed feature generator and head, classifying together.
#[derive(Clone, Copy)]
pub struct HeadView<'a> {
    pub psi: &'a FeatureGenerator,
    pub head: &'a Head,
}

impl Predictor for HeadView<'_> {
    fn eval_logits(&self, x: &Tensor) -> Result<Tensor> {
        eval_logits(self.psi, self.head, x)
    }
}
