use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Module;
use crate::autodiff::{Param, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Whether stochastic layers are active for a forward pass.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in training,
/// identity in eval.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config("dropout", format!("rate {rate} outside [0, 1)")));
    }
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = T::of(1.0 / (1.0 - rate));
            let mask = (0..tape.value(x).len())
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect();
            tape.mul_mask(x, mask)
        }
        _ => Ok(x),
    }
}

/// Fully connected layer computing `x · W + b`.
#[derive(Debug, Clone)]
pub struct DenseLayer<T = f64> {
    weight: Param<T>,
    bias: Param<T>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> DenseLayer<T> {
    /// He-uniform weights with bound `sqrt(6 / in_dim)`, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self::from_tensors(
            Tensor::new(vec![in_dim, out_dim], w).expect("consistent dims"),
            Tensor::zeros(vec![out_dim]),
        )
        .expect("consistent dims")
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape().to_vec();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return Err(Error::Shape {
                op: "dense_layer",
                expected: vec![ws.get(1).copied().unwrap_or(0)],
                got: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            in_dim: ws[0],
            out_dim: ws[1],
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Param<T> {
        &self.bias
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let xs = tape.value(x).shape();
        if xs.len() != 2 || xs[1] != self.in_dim {
            return Err(Error::Shape {
                op: "forward_dense",
                expected: vec![self.in_dim],
                got: xs.to_vec(),
            });
        }
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_bias(xw, b)
    }

    pub fn deep_copy(&self) -> Self {
        Self {
            weight: self.weight.deep_copy(),
            bias: self.bias.deep_copy(),
            ..*self
        }
    }
}

impl<T: Scalar> Module<T> for DenseLayer<T> {
    fn params(&self) -> Vec<Param<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Stack of `Dense → ReLU` blocks mapping inputs to embeddings.
///
/// The first block maps `input_dim → embedding_dim`, the rest keep the width.
/// Depth zero is the identity map with `embedding_dim == input_dim`.
#[derive(Debug, Clone)]
pub struct FeatureGenerator<T = f64> {
    layers: Vec<DenseLayer<T>>,
    input_dim: usize,
    embedding_dim: usize,
}

impl<T: Scalar> FeatureGenerator<T> {
    pub fn new(input_dim: usize, embedding_dim: usize, depth: usize, rng: &mut Rng) -> Self {
        if depth == 0 {
            return Self {
                layers: Vec::new(),
                input_dim,
                embedding_dim: input_dim,
            };
        }
        let layers = (0..depth)
            .map(|i| {
                let fan_in = if i == 0 { input_dim } else { embedding_dim };
                DenseLayer::new(fan_in, embedding_dim, rng)
            })
            .collect();
        Self {
            layers,
            input_dim,
            embedding_dim,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input_dim {
            return Err(Error::Shape {
                op: "feature_generator",
                expected: vec![self.input_dim],
                got: tape.value(x).shape().to_vec(),
            });
        }
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(tape, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    pub fn deep_copy(&self) -> Self {
        Self {
            layers: self.layers.iter().map(DenseLayer::deep_copy).collect(),
            ..*self
        }
    }
}

impl<T: Scalar> Module<T> for FeatureGenerator<T> {
    fn params(&self) -> Vec<Param<T>> {
        self.layers.iter().flat_map(Module::params).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `Linear` (softmax lives in the loss).
    Linear,
    /// `Linear → ReLU → Dropout → Linear`.
    Nonlinear,
}

/// Classifier head on top of the feature generator; produces logits.
#[derive(Debug, Clone)]
pub struct Head<T = f64> {
    kind: HeadKind,
    layers: Vec<DenseLayer<T>>,
    dropout_rate: f64,
}

impl<T: Scalar> Head<T> {
    pub fn linear(embedding_dim: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            kind: HeadKind::Linear,
            layers: vec![DenseLayer::new(embedding_dim, classes, rng)],
            dropout_rate: 0.0,
        }
    }

    pub fn nonlinear(
        embedding_dim: usize,
        projection_dim: usize,
        classes: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::config("dropout", format!("rate {dropout_rate} outside [0, 1)")));
        }
        let first = DenseLayer::new(embedding_dim, projection_dim, rng);
        let second = DenseLayer::new(projection_dim, classes, rng);
        Ok(Self {
            kind: HeadKind::Nonlinear,
            layers: vec![first, second],
            dropout_rate,
        })
    }

    /// Builds a head of `kind`; `projection_dim` defaults to twice the
    /// embedding width and is ignored for linear heads.
    pub fn build(
        kind: HeadKind,
        embedding_dim: usize,
        projection_dim: Option<usize>,
        classes: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        match kind {
            HeadKind::Linear => Ok(Self::linear(embedding_dim, classes, rng)),
            HeadKind::Nonlinear => Self::nonlinear(
                embedding_dim,
                projection_dim.unwrap_or(2 * embedding_dim),
                classes,
                dropout_rate,
                rng,
            ),
        }
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn projection_dim(&self) -> Option<usize> {
        match self.kind {
            HeadKind::Linear => None,
            HeadKind::Nonlinear => Some(self.layers[0].out_dim()),
        }
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        match self.kind {
            HeadKind::Linear => self.layers[0].forward(tape, x),
            HeadKind::Nonlinear => {
                let z = self.layers[0].forward(tape, x)?;
                let a = tape.relu(z);
                let d = dropout(tape, a, self.dropout_rate, mode)?;
                self.layers[1].forward(tape, d)
            }
        }
    }

    pub fn deep_copy(&self) -> Self {
        Self {
            kind: self.kind,
            layers: self.layers.iter().map(DenseLayer::deep_copy).collect(),
            dropout_rate: self.dropout_rate,
        }
    }
}

impl<T: Scalar> Module<T> for Head<T> {
    fn params(&self) -> Vec<Param<T>> {
        self.layers.iter().flat_map(Module::params).collect()
    }
}
