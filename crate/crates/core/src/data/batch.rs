use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{augment, AugmentationSpec, SslSplit, Strength};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub labeled_batch: usize,
    /// Unlabeled batch size is `unlabeled_ratio × labeled_batch`.
    pub unlabeled_ratio: usize,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            labeled_batch: 32,
            unlabeled_ratio: 3,
        }
    }
}

impl BatchPlan {
    pub fn unlabeled_batch(&self) -> usize {
        self.labeled_batch * self.unlabeled_ratio
    }

    pub fn validate(&self) -> Result<()> {
        if self.labeled_batch == 0 {
            return Err(Error::config("batch.labeled_batch", "must be at least 1"));
        }
        if self.unlabeled_ratio == 0 {
            return Err(Error::config("batch.unlabeled_ratio", "must be at least 1"));
        }
        Ok(())
    }
}

/// Pool indices for one training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointBatch {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Cycler {
    order: Vec<usize>,
    cursor: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, cursor: 0 }
    }

    fn take(&mut self, count: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Cycles independently over the labeled and unlabeled pools, reshuffling
/// each at its own epoch boundary. A batch that straddles a boundary is
/// completed from the next permutation.
#[derive(Debug, Clone)]
pub struct JointBatcher {
    plan: BatchPlan,
    labeled: Cycler,
    unlabeled: Cycler,
    rng: Rng,
}

impl JointBatcher {
    pub fn new(n_labeled: usize, n_unlabeled: usize, plan: BatchPlan, mut rng: Rng) -> Result<Self> {
        plan.validate()?;
        if n_labeled == 0 || n_unlabeled == 0 {
            return Err(Error::Contract("joint batching needs non-empty pools".into()));
        }
        let labeled = Cycler::new(n_labeled, &mut rng);
        let unlabeled = Cycler::new(n_unlabeled, &mut rng);
        Ok(Self {
            plan,
            labeled,
            unlabeled,
            rng,
        })
    }

    pub fn for_split(split: &SslSplit, plan: BatchPlan, rng: Rng) -> Result<Self> {
        Self::new(split.labeled().len(), split.unlabeled().len(), plan, rng)
    }

    pub fn plan(&self) -> BatchPlan {
        self.plan
    }

    pub fn next_joint_batch(&mut self) -> JointBatch {
        let labeled = self.labeled.take(self.plan.labeled_batch, &mut self.rng);
        let unlabeled = self.unlabeled.take(self.plan.unlabeled_batch(), &mut self.rng);
        JointBatch { labeled, unlabeled }
    }
}

/// Augmented tensors for one step: weak labeled views, and weak plus strong
/// views of the same unlabeled examples.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub labeled_weak: Tensor,
    pub labels: Vec<usize>,
    pub unlabeled_weak: Tensor,
    pub unlabeled_strong: Tensor,
    /// Unlabeled pool indices, row-aligned with the unlabeled tensors.
    pub unlabeled_indices: Vec<usize>,
}

impl StepInputs {
    pub fn assemble(split: &SslSplit, batch: &JointBatch, spec: &AugmentationSpec, rng: &mut Rng) -> Result<Self> {
        let grid = split.grid();
        let mut l_rows = Vec::with_capacity(batch.labeled.len());
        let mut labels = Vec::with_capacity(batch.labeled.len());
        for &i in &batch.labeled {
            let e = &split.labeled()[i];
            l_rows.push(augment(&e.features, spec, Strength::Weak, grid, rng));
            labels.push(e.label);
        }
        let mut weak = Vec::with_capacity(batch.unlabeled.len());
        let mut strong = Vec::with_capacity(batch.unlabeled.len());
        for &i in &batch.unlabeled {
            let x = split.unlabeled()[i].features();
            weak.push(augment(x, spec, Strength::Weak, grid, rng));
            strong.push(augment(x, spec, Strength::Strong, grid, rng));
        }
        Ok(Self {
            labeled_weak: Tensor::from_rows(&l_rows)?,
            labels,
            unlabeled_weak: Tensor::from_rows(&weak)?,
            unlabeled_strong: Tensor::from_rows(&strong)?,
            unlabeled_indices: batch.unlabeled.clone(),
        })
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled_indices.len()
    }
}
