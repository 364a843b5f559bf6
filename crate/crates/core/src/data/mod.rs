//! Datasets, the labeled/unlabeled split protocol, augmentation and batching.

mod augment;
mod batch;
mod io;
mod split;
mod synth;

pub use augment::{augment, AugmentationSpec, GridStrong, GridWeak, Strength, VectorStrong, VectorWeak};
pub use batch::{BatchPlan, JointBatch, JointBatcher, StepInputs};
pub use io::{load_csv, load_idx, read_csv, write_csv, write_idx};
pub use split::{make_ssl_split, HiddenLabels, LabeledExample, SslSplit, Standardizer, UnlabeledExample};
pub use synth::{gen_gaussian_blobs, gen_rings, gen_two_moons};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

/// Collection of examples sharing a feature width and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    feature_dim: usize,
    grid: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        let feature_dim = examples.first().map_or(0, |e| e.features.len());
        for (i, e) in examples.iter().enumerate() {
            if e.features.len() != feature_dim {
                return Err(Error::Contract(format!(
                    "example {i} has {} features, expected {feature_dim}",
                    e.features.len()
                )));
            }
            if let Some(l) = e.label {
                if l >= num_classes {
                    return Err(Error::Contract(format!(
                        "example {i} has label {l} but only {num_classes} classes"
                    )));
                }
            }
        }
        Ok(Self {
            examples,
            num_classes,
            feature_dim,
            grid: None,
        })
    }

    /// Marks the features as a row-major `height × width` grid.
    pub fn with_grid(mut self, height: usize, width: usize) -> Result<Self> {
        if height * width != self.feature_dim {
            return Err(Error::Contract(format!(
                "grid {height}×{width} does not match {} features",
                self.feature_dim
            )));
        }
        self.grid = Some((height, width));
        Ok(self)
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    /// Order-sensitive FNV-1a digest over feature bits and labels.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for e in &self.examples {
            e.features.iter().for_each(|f| eat(f.to_bits()));
            eat(e.label.map_or(u64::MAX, |l| l as u64));
        }
        h
    }
}
