//! Layers, optimizers and parameter bookkeeping built on [`crate::autodiff`].

mod ema;
mod layers;
mod optim;
mod snapshot;

pub use ema::EmaShadow;
pub use layers::{dropout, DenseLayer, FeatureGenerator, Head, HeadKind, Mode};
pub use optim::{clip_grad_norm, Schedule, SgdConfig, SgdOptimizer, CLIP_NORM};
pub use snapshot::{restore_params, snapshot_params, ParamSnapshot};

use crate::autodiff::{Param, Scalar};

/// Anything that owns trainable parameters.
pub trait Module<T: Scalar> {
    /// Parameters in a stable order.
    fn params(&self) -> Vec<Param<T>>;

    fn zero_grad(&self) {
        self.params().iter().for_each(Param::zero_grad);
    }
}
