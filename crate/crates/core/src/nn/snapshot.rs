use super::Module;
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Frozen copy of a module's parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot<T = f64>(Vec<Tensor<T>>);

impl<T: Scalar> ParamSnapshot<T> {
    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.0
    }
}

pub fn snapshot_params<T: Scalar>(model: &impl Module<T>) -> ParamSnapshot<T> {
    ParamSnapshot(model.params().iter().map(|p| p.value().clone()).collect())
}

pub fn restore_params<T: Scalar>(model: &impl Module<T>, snapshot: &ParamSnapshot<T>) -> Result<()> {
    let params = model.params();
    if params.len() != snapshot.0.len() {
        return Err(Error::Contract(format!(
            "snapshot holds {} tensors, model has {}",
            snapshot.0.len(),
            params.len()
        )));
    }
    for (p, t) in params.iter().zip(&snapshot.0) {
        if p.shape() != t.shape() {
            return Err(Error::Shape {
                op: "restore_params",
                expected: p.shape(),
                got: t.shape().to_vec(),
            });
        }
    }
    for (p, t) in params.iter().zip(&snapshot.0) {
        p.set_data(t.data())?;
    }
    Ok(())
}
