use crate::autodiff::{Param, Scalar};
use crate::error::{Error, Result};

/// Exponential moving average of a parameter list:
/// `shadow ← decay · shadow + (1 − decay) · param`.
#[derive(Debug, Clone)]
pub struct EmaShadow<T = f64> {
    decay: T,
    shadow: Vec<Vec<T>>,
}

impl<T: Scalar> EmaShadow<T> {
    /// Starts the shadow as a copy of `params`.
    pub fn new(params: &[Param<T>], decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::config("ema_decay", format!("{decay} outside (0, 1)")));
        }
        Ok(Self {
            decay: T::of(decay),
            shadow: params.iter().map(|p| p.value().data().to_vec()).collect(),
        })
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.shadow
    }

    pub fn update(&mut self, params: &[Param<T>]) -> Result<()> {
        self.check(params)?;
        let keep = self.decay;
        let take = T::one() - keep;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            for (sv, &pv) in s.iter_mut().zip(p.value().data()) {
                *sv = keep * *sv + take * pv;
            }
        }
        Ok(())
    }

    /// Copies the shadow values into `params` (e.g. a teacher model).
    pub fn write_to(&self, params: &[Param<T>]) -> Result<()> {
        self.check(params)?;
        for (s, p) in self.shadow.iter().zip(params) {
            p.set_data(s)?;
        }
        Ok(())
    }

    fn check(&self, params: &[Param<T>]) -> Result<()> {
        if params.len() != self.shadow.len() || params.iter().zip(&self.shadow).any(|(p, s)| p.numel() != s.len()) {
            return Err(Error::Contract(format!(
                "EMA shadow tracks {} tensors, got {} with different sizes",
                self.shadow.len(),
                params.len()
            )));
        }
        Ok(())
    }
}
