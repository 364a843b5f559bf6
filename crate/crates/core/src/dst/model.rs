use crate::autodiff::{Param, Tensor};
use crate::error::{Error, Result};
use crate::nn::{FeatureGenerator, Head, Module};
use crate::rng::Rng;
use crate::selftrain::{eval_logits, Classifier, ModelSpec, Predictor};

/// Feature generator with a main head, a pseudo head and a worst-case head,
/// each with its own parameters.
#[derive(Debug, Clone)]
pub struct DstModel {
    pub psi: FeatureGenerator,
    pub h: Head,
    pub h_pseudo: Head,
    pub h_worst: Head,
}

impl DstModel {
    /// Draws `psi` and `h` first, so they equal the weights
    /// [`Classifier::init`] would draw from the same generator.
    pub fn init(spec: &ModelSpec, input_dim: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        let psi = spec.feature_generator(input_dim, rng);
        let emb = psi.embedding_dim();
        let h = spec.head(spec.main_head, emb, classes, rng)?;
        let h_pseudo = spec.head(spec.pseudo_head, emb, classes, rng)?;
        let h_worst = spec.head(spec.worst_head, emb, classes, rng)?;
        Self::new(psi, h, h_pseudo, h_worst)
    }

    pub fn new(psi: FeatureGenerator, h: Head, h_pseudo: Head, h_worst: Head) -> Result<Self> {
        let heads = [&h, &h_pseudo, &h_worst];
        for (i, a) in heads.iter().enumerate() {
            for b in &heads[i + 1..] {
                let shared = a.params().iter().any(|p| b.params().iter().any(|q| p.same_storage(q)));
                if shared {
                    return Err(Error::Contract("heads must not share parameters".into()));
                }
            }
        }
        Ok(Self {
            psi,
            h,
            h_pseudo,
            h_worst,
        })
    }

    /// Parameters of `ψ` and `h`.
    pub fn main_params(&self) -> Vec<Param> {
        let mut p = self.psi.params();
        p.extend(self.h.params());
        p
    }

    /// Drops both auxiliary heads.
    pub fn into_inference(self) -> Classifier {
        Classifier::new(self.psi, self.h)
    }

    pub fn inference_view(&self) -> Classifier {
        Classifier::new(self.psi.clone(), self.h.clone())
    }

    pub fn deep_copy(&self) -> Self {
        Self {
            psi: self.psi.deep_copy(),
            h: self.h.deep_copy(),
            h_pseudo: self.h_pseudo.deep_copy(),
            h_worst: self.h_worst.deep_copy(),
        }
    }
}

impl Module<f64> for DstModel {
    fn params(&self) -> Vec<Param> {
        let mut p = self.main_params();
        p.extend(self.h_pseudo.params());
        p.extend(self.h_worst.params());
        p
    }
}

impl Predictor for DstModel {
    fn eval_logits(&self, x: &Tensor) -> Result<Tensor> {
        eval_logits(&self.psi, &self.h, x)
    }
}
