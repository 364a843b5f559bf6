use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_gaussian_blobs, gen_rings, gen_two_moons, load_csv, load_idx, AugmentationSpec, BatchPlan, Dataset,
};
use crate::dst::{DstConfig, DstOptions};
use crate::error::{Error, Result};
use crate::nn::{Schedule, SgdConfig, CLIP_NORM};
use crate::selftrain::{AlgorithmConfig, AlgorithmKind, ModelSpec, RoundPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "generator", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        n: usize,
        noise: f64,
    },
    GaussianBlobs {
        classes: usize,
        n_per_class: usize,
        spread: f64,
        distance_profile: Vec<f64>,
    },
    Rings {
        classes: usize,
        n_per_class: usize,
        noise: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::TwoMoons { n: 1000, noise: 0.1 }
    }
}

impl DatasetSpec {
    /// Relative file paths resolve against `base`.
    pub fn load(&self, seed: u64, base: Option<&Path>) -> Result<Dataset> {
        let resolve = |p: &Path| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        match self {
            Self::TwoMoons { n, noise } => gen_two_moons(*n, *noise, seed),
            Self::GaussianBlobs {
                classes,
                n_per_class,
                spread,
                distance_profile,
            } => gen_gaussian_blobs(*classes, *n_per_class, *spread, distance_profile, seed),
            Self::Rings {
                classes,
                n_per_class,
                noise,
            } => gen_rings(*classes, *n_per_class, *noise, seed),
            Self::Csv { path, label_column } => load_csv(resolve(path), label_column),
            Self::Idx { images, labels } => load_idx(resolve(images), resolve(labels)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub k_per_class: usize,
    pub eval_fraction: f64,
    pub include_labeled_in_unlabeled: bool,
    /// Standardize features with statistics of the training pool.
    pub standardize: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            k_per_class: 4,
            eval_fraction: 0.2,
            include_labeled_in_unlabeled: true,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub clip_norm: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: ScheduleKind::Cosine,
            clip_norm: CLIP_NORM,
        }
    }
}

impl OptimizerSpec {
    pub fn sgd(&self, total_steps: usize) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: match self.schedule {
                ScheduleKind::Constant => Schedule::Constant,
                ScheduleKind::Cosine => Schedule::Cosine { total_steps },
            },
        }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub model: ModelSpec,
    pub algorithm: AlgorithmConfig,
    pub dst: DstOptions,
    pub optimizer: OptimizerSpec,
    pub augmentation: AugmentationSpec,
    pub batch: BatchPlan,
    pub total_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Batches in the sliding pseudo-label window of `metrics.csv`.
    pub pseudo_window: usize,
    /// Trailing steps pooled for the summary's pseudo-label quality.
    pub quality_tail_steps: usize,
    /// Steps of the labeled-only reference model behind the data-bias
    /// estimate; `0` skips it and reports the run's first evaluation instead.
    pub bias_reference_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            split: SplitSpec::default(),
            model: ModelSpec::default(),
            algorithm: AlgorithmConfig::default(),
            dst: DstOptions::default(),
            optimizer: OptimizerSpec::default(),
            augmentation: AugmentationSpec::default(),
            batch: BatchPlan::default(),
            total_steps: 3000,
            eval_every: 100,
            seed: 0,
            pseudo_window: 100,
            quality_tail_steps: 1000,
            bias_reference_steps: 1000,
        }
    }
}

fn check(ok: bool, field: &str, reason: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, reason()))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.algorithm.validate()?;
        self.model.validate()?;
        self.augmentation.validate()?;
        self.batch.validate()?;
        DstConfig::new(self.algorithm.lambda, self.algorithm.tau, self.dst)?;
        check(self.total_steps > 0, "total_steps", || "must be at least 1".into())?;
        check(self.eval_every > 0, "eval_every", || "must be at least 1".into())?;
        check(self.pseudo_window > 0, "pseudo_window", || "must be at least 1".into())?;
        check(self.split.k_per_class > 0, "split.k_per_class", || {
            "must be at least 1".into()
        })?;
        check(
            (0.0..1.0).contains(&self.split.eval_fraction) && self.split.eval_fraction > 0.0,
            "split.eval_fraction",
            || format!("{} outside (0, 1)", self.split.eval_fraction),
        )?;
        let o = &self.optimizer;
        check(o.lr > 0.0 && o.lr.is_finite(), "optimizer.lr", || {
            format!("{} must be positive", o.lr)
        })?;
        check((0.0..1.0).contains(&o.momentum), "optimizer.momentum", || {
            format!("{} outside [0, 1)", o.momentum)
        })?;
        check(o.weight_decay >= 0.0, "optimizer.weight_decay", || {
            "must be >= 0".into()
        })?;
        check(
            o.clip_norm > 0.0 && o.clip_norm.is_finite(),
            "optimizer.clip_norm",
            || "must be positive".into(),
        )?;
        if self.algorithm.debiased {
            let supported = [
                AlgorithmKind::FixMatch,
                AlgorithmKind::FlexMatchLite,
                AlgorithmKind::MeanTeacher,
                AlgorithmKind::NoisyStudent,
            ];
            check(supported.contains(&self.algorithm.kind), "algorithm.kind", || {
                format!("{} has no debiased variant", self.algorithm.kind.name())
            })?;
        }
        if self.algorithm.kind == AlgorithmKind::NoisyStudent {
            RoundPlan::new(self.algorithm.rounds, self.total_steps)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_tau_by_name() {
        let err = RunConfig::from_json(r#"{"algorithm": {"tau": 1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("tau"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"steps": 10}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"width": 3}}"#).is_err());
        let err = RunConfig::from_json(r#"{"dataset": {"generator": "two_moons", "n": 10, "noise": 0.1, "x": 1}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn debiased_mutual_learning_is_rejected() {
        let err = RunConfig::from_json(r#"{"algorithm": {"kind": "mutual_learning", "debiased": true}}"#).unwrap_err();
        assert!(err.to_string().contains("algorithm.kind"), "{err}");
    }
}
