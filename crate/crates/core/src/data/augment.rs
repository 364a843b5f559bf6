use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorWeak {
    pub jitter_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorStrong {
    pub jitter_sigma: f64,
    /// Per-feature multiplicative factor drawn uniformly from this range.
    pub scale_range: (f64, f64),
    pub feature_drop_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWeak {
    pub flip_prob: f64,
    pub crop_pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridStrong {
    pub flip_prob: f64,
    pub crop_pad: usize,
    /// Side of the zeroed square as a fraction of the shorter image side.
    pub cutout_frac: f64,
    pub brightness_delta: f64,
}

/// Weak/strong view generators.
///
/// Vectors: weak is Gaussian jitter; strong is larger jitter, per-feature
/// random scaling and random feature dropout. Grids: weak is horizontal flip
/// plus pad-and-crop; strong adds cutout and a brightness shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "modality", deny_unknown_fields)]
pub enum AugmentationSpec {
    Vector { weak: VectorWeak, strong: VectorStrong },
    Grid { weak: GridWeak, strong: GridStrong },
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec::Vector {
            weak: VectorWeak { jitter_sigma: 0.05 },
            strong: VectorStrong {
                jitter_sigma: 0.2,
                scale_range: (0.8, 1.2),
                feature_drop_prob: 0.1,
            },
        }
    }
}

fn prob(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(field, format!("probability {p} outside [0, 1]")))
    }
}

impl AugmentationSpec {
    pub fn default_grid() -> Self {
        AugmentationSpec::Grid {
            weak: GridWeak {
                flip_prob: 0.5,
                crop_pad: 1,
            },
            strong: GridStrong {
                flip_prob: 0.5,
                crop_pad: 2,
                cutout_frac: 0.25,
                brightness_delta: 0.2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentationSpec::Vector { weak, strong } => {
                if weak.jitter_sigma < 0.0 {
                    return Err(Error::config("augmentation.weak.jitter_sigma", "must be non-negative"));
                }
                if strong.jitter_sigma < weak.jitter_sigma {
                    return Err(Error::config(
                        "augmentation.strong.jitter_sigma",
                        "must be at least the weak jitter",
                    ));
                }
                let (lo, hi) = strong.scale_range;
                if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::config("augmentation.strong.scale_range", "need lo <= hi"));
                }
                prob("augmentation.strong.feature_drop_prob", strong.feature_drop_prob)
            }
            AugmentationSpec::Grid { weak, strong } => {
                prob("augmentation.weak.flip_prob", weak.flip_prob)?;
                prob("augmentation.strong.flip_prob", strong.flip_prob)?;
                prob("augmentation.strong.cutout_frac", strong.cutout_frac)?;
                if strong.brightness_delta < 0.0 {
                    return Err(Error::config(
                        "augmentation.strong.brightness_delta",
                        "must be non-negative",
                    ));
                }
                Ok(())
            }
        }
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Returns an augmented copy of `features`; the input is never modified.
///
/// `grid` gives `(height, width)` for grid specs and is ignored otherwise.
pub fn augment(
    features: &[f64],
    spec: &AugmentationSpec,
    strength: Strength,
    grid: Option<(usize, usize)>,
    rng: &mut Rng,
) -> Vec<f64> {
    match (spec, strength) {
        (AugmentationSpec::Vector { weak, .. }, Strength::Weak) => jitter(features, weak.jitter_sigma, rng),
        (AugmentationSpec::Vector { strong, .. }, Strength::Strong) => {
            let mut out = jitter(features, strong.jitter_sigma, rng);
            let (lo, hi) = strong.scale_range;
            for v in out.iter_mut() {
                if hi > lo {
                    *v *= rng.random_range(lo..hi);
                } else {
                    *v *= lo;
                }
                if strong.feature_drop_prob > 0.0 && rng.random::<f64>() < strong.feature_drop_prob {
                    *v = 0.0;
                }
            }
            out
        }
        (AugmentationSpec::Grid { weak, .. }, Strength::Weak) => {
            let (h, w) = grid.unwrap_or((1, features.len()));
            flip_and_crop(features, h, w, weak.flip_prob, weak.crop_pad, rng)
        }
        (AugmentationSpec::Grid { strong, .. }, Strength::Strong) => {
            let (h, w) = grid.unwrap_or((1, features.len()));
            let mut out = flip_and_crop(features, h, w, strong.flip_prob, strong.crop_pad, rng);
            let side = (strong.cutout_frac * h.min(w) as f64).round() as usize;
            if side > 0 {
                let (cy, cx) = (rng.random_range(0..h), rng.random_range(0..w));
                let (y0, x0) = (cy.saturating_sub(side / 2), cx.saturating_sub(side / 2));
                for y in y0..(y0 + side).min(h) {
                    for x in x0..(x0 + side).min(w) {
                        out[y * w + x] = 0.0;
                    }
                }
            }
            if strong.brightness_delta > 0.0 {
                let shift = rng.random_range(-strong.brightness_delta..=strong.brightness_delta);
                out.iter_mut().for_each(|v| *v += shift);
            }
            out
        }
    }
}

fn jitter(x: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|&v| v + sigma * gaussian(rng)).collect()
}

/// Optional horizontal flip, then a random shift of up to `pad` pixels in
/// each direction with zero fill (pad-and-crop).
fn flip_and_crop(x: &[f64], h: usize, w: usize, flip_prob: f64, pad: usize, rng: &mut Rng) -> Vec<f64> {
    let flip = flip_prob > 0.0 && rng.random::<f64>() < flip_prob;
    let (dy, dx) = if pad > 0 {
        let p = pad as i64;
        (rng.random_range(-p..=p), rng.random_range(-p..=p))
    } else {
        (0, 0)
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x_out in 0..w {
            let sy = y as i64 + dy;
            let sx = x_out as i64 + dx;
            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                continue;
            }
            let sx = if flip { w as i64 - 1 - sx } else { sx };
            out[y * w + x_out] = x[sy as usize * w + sx as usize];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn identity_spec_is_identity() {
        let mut rng = stream(0, Stream::Augment);
        let x = vec![0.3, -1.2, 4.0, 0.0];
        let spec = AugmentationSpec::Vector {
            weak: VectorWeak { jitter_sigma: 0.0 },
            strong: VectorStrong {
                jitter_sigma: 0.0,
                scale_range: (1.0, 1.0),
                feature_drop_prob: 0.0,
            },
        };
        assert_eq!(augment(&x, &spec, Strength::Weak, None, &mut rng), x);
        assert_eq!(augment(&x, &spec, Strength::Strong, None, &mut rng), x);
        let grid = AugmentationSpec::Grid {
            weak: GridWeak {
                flip_prob: 0.0,
                crop_pad: 0,
            },
            strong: GridStrong {
                flip_prob: 0.0,
                crop_pad: 0,
                cutout_frac: 0.0,
                brightness_delta: 0.0,
            },
        };
        assert_eq!(augment(&x, &grid, Strength::Weak, Some((2, 2)), &mut rng), x);
        assert_eq!(augment(&x, &grid, Strength::Strong, Some((2, 2)), &mut rng), x);
    }

    #[test]
    fn full_feature_drop_zeroes_everything() {
        let mut rng = stream(1, Stream::Augment);
        let spec = AugmentationSpec::Vector {
            weak: VectorWeak { jitter_sigma: 0.1 },
            strong: VectorStrong {
                jitter_sigma: 0.5,
                scale_range: (0.5, 1.5),
                feature_drop_prob: 1.0,
            },
        };
        let out = augment(&[1.0, 2.0, 3.0], &spec, Strength::Strong, None, &mut rng);
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn weak_jitter_has_requested_std() {
        let mut rng = stream(2, Stream::Augment);
        let spec = AugmentationSpec::Vector {
            weak: VectorWeak { jitter_sigma: 0.05 },
            strong: VectorStrong {
                jitter_sigma: 0.05,
                scale_range: (1.0, 1.0),
                feature_drop_prob: 0.0,
            },
        };
        let x = [1.0, -2.0];
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| augment(&x, &spec, Strength::Weak, None, &mut rng))
            .collect();
        for j in 0..2 {
            let mean = draws.iter().map(|d| d[j]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            assert!((0.045..=0.055).contains(&sd), "coordinate {j}: sd {sd}");
        }
    }

    #[test]
    fn flip_reverses_rows() {
        let mut rng = stream(3, Stream::Augment);
        let out = flip_and_crop(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3, 1.0, 0, &mut rng);
        assert_eq!(out, vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn strong_jitter_must_dominate_weak() {
        let spec = AugmentationSpec::Vector {
            weak: VectorWeak { jitter_sigma: 0.3 },
            strong: VectorStrong {
                jitter_sigma: 0.1,
                scale_range: (1.0, 1.0),
                feature_drop_prob: 0.0,
            },
        };
        assert!(spec.validate().is_err());
        assert!(AugmentationSpec::default().validate().is_ok());
        assert!(AugmentationSpec::default_grid().validate().is_ok());
    }
}
