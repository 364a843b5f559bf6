use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Example};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::config("noise", e.to_string()))
}

/// Two interleaved half circles. Class 0 is the upper unit half circle,
/// class 1 the lower one shifted to `(1, 0.5)`.
pub fn gen_two_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::config("n", format!("need an even count of at least 4, got {n}")));
    }
    if noise_sigma < 0.0 || !noise_sigma.is_finite() {
        return Err(Error::config("noise", "must be non-negative"));
    }
    let mut rng = stream(seed, Stream::Data);
    let jitter = normal(noise_sigma.max(f64::MIN_POSITIVE))?;
    let half = n / 2;
    let mut examples = Vec::with_capacity(n);
    for class in 0..2 {
        for i in 0..half {
            let t = PI * i as f64 / (half - 1) as f64;
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let (dx, dy) = if noise_sigma > 0.0 {
                (jitter.sample(&mut rng), jitter.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            examples.push(Example {
                features: vec![x + dx, y + dy],
                label: Some(class),
            });
        }
    }
    Dataset::new(examples, 2)
}

/// Isotropic 2-D Gaussians. Class `k` is centred at distance
/// `distance_profile[k]` from the origin along angle `2πk / K`, so uneven
/// profiles give uneven margins between neighbouring classes.
pub fn gen_gaussian_blobs(
    num_classes: usize,
    n_per_class: usize,
    spread: f64,
    distance_profile: &[f64],
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::config("num_classes", "need at least 2 classes"));
    }
    if spread <= 0.0 || !spread.is_finite() {
        return Err(Error::config("spread", format!("must be positive, got {spread}")));
    }
    if distance_profile.len() != num_classes {
        return Err(Error::config(
            "distance_profile",
            format!("expected {num_classes} entries, got {}", distance_profile.len()),
        ));
    }
    let mut rng = stream(seed, Stream::Data);
    let jitter = normal(spread)?;
    let mut examples = Vec::with_capacity(num_classes * n_per_class);
    for (k, &d) in distance_profile.iter().enumerate() {
        let angle = 2.0 * PI * k as f64 / num_classes as f64;
        let (cx, cy) = (d * angle.cos(), d * angle.sin());
        for _ in 0..n_per_class {
            examples.push(Example {
                features: vec![cx + jitter.sample(&mut rng), cy + jitter.sample(&mut rng)],
                label: Some(k),
            });
        }
    }
    Dataset::new(examples, num_classes)
}

/// Concentric annuli; class `k` sits at radius `k + 1` plus Gaussian noise.
pub fn gen_rings(num_classes: usize, n_per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::config("num_classes", "need at least 2 classes"));
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(Error::config("noise", "must be non-negative"));
    }
    let mut rng = stream(seed, Stream::Data);
    let jitter = normal(noise.max(f64::MIN_POSITIVE))?;
    let mut examples = Vec::with_capacity(num_classes * n_per_class);
    for k in 0..num_classes {
        for _ in 0..n_per_class {
            let theta = rng.random_range(0.0..2.0 * PI);
            let r = (k + 1) as f64 + if noise > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
            examples.push(Example {
                features: vec![r * theta.cos(), r * theta.sin()],
                label: Some(k),
            });
        }
    }
    Dataset::new(examples, num_classes)
}
