//! Brute-force reference implementations of the metrics.

use dstlab::data::HiddenLabels;
use dstlab::metrics::{imbalance_ratio, per_class_error, pseudo_stats, worst_k_accuracy};
use dstlab::rng::Rng;
use dstlab::selftrain::PseudoBatchRecord;
use rand::Rng as _;

pub fn per_class_error_oracle(pred: &[usize], truth: &[usize], k: usize) -> Option<(Vec<f64>, f64)> {
    let mut errors = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        if members.is_empty() {
            return None;
        }
        let wrong = members.iter().filter(|&&i| pred[i] != c).count();
        errors.push(wrong as f64 / members.len() as f64);
    }
    let right = (0..truth.len()).filter(|&i| pred[i] == truth[i]).count();
    Some((errors, right as f64 / truth.len() as f64))
}

pub fn imbalance_oracle(pred: &[usize], k: usize) -> f64 {
    let counts: Vec<usize> = (0..k).map(|c| pred.iter().filter(|&&p| p == c).count()).collect();
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    if lo == 0 {
        f64::INFINITY
    } else {
        hi as f64 / lo as f64
    }
}

/// Minimum mean accuracy over every `k`-subset of classes.
pub fn worst_k_oracle(acc: &[f64], k: usize) -> f64 {
    let n = acc.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let sum: f64 = (0..n).filter(|&c| mask & (1 << c) != 0).map(|c| acc[c]).sum();
        best = best.min(sum / k as f64);
    }
    best
}

pub fn pseudo_oracle(records: &[PseudoBatchRecord], truth: &[usize]) -> (usize, usize, Option<f64>) {
    let rows: Vec<(usize, usize, bool)> = records
        .iter()
        .flat_map(|r| (0..r.len()).map(move |i| (r.indices[i], r.predicted_class[i], r.retained[i])))
        .collect();
    let kept: Vec<_> = rows.iter().filter(|r| r.2).collect();
    let right = kept.iter().filter(|r| truth[r.0] == r.1).count();
    (
        rows.len(),
        kept.len(),
        (!kept.is_empty()).then(|| right as f64 / kept.len() as f64),
    )
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12
}

/// One random case per metric, checked against its oracle. Returns a
/// description of the first disagreement.
pub fn check_metrics_case(rng: &mut Rng) -> Result<(), String> {
    let k = rng.random_range(2..=7usize);
    let n = rng.random_range(k..=60);
    let mut truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    if rng.random_bool(0.8) {
        // Mostly cases where every class is present.
        (0..k).for_each(|c| truth[c] = c);
    }
    let pred: Vec<usize> = truth
        .iter()
        .map(|&t| {
            if rng.random_bool(0.6) {
                t
            } else {
                rng.random_range(0..k)
            }
        })
        .collect();

    let got = per_class_error(&pred, &truth, k).ok();
    match (per_class_error_oracle(&pred, &truth, k), &got) {
        (None, None) => {}
        (Some((err, acc)), Some(s)) => {
            if !err.iter().zip(&s.per_class_error).all(|(a, b)| close(*a, *b)) || !close(acc, s.accuracy) {
                return Err(format!("per_class_error {pred:?} vs {truth:?}"));
            }
            let accs = s.per_class_accuracy();
            for j in 1..=k {
                let w = worst_k_accuracy(s, j).map_err(|e| e.to_string())?;
                if !close(w, worst_k_oracle(&accs, j)) {
                    return Err(format!("worst_{j} of {accs:?}: {w}"));
                }
            }
        }
        (o, g) => {
            return Err(format!(
                "per_class_error presence: oracle {:?}, got {:?}",
                o.is_some(),
                g.is_some()
            ))
        }
    }

    let ir = imbalance_ratio(&pred, k);
    if !close(ir, imbalance_oracle(&pred, k)) {
        return Err(format!("imbalance_ratio {pred:?}: {ir}"));
    }

    let pool = rng.random_range(1..=80usize);
    let hidden: Vec<usize> = (0..pool).map(|_| rng.random_range(0..k)).collect();
    let records: Vec<PseudoBatchRecord> = (0..rng.random_range(0..5))
        .map(|_| {
            let len = rng.random_range(0..12);
            let indices: Vec<usize> = (0..len).map(|_| rng.random_range(0..pool)).collect();
            PseudoBatchRecord {
                predicted_class: indices
                    .iter()
                    .map(|&i| {
                        if rng.random_bool(0.7) {
                            hidden[i]
                        } else {
                            rng.random_range(0..k)
                        }
                    })
                    .collect(),
                confidence: vec![1.0; len],
                retained: (0..len).map(|_| rng.random_bool(0.5)).collect(),
                indices,
            }
        })
        .collect();
    let s = pseudo_stats(records.iter(), &HiddenLabels::new(hidden.clone()), k).map_err(|e| e.to_string())?;
    let (examined, retained, quality) = pseudo_oracle(&records, &hidden);
    let quality_ok = match (quality, s.quality) {
        (None, None) => true,
        (Some(a), Some(b)) => close(a, b),
        _ => false,
    };
    if s.examined != examined || s.retained != retained || !quality_ok {
        return Err(format!("pseudo_stats: {s:?} vs ({examined}, {retained}, {quality:?})"));
    }
    Ok(())
}
