use std::collections::VecDeque;

/// Curriculum thresholds from per-class retained counts.
///
/// `σ(c) = counts[c] / max counts`, `τ_c = τ · σ / (2 − σ)` floored at `τ / 2`.
/// With no retained labels at all every class keeps `τ`.
pub fn flexmatch_lite_thresholds(counts: &[usize], tau: f64) -> Vec<f64> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![tau; counts.len()];
    }
    counts
        .iter()
        .map(|&n| {
            let sigma = n as f64 / max as f64;
            (tau * sigma / (2.0 - sigma)).max(0.5 * tau).min(tau)
        })
        .collect()
}

/// Sliding window of per-batch retained histograms.
#[derive(Debug, Clone)]
pub struct FlexWindow {
    capacity: usize,
    classes: usize,
    batches: VecDeque<Vec<usize>>,
    totals: Vec<usize>,
}

impl FlexWindow {
    pub fn new(classes: usize, capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            classes,
            batches: VecDeque::new(),
            totals: vec![0; classes],
        }
    }

    pub fn push(&mut self, histogram: Vec<usize>) {
        debug_assert_eq!(histogram.len(), self.classes);
        if self.batches.len() == self.capacity {
            if let Some(old) = self.batches.pop_front() {
                self.totals.iter_mut().zip(&old).for_each(|(t, o)| *t -= o);
            }
        }
        self.totals.iter_mut().zip(&histogram).for_each(|(t, h)| *t += h);
        self.batches.push_back(histogram);
    }

    pub fn counts(&self) -> &[usize] {
        &self.totals
    }

    pub fn thresholds(&self, tau: f64) -> Vec<f64> {
        flexmatch_lite_thresholds(&self.totals, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_counts_keep_tau() {
        assert_eq!(flexmatch_lite_thresholds(&[5, 5, 5], 0.7), vec![0.7; 3]);
        assert_eq!(flexmatch_lite_thresholds(&[0, 0], 0.7), vec![0.7; 2]);
    }

    #[test]
    fn floor_applies() {
        let t = flexmatch_lite_thresholds(&[30, 10], 0.8);
        assert_eq!(t[0], 0.8);
        assert!((t[1] - 0.4).abs() < 1e-12);
        let t = flexmatch_lite_thresholds(&[30, 0], 0.8);
        assert!((t[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn window_forgets() {
        let mut w = FlexWindow::new(2, 2);
        w.push(vec![3, 0]);
        w.push(vec![1, 1]);
        w.push(vec![0, 2]);
        assert_eq!(w.counts(), &[1, 3]);
    }
}
