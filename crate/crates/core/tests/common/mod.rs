#![allow(dead_code)]

use dstlab::autodiff::{Param, Tape, Tensor, Var};
use dstlab::data::{JointBatcher, SslSplit, StepInputs};
use dstlab::harness::RunConfig;
use dstlab::rng::{stream, Rng, Stream};
use dstlab::Result;
use rand::Rng as _;

pub mod equiv;
pub mod grad;
pub mod oracle;

pub const FD_EPS: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Worst relative error between backprop and central differences over every
/// coordinate of `params`. `build` must be deterministic.
pub fn fd_max_rel_err(params: &[Param], build: &mut dyn FnMut() -> Result<(Tape, Var)>) -> f64 {
    fd_max_rel_err_with(params, params, build)
}

/// Like [`fd_max_rel_err`], but only `trainable` is expected to receive
/// gradient; the rest of `all` must come back exactly zero.
pub fn fd_max_rel_err_with(all: &[Param], trainable: &[Param], build: &mut dyn FnMut() -> Result<(Tape, Var)>) -> f64 {
    all.iter().for_each(Param::zero_grad);
    let (tape, loss) = build().unwrap();
    tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for p in all {
        let analytic = p.grad().to_vec();
        if !trainable.iter().any(|t| t.same_storage(p)) {
            assert!(analytic.iter().all(|&g| g == 0.0), "frozen parameter received gradient");
            continue;
        }
        for (i, &a) in analytic.iter().enumerate() {
            let orig = p.value().data()[i];
            p.value_mut().data_mut()[i] = orig + FD_EPS;
            let (t, l) = build().unwrap();
            let up = t.scalar(l);
            p.value_mut().data_mut()[i] = orig - FD_EPS;
            let (t, l) = build().unwrap();
            let down = t.scalar(l);
            p.value_mut().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

/// Moves every coordinate off its initial value. Zero biases put ReLUs fed
/// by dead rows exactly on the kink, where central differences are
/// meaningless.
pub fn jitter(params: &[Param], rng: &mut Rng) {
    for p in params {
        p.value_mut()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
}

/// The step inputs the harness would feed for `config` on `split`.
pub fn input_stream<'a>(config: &'a RunConfig, split: &'a SslSplit) -> impl Iterator<Item = StepInputs> + 'a {
    let mut batcher = JointBatcher::for_split(split, config.batch, stream(config.seed, Stream::Shuffle)).unwrap();
    let mut aug = stream(config.seed, Stream::Augment);
    std::iter::repeat_with(move || {
        let batch = batcher.next_joint_batch();
        StepInputs::assemble(split, &batch, &config.augmentation, &mut aug).unwrap()
    })
}

pub fn params_of(values: &[Param]) -> Vec<Vec<f64>> {
    values.iter().map(|p| p.value().data().to_vec()).collect()
}

pub fn moons_config(json_extra: &str) -> RunConfig {
    let text = format!(
        r#"{{"dataset": {{"generator": "two_moons", "n": 400, "noise": 0.1}},
            "model": {{"embedding_dim": 16, "depth": 2}},
            "batch": {{"labeled_batch": 8, "unlabeled_ratio": 3}},
            "bias_reference_steps": 0 {json_extra}}}"#
    );
    RunConfig::from_json(&text).unwrap()
}
