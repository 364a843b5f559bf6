//! Finite-difference checks, one per differentiable operation plus the
//! composed debiased objective. Each returns the worst relative error for a
//! seed.

use dstlab::autodiff::{Param, Tape, Var};
use dstlab::dst::{dst_losses, DstConfig, DstModel, DstOptions};
use dstlab::harness::prepare;
use dstlab::nn::{dropout, FeatureGenerator, Head, Mode, Module};
use dstlab::rng::{stream, substream, Rng, Stream};
use dstlab::selftrain::{pseudo_label, PseudoLabelPolicy};
use rand::Rng as _;

use super::{fd_max_rel_err, fd_max_rel_err_with, input_stream, jitter, moons_config, random_tensor, rel_err};

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;

pub type Check = fn(u64) -> f64;

pub const CHECKS: [(&str, Check); 7] = [
    ("matmul + bias", matmul_and_bias),
    ("add / sub / relu / scale", elementwise),
    ("detach", detach),
    ("cross-entropy", cross_entropy),
    ("dropout", dropout_mask),
    ("feature generator + heads", layers),
    ("minimax objective", minimax),
];

fn rng(seed: u64) -> Rng {
    substream(seed, Stream::Init, 77)
}

fn weights(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `sum(w ⊙ x)` with a fixed random `w`, so every output coordinate matters.
fn project(tape: &mut Tape, x: Var, w: &[f64]) -> Var {
    let m = tape.mul_mask(x, w.to_vec()).unwrap();
    tape.sum(m)
}

/// Worst error of `check` over all seeds.
pub fn worst_over_seeds(check: Check) -> f64 {
    (0..SEEDS).map(check).fold(0.0, f64::max)
}

pub fn matmul_and_bias(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = Param::new(random_tensor(3, 4, &mut r));
    let b = Param::new(random_tensor(4, 5, &mut r));
    let bias = Param::new(random_tensor(1, 5, &mut r));
    let w = weights(15, &mut r);
    let ps = [a.clone(), b.clone(), bias.clone()];
    fd_max_rel_err(&ps, &mut || {
        let mut t = Tape::new();
        let (va, vb, vc) = (t.param(&a), t.param(&b), t.param(&bias));
        let m = t.matmul(va, vb)?;
        let y = t.add_bias(m, vc)?;
        let l = project(&mut t, y, &w);
        Ok((t, l))
    })
}

pub fn elementwise(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = Param::new(random_tensor(4, 3, &mut r));
    let b = Param::new(random_tensor(4, 3, &mut r));
    let w = weights(12, &mut r);
    let c = r.random_range(-2.0..2.0);
    let ps = [a.clone(), b.clone()];
    fd_max_rel_err(&ps, &mut || {
        let mut t = Tape::new();
        let (va, vb) = (t.param(&a), t.param(&b));
        let s = t.add(va, vb)?;
        let d = t.sub(s, vb)?;
        let d = t.sub(d, vb)?;
        let z = t.relu(d);
        let z = t.scale(z, c);
        let x = t.add(z, va)?;
        let l = project(&mut t, x, &w);
        Ok((t, l))
    })
}

/// The detached branch carries no gradient, so d/dA of
/// `sum(w ⊙ (A + 3·detach(A)))` is exactly `w`.
pub fn detach(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = Param::new(random_tensor(2, 3, &mut r));
    let w = weights(6, &mut r);
    let mut t = Tape::new();
    let va = t.param(&a);
    let frozen = t.detach(va);
    let scaled = t.scale(frozen, 3.0);
    let x = t.add(va, scaled).unwrap();
    let l = project(&mut t, x, &w);
    t.backward(l).unwrap();
    let g = a.grad();
    g.iter().zip(&w).map(|(&g, &w)| rel_err(g, w)).fold(0.0, f64::max)
}

pub fn cross_entropy(seed: u64) -> f64 {
    let mut r = rng(seed);
    let logits = Param::new(random_tensor(6, 4, &mut r).map(|v| 3.0 * v));
    let targets: Vec<i64> = (0..6)
        .map(|i| if i % 3 == 2 { -1 } else { r.random_range(0..4) })
        .collect();
    let ps = [logits.clone()];
    fd_max_rel_err(&ps, &mut || {
        let mut t = Tape::new();
        let v = t.param(&logits);
        let l = t.softmax_cross_entropy(v, &targets, 9, 1e-7)?;
        Ok((t, l))
    })
}

pub fn dropout_mask(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = Param::new(random_tensor(5, 4, &mut r));
    let w = weights(20, &mut r);
    let ps = [a.clone()];
    fd_max_rel_err(&ps, &mut || {
        let mut t = Tape::new();
        let va = t.param(&a);
        let mut mask_rng = stream(seed, Stream::Dropout);
        let y = dropout(&mut t, va, 0.3, &mut Mode::Train(&mut mask_rng))?;
        let l = project(&mut t, y, &w);
        Ok((t, l))
    })
}

pub fn layers(seed: u64) -> f64 {
    let mut r = rng(seed);
    let psi = FeatureGenerator::new(3, 6, 2, &mut r);
    let head = Head::nonlinear(6, 8, 3, 0.2, &mut r).unwrap();
    let x = random_tensor(7, 3, &mut r);
    let targets: Vec<i64> = (0..7).map(|_| r.random_range(0..3)).collect();
    let mut ps = psi.params();
    ps.extend(head.params());
    jitter(&ps, &mut r);
    fd_max_rel_err(&ps, &mut || {
        let mut t = Tape::new();
        let vx = t.constant(x.clone());
        let f = psi.forward(&mut t, vx)?;
        let mut mask_rng = stream(seed, Stream::Dropout);
        let z = head.forward(&mut t, f, &mut Mode::Train(&mut mask_rng))?;
        let l = t.softmax_cross_entropy(z, &targets, 7, 1e-7)?;
        Ok((t, l))
    })
}

/// `L_sup + λ L_pseudo + T` on a real batch, once with every head trainable
/// and once with the worst-case head frozen as in the descent phase.
pub fn minimax(seed: u64) -> f64 {
    let mut config = moons_config("");
    config.model.embedding_dim = 6;
    config.seed = seed;
    let prepared = prepare(&config, None).unwrap();
    let x = input_stream(&config, &prepared.split).nth(seed as usize % 5).unwrap();
    let dst = DstConfig::new(1.0, 0.7, DstOptions::default()).unwrap();
    let mut r = rng(seed);
    let model = DstModel::init(&config.model, 2, 2, &mut r).unwrap();
    jitter(&model.params(), &mut r);
    let policy = PseudoLabelPolicy::new(0.5).unwrap();
    let mut record = pseudo_label(&model, &x.unlabeled_weak, &policy, &x.unlabeled_indices).unwrap();
    for keep in record.retained.iter_mut() {
        *keep = r.random_bool(0.6);
    }
    record.retained[0] = true;

    let all = model.params();
    let worst = model.h_worst.params();
    let trainable: Vec<Param> = all
        .iter()
        .filter(|p| !worst.iter().any(|w| w.same_storage(p)))
        .cloned()
        .collect();
    let build = |freeze: Vec<Param>| {
        let (model, x, record, dst) = (&model, &x, &record, &dst);
        move || {
            let mut drop = stream(seed, Stream::Dropout);
            let l = dst_losses(model, x, Some(record), dst, true, true, &freeze, &mut drop)?;
            Ok((l.tape, l.total))
        }
    };
    let open = fd_max_rel_err(&all, &mut build(Vec::new()));
    let frozen = fd_max_rel_err_with(&all, &trainable, &mut build(worst.clone()));
    open.max(frozen)
}
