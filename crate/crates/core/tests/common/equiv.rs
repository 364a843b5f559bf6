//! Lock-step comparison of a trainer against its supervised counterpart.

use dstlab::dst::{DebiasedTrainer, DstModel};
use dstlab::harness::{build_trainer, prepare, RunConfig};
use dstlab::nn::{Module, Schedule, SgdConfig};
use dstlab::rng::{stream, substream, Stream};
use dstlab::selftrain::{
    AlgorithmKind, Classifier, ClassifierTrainer, LabelSource, PseudoLabelPolicy, RoundPlan, SelfTrainer, UnlabeledView,
};

use super::{input_stream, params_of};

pub const ALL_KINDS: [AlgorithmKind; 7] = [
    AlgorithmKind::Supervised,
    AlgorithmKind::PseudoLabel,
    AlgorithmKind::FixMatch,
    AlgorithmKind::FlexMatchLite,
    AlgorithmKind::MeanTeacher,
    AlgorithmKind::NoisyStudent,
    AlgorithmKind::MutualLearning,
];

pub const DEBIASED_KINDS: [AlgorithmKind; 4] = [
    AlgorithmKind::FixMatch,
    AlgorithmKind::FlexMatchLite,
    AlgorithmKind::MeanTeacher,
    AlgorithmKind::NoisyStudent,
];

fn round_sgd(base: SgdConfig, len: usize) -> SgdConfig {
    SgdConfig {
        schedule: match base.schedule {
            Schedule::Constant => Schedule::Constant,
            Schedule::Cosine { .. } => Schedule::Cosine { total_steps: len },
        },
        ..base
    }
}

/// Supervised trainer drawn from the init a round-based run uses for `round`.
fn supervised_round(
    config: &RunConfig,
    settings: &dstlab::selftrain::TrainSettings,
    plan: RoundPlan,
    round: usize,
) -> ClassifierTrainer {
    let mut init = if round == 0 {
        stream(config.seed, Stream::Init)
    } else {
        substream(config.seed, Stream::Init, round as u64)
    };
    let model = Classifier::init(&settings.spec, settings.input_dim, settings.classes, &mut init).unwrap();
    ClassifierTrainer::new(
        AlgorithmKind::Supervised,
        model,
        round_sgd(settings.sgd, plan.len_of(round)),
        LabelSource::Nothing,
        UnlabeledView::Strong,
        config.algorithm.lambda,
        PseudoLabelPolicy::new(config.algorithm.tau).unwrap(),
        settings.clip_norm,
        stream(config.seed, Stream::Dropout),
    )
}

fn reference_config(config: &RunConfig) -> RunConfig {
    let mut r = config.clone();
    r.algorithm.debiased = false;
    if r.algorithm.kind == AlgorithmKind::MutualLearning {
        r.algorithm.lambda = 0.0;
    } else {
        r.algorithm.kind = AlgorithmKind::Supervised;
    }
    r
}

/// Runs `config` for `steps` next to its supervised counterpart and checks
/// that the inference parameters agree bit for bit after every step, and
/// that a debiased model's auxiliary heads never leave their initial values.
/// Every step must retain no pseudo labels.
///
/// The counterpart of Mutual Learning is its own `λ = 0` objective; round
/// based runs restart the counterpart at every round boundary from the same
/// fresh init.
pub fn reduces_to_supervised(config: &RunConfig, steps: usize) -> Result<(), String> {
    let prepared = prepare(config, None).map_err(|e| e.to_string())?;
    let settings = &prepared.settings;
    let mut debiased = if config.algorithm.debiased {
        Some(DebiasedTrainer::build(&config.algorithm, config.dst, settings).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let mut plain = match debiased {
        Some(_) => None,
        None => Some(build_trainer(config, settings).map_err(|e| e.to_string())?),
    };
    let plan = (config.algorithm.kind == AlgorithmKind::NoisyStudent)
        .then(|| RoundPlan::new(config.algorithm.rounds, config.total_steps).unwrap());
    let ref_config = reference_config(config);
    let mut reference: Box<dyn SelfTrainer> = match plan {
        Some(p) => Box::new(supervised_round(config, settings, p, 0)),
        None => build_trainer(&ref_config, settings).map_err(|e| e.to_string())?,
    };
    let aux = |t: &DebiasedTrainer| {
        let m = t.model();
        let mut p = m.h_pseudo.params();
        p.extend(m.h_worst.params());
        params_of(&p)
    };
    let mut aux_before = debiased.as_ref().map(aux);
    let mut round = 0;

    for (step, inputs) in input_stream(config, &prepared.split).take(steps).enumerate() {
        let mut local = step;
        if let Some(p) = plan {
            let r = p.round_of(step);
            if r != round {
                reference = Box::new(supervised_round(config, settings, p, r));
                round = r;
                if let Some(m) = aux_before.as_mut() {
                    let mut init = substream(config.seed, Stream::Init, r as u64);
                    let fresh =
                        DstModel::init(&settings.spec, settings.input_dim, settings.classes, &mut init).unwrap();
                    let mut ps = fresh.h_pseudo.params();
                    ps.extend(fresh.h_worst.params());
                    *m = params_of(&ps);
                }
            }
            local = step - p.start_of(r);
        }
        let subject: &mut dyn SelfTrainer = match (&mut debiased, &mut plain) {
            (Some(d), _) => d,
            (None, Some(p)) => p.as_mut(),
            _ => unreachable!(),
        };
        let m = subject.train_step(&inputs, step).map_err(|e| e.to_string())?;
        if m.retained_count() > 0 {
            return Err(format!("step {step}: {} pseudo labels retained", m.retained_count()));
        }
        reference.train_step(&inputs, local).map_err(|e| e.to_string())?;
        if params_of(&subject.inference_params()) != params_of(&reference.inference_params()) {
            return Err(format!("step {step}: parameters left the supervised trajectory"));
        }
        if let Some(d) = &debiased {
            let now = aux(d);
            if Some(&now) != aux_before.as_ref() {
                return Err(format!("step {step}: auxiliary heads moved"));
            }
            aux_before = Some(now);
        }
    }
    Ok(())
}

/// Trains the debiased `config` for `steps` and checks that `h_pseudo` and
/// `h_worst` stay put on every step that retains no pseudo labels and move
/// on every step that does. Returns the number of empty and non-empty steps.
pub fn aux_heads_idle_on_empty(config: &RunConfig, steps: usize) -> Result<(usize, usize), String> {
    let prepared = prepare(config, None).map_err(|e| e.to_string())?;
    let mut t = DebiasedTrainer::build(&config.algorithm, config.dst, &prepared.settings).map_err(|e| e.to_string())?;
    let aux = |t: &DebiasedTrainer| {
        let mut p = t.model().h_pseudo.params();
        p.extend(t.model().h_worst.params());
        params_of(&p)
    };
    let (mut empty, mut full) = (0, 0);
    for (step, x) in input_stream(config, &prepared.split).take(steps).enumerate() {
        let round = t.current_round();
        let before = aux(&t);
        let m = t.train_step(&x, step).map_err(|e| e.to_string())?;
        if t.current_round() != round {
            continue;
        }
        let moved = aux(&t) != before;
        if m.retained_count() == 0 {
            empty += 1;
            if moved {
                return Err(format!("step {step}: auxiliary heads moved on an empty batch"));
            }
            if m.adv_skipped.is_none() {
                return Err(format!("step {step}: adversary ran on an empty batch"));
            }
        } else {
            full += 1;
            if !moved {
                return Err(format!(
                    "step {step}: auxiliary heads idle with {} retained",
                    m.retained_count()
                ));
            }
        }
    }
    Ok((empty, full))
}
