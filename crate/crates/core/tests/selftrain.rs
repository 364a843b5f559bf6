mod common;

use common::equiv::{reduces_to_supervised, ALL_KINDS, DEBIASED_KINDS};
use common::{input_stream, moons_config, params_of};
use dstlab::harness::{build_trainer, prepare, RunConfig};
use dstlab::nn::Module;
use dstlab::rng::{stream, Stream};
use dstlab::selftrain::{
    AlgorithmKind, Classifier, ClassifierTrainer, LabelSource, MutualLearning, Predictor, PseudoLabelPolicy,
    SelfTrainer, UnlabeledView,
};

fn config(kind: AlgorithmKind, extra: &str) -> RunConfig {
    let mut c = moons_config(extra);
    c.algorithm.kind = kind;
    c
}

#[test]
fn zero_weight_is_supervised() {
    // Mutual Learning has two heads and no single-head counterpart.
    for kind in ALL_KINDS.into_iter().filter(|&k| k != AlgorithmKind::MutualLearning) {
        let mut c = config(kind, r#", "total_steps": 60"#);
        c.algorithm.lambda = 0.0;
        c.algorithm.rounds = 1;
        c.algorithm.tau = 0.5;
        let prepared = prepare(&c, None).unwrap();
        let mut subject = build_trainer(&c, &prepared.settings).unwrap();
        let mut s = c.clone();
        s.algorithm.kind = AlgorithmKind::Supervised;
        let mut reference = build_trainer(&s, &prepared.settings).unwrap();
        for (step, x) in input_stream(&c, &prepared.split).take(60).enumerate() {
            subject.train_step(&x, step).unwrap();
            reference.train_step(&x, step).unwrap();
            assert_eq!(
                params_of(&subject.inference_params()),
                params_of(&reference.inference_params()),
                "{kind:?} step {step}"
            );
        }
    }
}

#[test]
fn unreachable_threshold_is_supervised() {
    for kind in ALL_KINDS {
        let mut c = config(kind, r#", "total_steps": 80"#);
        c.algorithm.tau = 1.0;
        reduces_to_supervised(&c, 80).unwrap_or_else(|e| panic!("{kind:?}: {e}"));
    }
    for kind in DEBIASED_KINDS {
        let mut c = config(kind, r#", "total_steps": 80, "dst": {"warmup_steps_adv": 0}"#);
        c.algorithm.tau = 1.0;
        c.algorithm.debiased = true;
        reduces_to_supervised(&c, 80).unwrap_or_else(|e| panic!("debiased {kind:?}: {e}"));
    }
}

#[test]
fn single_round_noisy_student_is_supervised() {
    let mut c = config(AlgorithmKind::NoisyStudent, r#", "total_steps": 50"#);
    c.algorithm.rounds = 1;
    let prepared = prepare(&c, None).unwrap();
    let mut ns = build_trainer(&c, &prepared.settings).unwrap();
    let mut s = c.clone();
    s.algorithm.kind = AlgorithmKind::Supervised;
    let mut sup = build_trainer(&s, &prepared.settings).unwrap();
    for (step, x) in input_stream(&c, &prepared.split).take(50).enumerate() {
        let m = ns.train_step(&x, step).unwrap();
        assert!(m.record.is_none(), "round zero has no teacher");
        sup.train_step(&x, step).unwrap();
        assert_eq!(params_of(&ns.inference_params()), params_of(&sup.inference_params()));
    }
}

#[test]
fn mean_teacher_first_step_is_fixmatch() {
    let c = config(AlgorithmKind::MeanTeacher, "");
    let prepared = prepare(&c, None).unwrap();
    let mut mt = build_trainer(&c, &prepared.settings).unwrap();
    let mut f = c.clone();
    f.algorithm.kind = AlgorithmKind::FixMatch;
    let mut fm = build_trainer(&f, &prepared.settings).unwrap();
    let x = input_stream(&c, &prepared.split).next().unwrap();
    let a = mt.train_step(&x, 0).unwrap();
    let b = fm.train_step(&x, 0).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(params_of(&mt.inference_params()), params_of(&fm.inference_params()));
}

#[test]
fn ema_teacher_replays_student_trajectory() {
    let c = config(AlgorithmKind::MeanTeacher, "");
    let prepared = prepare(&c, None).unwrap();
    let s = &prepared.settings;
    let model = Classifier::init(&s.spec, s.input_dim, s.classes, &mut stream(c.seed, Stream::Init)).unwrap();
    let decay = 0.9;
    let source = LabelSource::ema(&model, decay).unwrap();
    let mut replay = params_of(&model.params());
    let mut t = ClassifierTrainer::new(
        AlgorithmKind::MeanTeacher,
        model,
        s.sgd,
        source,
        UnlabeledView::Strong,
        1.0,
        PseudoLabelPolicy::new(0.7).unwrap(),
        s.clip_norm,
        stream(c.seed, Stream::Dropout),
    );
    for (step, x) in input_stream(&c, &prepared.split).take(40).enumerate() {
        t.train_step(&x, step).unwrap();
        for (r, p) in replay.iter_mut().zip(params_of(&t.model().params())) {
            for (rv, pv) in r.iter_mut().zip(p) {
                *rv = decay * *rv + (1.0 - decay) * pv;
            }
        }
        let LabelSource::Ema { teacher, .. } = t.source() else {
            panic!("source changed kind")
        };
        for (r, p) in replay.iter().zip(params_of(&teacher.params())) {
            for (rv, pv) in r.iter().zip(p) {
                assert!((rv - pv).abs() <= 1e-12, "step {step}: teacher {pv} vs replay {rv}");
            }
        }
    }
}

#[test]
fn noisy_student_teacher_is_frozen_within_a_round() {
    let mut c = config(AlgorithmKind::NoisyStudent, r#", "total_steps": 90"#);
    c.algorithm.rounds = 3;
    c.algorithm.tau = 0.6;
    let prepared = prepare(&c, None).unwrap();
    let s = &prepared.settings;
    let model = Classifier::init(&s.spec, s.input_dim, s.classes, &mut stream(c.seed, Stream::Init)).unwrap();
    let plan = dstlab::selftrain::RoundPlan::new(3, 90).unwrap();
    let mut ns = ClassifierTrainer::new(
        AlgorithmKind::NoisyStudent,
        model,
        s.sgd,
        LabelSource::Nothing,
        UnlabeledView::Strong,
        1.0,
        PseudoLabelPolicy::new(0.6).unwrap(),
        s.clip_norm,
        stream(c.seed, Stream::Dropout),
    )
    .with_rounds(plan, s.spec, c.seed);
    let probe = prepared.eval_x.clone();
    let mut teacher_logits = None;
    for (step, x) in input_stream(&c, &prepared.split).take(90).enumerate() {
        let before = ns.current_round();
        let student_before = ns.model().eval_logits(&probe).unwrap();
        ns.train_step(&x, step).unwrap();
        let LabelSource::PreviousRound(teacher) = ns.source() else {
            panic!("noisy student keeps a previous-round source")
        };
        match teacher {
            None => assert_eq!(ns.current_round(), 0),
            Some(teacher) => {
                let now = teacher.eval_logits(&probe).unwrap();
                if ns.current_round() != before {
                    assert_eq!(
                        now, student_before,
                        "teacher is the final student of the previous round"
                    );
                    teacher_logits = Some(now);
                } else {
                    assert_eq!(Some(&now), teacher_logits.as_ref(), "teacher moved at step {step}");
                }
            }
        }
    }
    assert_eq!(ns.current_round(), 2);
}

#[test]
fn mutual_learning_is_symmetric_in_its_heads() {
    let c = config(AlgorithmKind::MutualLearning, "");
    let prepared = prepare(&c, None).unwrap();
    let s = &prepared.settings;
    let mut init = stream(c.seed, Stream::Init);
    let psi = s.spec.feature_generator(s.input_dim, &mut init);
    let a = s
        .spec
        .head(s.spec.main_head, psi.embedding_dim(), s.classes, &mut init)
        .unwrap();
    let b = s
        .spec
        .head(s.spec.main_head, psi.embedding_dim(), s.classes, &mut init)
        .unwrap();
    let policy = PseudoLabelPolicy::new(0.7).unwrap();
    let mut ab = MutualLearning::new(
        psi.deep_copy(),
        a.deep_copy(),
        b.deep_copy(),
        s.sgd,
        1.0,
        policy.clone(),
        s.clip_norm,
        stream(c.seed, Stream::Dropout),
    );
    let mut ba = MutualLearning::new(
        psi,
        b,
        a,
        s.sgd,
        1.0,
        policy,
        s.clip_norm,
        stream(c.seed, Stream::Dropout),
    );
    for (step, x) in input_stream(&c, &prepared.split).take(30).enumerate() {
        ab.train_step(&x, step).unwrap();
        ba.train_step(&x, step).unwrap();
    }
    let close = |x: Vec<Vec<f64>>, y: Vec<Vec<f64>>| {
        x.iter()
            .flatten()
            .zip(y.iter().flatten())
            .all(|(u, v)| (u - v).abs() <= 1e-9 * (1.0 + u.abs()))
    };
    assert!(close(
        params_of(&ab.head_a().params()),
        params_of(&ba.head_b().params())
    ));
    assert!(close(
        params_of(&ab.head_b().params()),
        params_of(&ba.head_a().params())
    ));
    assert!(close(params_of(&ab.psi().params()), params_of(&ba.psi().params())));
}

#[test]
fn pseudo_labels_are_constants_to_the_loss() {
    // A labeling pass must not leave anything on the parameters' gradients.
    let c = config(AlgorithmKind::FixMatch, "");
    let prepared = prepare(&c, None).unwrap();
    let s = &prepared.settings;
    let model = Classifier::init(&s.spec, s.input_dim, s.classes, &mut stream(c.seed, Stream::Init)).unwrap();
    let x = input_stream(&c, &prepared.split).next().unwrap();
    let policy = PseudoLabelPolicy::new(0.5).unwrap();
    dstlab::selftrain::pseudo_label(&model, &x.unlabeled_weak, &policy, &x.unlabeled_indices).unwrap();
    assert!(model.params().iter().all(|p| p.grad().iter().all(|&g| g == 0.0)));
}
