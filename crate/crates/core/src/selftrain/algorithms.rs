use std::mem;

use crate::autodiff::{Param, Tape, Tensor};
use crate::data::StepInputs;
use crate::error::{Error, Result};
use crate::nn::{dropout, FeatureGenerator, Head, Mode, Module, Schedule, SgdConfig, SgdOptimizer};
use crate::rng::{stream, substream, Rng, Stream};

use super::model::{Classifier, HeadView, ModelSpec, Predictor};
use super::pseudo::{pseudo_label, supervised_loss, unlabeled_loss, PseudoBatchRecord, PseudoLabelPolicy, CLAMP_EPS};
use super::source::LabelSource;
use super::{ensure_finite, AlgorithmConfig, AlgorithmKind, RoundPlan, SelfTrainer, StepMetrics};

/// Which augmented view of the unlabeled batch the pseudo labels supervise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnlabeledView {
    Weak,
    Strong,
}

impl UnlabeledView {
    pub fn pick(self, inputs: &StepInputs) -> &Tensor {
        match self {
            Self::Weak => &inputs.unlabeled_weak,
            Self::Strong => &inputs.unlabeled_strong,
        }
    }
}

/// One SGD step of a single-head classifier on
/// `L_sup + λ · L_U(record, unlabeled)`.
///
/// The unlabeled term is skipped entirely when `λ = 0` or nothing is
/// retained, so such a step is bit-identical to a supervised one. Returns the
/// supervised loss and, when computed, the unlabeled loss.
#[allow(clippy::too_many_arguments)]
pub fn classifier_step(
    model: &Classifier,
    opt: &mut SgdOptimizer,
    inputs: &StepInputs,
    record: Option<&PseudoBatchRecord>,
    unlabeled: &Tensor,
    lambda: f64,
    feature_noise: f64,
    rng: &mut Rng,
    opt_step: usize,
    clip_norm: f64,
) -> Result<(f64, Option<f64>)> {
    opt.zero_grad();
    let mut tape = Tape::new();
    let xl = tape.constant(inputs.labeled_weak.clone());
    let fl = model.psi.forward(&mut tape, xl)?;
    let mut mode = Mode::Train(rng);
    let l_sup = supervised_loss(&mut tape, &model.head, fl, &inputs.labels, &mut mode, CLAMP_EPS)?;
    let mut total = l_sup;
    let mut l_pseudo = None;
    if let Some(r) = record.filter(|r| lambda > 0.0 && r.retained_count() > 0) {
        let xu = tape.constant(unlabeled.clone());
        let mut fu = model.psi.forward(&mut tape, xu)?;
        if feature_noise > 0.0 {
            fu = dropout(&mut tape, fu, feature_noise, &mut mode)?;
        }
        let lu = unlabeled_loss(&mut tape, &model.head, fu, r, &mut mode, CLAMP_EPS)?;
        l_pseudo = Some(tape.scalar(lu));
        let weighted = tape.scale(lu, lambda);
        total = tape.add(total, weighted)?;
    } else if record.is_some() && lambda > 0.0 {
        l_pseudo = Some(0.0);
    }
    ensure_finite(tape.scalar(total), opt_step)?;
    tape.backward(total)?;
    opt.clipped_step(opt_step, clip_norm)?;
    Ok((tape.scalar(l_sup), l_pseudo))
}

pub(crate) fn round_sgd(base: SgdConfig, len: usize) -> SgdConfig {
    let schedule = match base.schedule {
        Schedule::Constant => Schedule::Constant,
        Schedule::Cosine { .. } => Schedule::Cosine { total_steps: len },
    };
    SgdConfig { schedule, ..base }
}

/// Re-initialization state for round-based training.
#[derive(Debug, Clone)]
pub(crate) struct Rounds {
    pub plan: RoundPlan,
    pub round: usize,
    pub seed: u64,
    pub base_sgd: SgdConfig,
}

impl Rounds {
    pub fn init_rng(&self, round: usize) -> Rng {
        substream(self.seed, Stream::Init, round as u64)
    }
}

/// Every single-head baseline: Supervised, Pseudo Label, FixMatch,
/// FlexMatch-lite, Mean Teacher and Noisy Student differ only in the label
/// source, the supervised view and round handling.
pub struct ClassifierTrainer {
    kind: AlgorithmKind,
    model: Classifier,
    opt: SgdOptimizer,
    source: LabelSource,
    view: UnlabeledView,
    lambda: f64,
    policy: PseudoLabelPolicy,
    clip_norm: f64,
    classes: usize,
    spec: ModelSpec,
    input_dim: usize,
    dropout_rng: Rng,
    rounds: Option<Rounds>,
}

impl ClassifierTrainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: AlgorithmKind,
        model: Classifier,
        sgd: SgdConfig,
        source: LabelSource,
        view: UnlabeledView,
        lambda: f64,
        policy: PseudoLabelPolicy,
        clip_norm: f64,
        dropout_rng: Rng,
    ) -> Self {
        let opt = SgdOptimizer::new(model.params(), sgd);
        let classes = model.head.classes();
        let input_dim = model.psi.input_dim();
        Self {
            kind,
            model,
            opt,
            source,
            view,
            lambda,
            policy,
            clip_norm,
            classes,
            spec: ModelSpec::default(),
            input_dim,
            dropout_rng,
            rounds: None,
        }
    }

    /// Turns the trainer into a round-based one: at each round boundary the
    /// current model becomes the frozen teacher and a fresh student is drawn
    /// from the round's init substream.
    pub fn with_rounds(mut self, plan: RoundPlan, spec: ModelSpec, seed: u64) -> Self {
        let base_sgd = *self.opt.config();
        self.opt = SgdOptimizer::new(self.model.params(), round_sgd(base_sgd, plan.len_of(0)));
        self.spec = spec;
        self.rounds = Some(Rounds {
            plan,
            round: 0,
            seed,
            base_sgd,
        });
        self.source = LabelSource::PreviousRound(None);
        self
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn source(&self) -> &LabelSource {
        &self.source
    }

    pub fn optimizer(&self) -> &SgdOptimizer {
        &self.opt
    }

    pub fn current_round(&self) -> usize {
        self.rounds.as_ref().map_or(0, |r| r.round)
    }

    fn advance_round(&mut self, step: usize) -> Result<usize> {
        let Some(rounds) = self.rounds.as_mut() else {
            return Ok(step);
        };
        let r = rounds.plan.round_of(step);
        if r != rounds.round {
            let mut rng = rounds.init_rng(r);
            let student = Classifier::init(&self.spec, self.input_dim, self.classes, &mut rng)?;
            let teacher = mem::replace(&mut self.model, student);
            self.source = LabelSource::PreviousRound(Some(teacher));
            self.opt = SgdOptimizer::new(self.model.params(), round_sgd(rounds.base_sgd, rounds.plan.len_of(r)));
            rounds.round = r;
        }
        Ok(step - rounds.plan.start_of(r))
    }
}

impl SelfTrainer for ClassifierTrainer {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn train_step(&mut self, inputs: &StepInputs, step: usize) -> Result<StepMetrics> {
        let local = self.advance_round(step)?;
        let record = self.source.label(
            &self.model,
            &inputs.unlabeled_weak,
            &self.policy,
            &inputs.unlabeled_indices,
        )?;
        let noise = if self.current_round() > 0 {
            self.spec.dropout
        } else {
            0.0
        };
        let (loss_sup, loss_pseudo) = classifier_step(
            &self.model,
            &mut self.opt,
            inputs,
            record.as_ref(),
            self.view.pick(inputs),
            self.lambda,
            noise,
            &mut self.dropout_rng,
            local,
            self.clip_norm,
        )
        .map_err(|e| restep(e, step))?;
        self.source
            .after_step(record.as_ref(), self.classes, &self.model.params())?;
        Ok(StepMetrics {
            loss_sup,
            loss_pseudo,
            record,
            lr: self.opt.lr_at(local),
            round: self.current_round(),
            ..Default::default()
        })
    }

    fn eval_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.model.eval_logits(x)
    }

    fn inference_params(&self) -> Vec<Param> {
        self.model.params()
    }

    fn round_plan(&self) -> Option<RoundPlan> {
        self.rounds.as_ref().map(|r| r.plan)
    }
}

/// Reports non-finite losses at the global step rather than the round-local one.
pub(crate) fn restep(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFinite { step },
        other => other,
    }
}

/// Two heads on a shared feature generator, each trained on the other's
/// retained pseudo labels.
pub struct MutualLearning {
    psi: FeatureGenerator,
    head_a: Head,
    head_b: Head,
    opt: SgdOptimizer,
    lambda: f64,
    policy: PseudoLabelPolicy,
    clip_norm: f64,
    dropout_rng: Rng,
}

impl MutualLearning {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        psi: FeatureGenerator,
        head_a: Head,
        head_b: Head,
        sgd: SgdConfig,
        lambda: f64,
        policy: PseudoLabelPolicy,
        clip_norm: f64,
        dropout_rng: Rng,
    ) -> Self {
        let mut params = psi.params();
        params.extend(head_a.params());
        params.extend(head_b.params());
        Self {
            opt: SgdOptimizer::new(params, sgd),
            psi,
            head_a,
            head_b,
            lambda,
            policy,
            clip_norm,
            dropout_rng,
        }
    }

    pub fn psi(&self) -> &FeatureGenerator {
        &self.psi
    }

    pub fn head_a(&self) -> &Head {
        &self.head_a
    }

    pub fn head_b(&self) -> &Head {
        &self.head_b
    }
}

impl SelfTrainer for MutualLearning {
    fn name(&self) -> String {
        AlgorithmKind::MutualLearning.name().to_string()
    }

    fn train_step(&mut self, inputs: &StepInputs, step: usize) -> Result<StepMetrics> {
        let view_a = HeadView {
            psi: &self.psi,
            head: &self.head_a,
        };
        let view_b = HeadView {
            psi: &self.psi,
            head: &self.head_b,
        };
        let rec_a = pseudo_label(&view_a, &inputs.unlabeled_weak, &self.policy, &inputs.unlabeled_indices)?;
        let rec_b = pseudo_label(&view_b, &inputs.unlabeled_weak, &self.policy, &inputs.unlabeled_indices)?;

        self.opt.zero_grad();
        let mut tape = Tape::new();
        let xl = tape.constant(inputs.labeled_weak.clone());
        let fl = self.psi.forward(&mut tape, xl)?;
        let mut mode = Mode::Train(&mut self.dropout_rng);
        let la = supervised_loss(&mut tape, &self.head_a, fl, &inputs.labels, &mut mode, CLAMP_EPS)?;
        let lb = supervised_loss(&mut tape, &self.head_b, fl, &inputs.labels, &mut mode, CLAMP_EPS)?;
        let loss_sup = 0.5 * (tape.scalar(la) + tape.scalar(lb));
        let mut total = tape.add(la, lb)?;
        let mut loss_pseudo = None;
        if self.lambda > 0.0 {
            let mut value = 0.0;
            let pairs = [(&self.head_b, &rec_a), (&self.head_a, &rec_b)];
            let mut fu = None;
            for (student, labels) in pairs {
                if labels.retained_count() == 0 {
                    continue;
                }
                let f = match fu {
                    Some(f) => f,
                    None => {
                        let xu = tape.constant(inputs.unlabeled_strong.clone());
                        let f = self.psi.forward(&mut tape, xu)?;
                        fu = Some(f);
                        f
                    }
                };
                let lu = unlabeled_loss(&mut tape, student, f, labels, &mut mode, CLAMP_EPS)?;
                value += tape.scalar(lu);
                let w = tape.scale(lu, self.lambda);
                total = tape.add(total, w)?;
            }
            loss_pseudo = Some(value);
        }
        ensure_finite(tape.scalar(total), step)?;
        tape.backward(total)?;
        self.opt.clipped_step(step, self.clip_norm)?;
        Ok(StepMetrics {
            loss_sup,
            loss_pseudo,
            record: Some(rec_a),
            lr: self.opt.lr_at(step),
            ..Default::default()
        })
    }

    fn eval_logits(&self, x: &Tensor) -> Result<Tensor> {
        HeadView {
            psi: &self.psi,
            head: &self.head_a,
        }
        .eval_logits(x)
    }

    fn inference_params(&self) -> Vec<Param> {
        let mut p = self.psi.params();
        p.extend(self.head_a.params());
        p
    }
}

/// Everything a trainer needs besides the algorithm choice.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub classes: usize,
    pub sgd: SgdConfig,
    pub clip_norm: f64,
    pub total_steps: usize,
    pub seed: u64,
}

/// Builds a non-debiased trainer from its config. Models are drawn from the
/// init stream of `seed` and dropout from the dropout stream, so every
/// algorithm starts from the same weights as the supervised baseline.
pub fn build_baseline(cfg: &AlgorithmConfig, settings: &TrainSettings) -> Result<Box<dyn SelfTrainer>> {
    cfg.validate()?;
    settings.spec.validate()?;
    let mut init = stream(settings.seed, Stream::Init);
    let dropout_rng = stream(settings.seed, Stream::Dropout);
    let policy = PseudoLabelPolicy::new(cfg.tau)?;
    let s = settings;
    if cfg.kind == AlgorithmKind::MutualLearning {
        let psi = s.spec.feature_generator(s.input_dim, &mut init);
        let a = s
            .spec
            .head(s.spec.main_head, psi.embedding_dim(), s.classes, &mut init)?;
        let b = s
            .spec
            .head(s.spec.main_head, psi.embedding_dim(), s.classes, &mut init)?;
        return Ok(Box::new(MutualLearning::new(
            psi,
            a,
            b,
            s.sgd,
            cfg.lambda,
            policy,
            s.clip_norm,
            dropout_rng,
        )));
    }
    let model = Classifier::init(&s.spec, s.input_dim, s.classes, &mut init)?;
    let (source, view) = match cfg.kind {
        AlgorithmKind::Supervised => (LabelSource::Nothing, UnlabeledView::Strong),
        AlgorithmKind::PseudoLabel => (LabelSource::Current, UnlabeledView::Weak),
        AlgorithmKind::FixMatch => (LabelSource::Current, UnlabeledView::Strong),
        AlgorithmKind::FlexMatchLite => (
            LabelSource::Flex(super::FlexWindow::new(s.classes, cfg.flex_window)),
            UnlabeledView::Strong,
        ),
        AlgorithmKind::MeanTeacher => (LabelSource::ema(&model, cfg.ema_decay)?, UnlabeledView::Strong),
        AlgorithmKind::NoisyStudent => (LabelSource::PreviousRound(None), UnlabeledView::Strong),
        AlgorithmKind::MutualLearning => unreachable!("handled above"),
    };
    let mut trainer = ClassifierTrainer::new(
        cfg.kind,
        model,
        s.sgd,
        source,
        view,
        cfg.lambda,
        policy,
        s.clip_norm,
        dropout_rng,
    );
    trainer.spec = s.spec;
    if cfg.kind == AlgorithmKind::NoisyStudent {
        trainer = trainer.with_rounds(RoundPlan::new(cfg.rounds, s.total_steps)?, s.spec, s.seed);
    }
    Ok(Box::new(trainer))
}
