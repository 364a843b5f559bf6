use std::mem;

use crate::autodiff::{Param, Tape, Tensor, Var};
use crate::data::StepInputs;
use crate::error::{Error, Result};
use crate::nn::{Mode, Module, SgdOptimizer};
use crate::rng::{stream, Rng, Stream};
use crate::selftrain::{
    ensure_finite, eval_logits, restep, round_sgd, supervised_loss, unlabeled_loss, AlgorithmConfig, AlgorithmKind,
    FlexWindow, HeadView, LabelSource, PseudoBatchRecord, PseudoLabelPolicy, RoundPlan, Rounds, SelfTrainer,
    StepMetrics, TrainSettings,
};

use super::{Alternation, DstConfig, DstModel, DstOptions};

/// Loss terms of one debiased step, still live on their tape.
pub struct DstLosses {
    pub tape: Tape,
    /// `L_L(ψ, h)` on weak labeled views.
    pub l_sup: Var,
    /// `L_U(ψ, h_pseudo, f̂)` on strong unlabeled views, when computed.
    pub l_pseudo: Option<Var>,
    /// `L_U(ψ, h′, f̂) − L_L(ψ, h′)`, when the adversary is active.
    pub adv: Option<Var>,
    /// `L_sup + λ · L_pseudo + T` over the terms that were computed.
    pub total: Var,
}

/// Builds the descent-phase objective. The pseudo term is built when
/// `with_pseudo` and the adversarial term when `with_adv`; parameters in
/// `freeze` enter the tape as constants.
#[allow(clippy::too_many_arguments)]
pub fn dst_losses(
    model: &DstModel,
    inputs: &StepInputs,
    record: Option<&PseudoBatchRecord>,
    config: &DstConfig,
    with_pseudo: bool,
    with_adv: bool,
    freeze: &[Param],
    rng: &mut Rng,
) -> Result<DstLosses> {
    let eps = config.options.clamp_eps;
    let mut tape = Tape::new();
    tape.freeze(freeze);
    let xl = tape.constant(inputs.labeled_weak.clone());
    let fl = model.psi.forward(&mut tape, xl)?;
    let mut mode = Mode::Train(rng);
    let l_sup = supervised_loss(&mut tape, &model.h, fl, &inputs.labels, &mut mode, eps)?;
    let mut total = l_sup;

    let needs_unlabeled = record.is_some() && (with_pseudo || with_adv);
    let fu = if needs_unlabeled {
        let xu = tape.constant(inputs.unlabeled_strong.clone());
        Some(model.psi.forward(&mut tape, xu)?)
    } else {
        None
    };

    let mut l_pseudo = None;
    if let (true, Some(r), Some(fu)) = (with_pseudo, record, fu) {
        let lp = unlabeled_loss(&mut tape, &model.h_pseudo, fu, r, &mut mode, eps)?;
        let w = tape.scale(lp, config.lambda);
        total = tape.add(total, w)?;
        l_pseudo = Some(lp);
    }

    let mut adv = None;
    if with_adv {
        let r = record.ok_or_else(|| Error::Contract("adversarial term needs a pseudo-label record".into()))?;
        let fu = fu.expect("built whenever a record is present");
        let fl_adv = if config.options.detach_labeled_adv_from_psi {
            tape.detach(fl)
        } else {
            fl
        };
        let t = adversarial_term(&mut tape, model, fu, fl_adv, r, &inputs.labels, &mut mode, eps)?;
        total = tape.add(total, t)?;
        adv = Some(t);
    }
    Ok(DstLosses {
        tape,
        l_sup,
        l_pseudo,
        adv,
        total,
    })
}

#[allow(clippy::too_many_arguments)]
fn adversarial_term(
    tape: &mut Tape,
    model: &DstModel,
    fu: Var,
    fl: Var,
    record: &PseudoBatchRecord,
    labels: &[usize],
    mode: &mut Mode<'_>,
    eps: f64,
) -> Result<Var> {
    let lu = unlabeled_loss(tape, &model.h_worst, fu, record, mode, eps)?;
    let ll = supervised_loss(tape, &model.h_worst, fl, labels, mode, eps)?;
    tape.sub(lu, ll)
}

/// `T` with everything but the worst-case head frozen.
fn ascent_objective(
    model: &DstModel,
    inputs: &StepInputs,
    record: &PseudoBatchRecord,
    eps: f64,
    rng: &mut Rng,
) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    tape.freeze(&model.main_params());
    tape.freeze(&model.h_pseudo.params());
    let xl = tape.constant(inputs.labeled_weak.clone());
    let fl = model.psi.forward(&mut tape, xl)?;
    let xu = tape.constant(inputs.unlabeled_strong.clone());
    let fu = model.psi.forward(&mut tape, xu)?;
    let mut mode = Mode::Train(rng);
    let t = adversarial_term(&mut tape, model, fu, fl, record, &inputs.labels, &mut mode, eps)?;
    Ok((tape, t))
}

/// Fraction of retained rows whose eval-mode worst-head prediction on the
/// strong view differs from the pseudo label; `None` if nothing is retained.
pub fn worst_disagreement(model: &DstModel, strong: &Tensor, record: &PseudoBatchRecord) -> Result<Option<f64>> {
    let retained = record.retained_count();
    if retained == 0 {
        return Ok(None);
    }
    let pred = eval_logits(&model.psi, &model.h_worst, strong)?.argmax_rows();
    let differ = (0..record.len())
        .filter(|&i| record.retained[i] && pred[i] != record.predicted_class[i])
        .count();
    Ok(Some(differ as f64 / retained as f64))
}

/// Pseudo-label origin of a debiased variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoOrigin {
    /// The main head `h` of the current model.
    MainHead,
    /// An EMA of `ψ` and `h`.
    EmaOfMainHead,
    /// `h` as it was at the end of the previous round.
    PreviousRoundHead,
}

/// A base algorithm turned debiased: the base decides where pseudo labels
/// come from, only `h_pseudo` learns from them, and `h` sees labeled data only.
pub struct DebiasedTrainer {
    base: AlgorithmKind,
    model: DstModel,
    config: DstConfig,
    policy: PseudoLabelPolicy,
    source: LabelSource,
    opt_main: SgdOptimizer,
    opt_pseudo: SgdOptimizer,
    opt_worst: SgdOptimizer,
    clip_norm: f64,
    classes: usize,
    settings: TrainSettings,
    dropout_rng: Rng,
    rounds: Option<Rounds>,
}

/// Wraps `model` as the debiased variant of `algo.kind`.
pub fn wrap_debiased(
    algo: &AlgorithmConfig,
    model: DstModel,
    options: DstOptions,
    settings: &TrainSettings,
) -> Result<DebiasedTrainer> {
    algo.validate()?;
    let config = DstConfig::new(algo.lambda, algo.tau, options)?;
    let classes = model.h.classes();
    let main = model.inference_view();
    let (source, rounds) = match algo.kind {
        AlgorithmKind::FixMatch => (LabelSource::Current, None),
        AlgorithmKind::FlexMatchLite => (LabelSource::Flex(FlexWindow::new(classes, algo.flex_window)), None),
        AlgorithmKind::MeanTeacher => (LabelSource::ema(&main, algo.ema_decay)?, None),
        AlgorithmKind::NoisyStudent => {
            let plan = RoundPlan::new(algo.rounds, settings.total_steps)?;
            (
                LabelSource::PreviousRound(None),
                Some(Rounds {
                    plan,
                    round: 0,
                    seed: settings.seed,
                    base_sgd: settings.sgd,
                }),
            )
        }
        other => {
            return Err(Error::config(
                "algorithm.kind",
                format!("{} has no debiased variant", other.name()),
            ))
        }
    };
    let sgd = match &rounds {
        Some(r) => round_sgd(settings.sgd, r.plan.len_of(0)),
        None => settings.sgd,
    };
    Ok(DebiasedTrainer {
        base: algo.kind,
        opt_main: SgdOptimizer::new(model.main_params(), sgd),
        opt_pseudo: SgdOptimizer::new(model.h_pseudo.params(), sgd),
        opt_worst: SgdOptimizer::new(model.h_worst.params(), sgd),
        model,
        config,
        policy: PseudoLabelPolicy::new(algo.tau)?,
        source,
        clip_norm: settings.clip_norm,
        classes,
        settings: settings.clone(),
        dropout_rng: stream(settings.seed, Stream::Dropout),
        rounds,
    })
}

impl DebiasedTrainer {
    /// Draws the model from the init stream of `settings.seed`.
    pub fn build(algo: &AlgorithmConfig, options: DstOptions, settings: &TrainSettings) -> Result<Self> {
        settings.spec.validate()?;
        let mut init = stream(settings.seed, Stream::Init);
        let model = DstModel::init(&settings.spec, settings.input_dim, settings.classes, &mut init)?;
        wrap_debiased(algo, model, options, settings)
    }

    pub fn base(&self) -> AlgorithmKind {
        self.base
    }

    pub fn origin(&self) -> PseudoOrigin {
        match self.base {
            AlgorithmKind::MeanTeacher => PseudoOrigin::EmaOfMainHead,
            AlgorithmKind::NoisyStudent => PseudoOrigin::PreviousRoundHead,
            _ => PseudoOrigin::MainHead,
        }
    }

    pub fn model(&self) -> &DstModel {
        &self.model
    }

    pub fn config(&self) -> &DstConfig {
        &self.config
    }

    pub fn source(&self) -> &LabelSource {
        &self.source
    }

    pub fn into_model(self) -> DstModel {
        self.model
    }

    pub fn current_round(&self) -> usize {
        self.rounds.as_ref().map_or(0, |r| r.round)
    }

    /// The pseudo labels the next step would use for these inputs.
    pub fn label(&self, inputs: &StepInputs) -> Result<Option<PseudoBatchRecord>> {
        let main = HeadView {
            psi: &self.model.psi,
            head: &self.model.h,
        };
        self.source
            .label(&main, &inputs.unlabeled_weak, &self.policy, &inputs.unlabeled_indices)
    }

    /// Why the adversarial term is off at `step` for `record`, or `None` if
    /// it is on.
    pub fn adversary_skip_reason(&self, step: usize, record: Option<&PseudoBatchRecord>) -> Option<&'static str> {
        let o = &self.config.options;
        if !o.worst_case {
            Some("worst-case term disabled")
        } else if step < o.warmup_steps_adv {
            Some("adversary warmup")
        } else if record.is_none() {
            Some("no pseudo labels this round")
        } else if o.adv_skip_when_empty && record.is_some_and(|r| r.retained_count() == 0) {
            Some("no retained pseudo labels")
        } else {
            None
        }
    }

    fn advance_round(&mut self, step: usize) -> Result<usize> {
        let Some(rounds) = self.rounds.as_mut() else {
            return Ok(step);
        };
        let r = rounds.plan.round_of(step);
        if r != rounds.round {
            let s = &self.settings;
            let mut rng = rounds.init_rng(r);
            let fresh = DstModel::init(&s.spec, s.input_dim, s.classes, &mut rng)?;
            let previous = mem::replace(&mut self.model, fresh);
            self.source = LabelSource::PreviousRound(Some(previous.into_inference()));
            let sgd = round_sgd(rounds.base_sgd, rounds.plan.len_of(r));
            self.opt_main = SgdOptimizer::new(self.model.main_params(), sgd);
            self.opt_pseudo = SgdOptimizer::new(self.model.h_pseudo.params(), sgd);
            self.opt_worst = SgdOptimizer::new(self.model.h_worst.params(), sgd);
            rounds.round = r;
        }
        Ok(step - rounds.plan.start_of(r))
    }

    fn step_inner(&mut self, inputs: &StepInputs, step: usize, local: usize) -> Result<StepMetrics> {
        let record = self.label(inputs)?;
        let retained = record.as_ref().map_or(0, PseudoBatchRecord::retained_count);
        let adv_skipped = self.adversary_skip_reason(step, record.as_ref());
        let with_adv = adv_skipped.is_none();
        let with_pseudo = self.config.lambda > 0.0 && retained > 0;
        let eps = self.config.options.clamp_eps;
        let two_step = self.config.options.alternation == Alternation::TwoStep;

        if with_adv && two_step {
            let r = record.as_ref().expect("adversary needs a record");
            self.opt_worst.zero_grad();
            let (mut tape, t) = ascent_objective(&self.model, inputs, r, eps, &mut self.dropout_rng)?;
            ensure_finite(tape.scalar(t), step)?;
            let neg = tape.scale(t, -1.0);
            tape.backward(neg)?;
            self.opt_worst.clipped_step(local, self.clip_norm)?;
        }
        let worst = match (&record, with_adv) {
            (Some(r), true) => worst_disagreement(&self.model, &inputs.unlabeled_strong, r)?,
            _ => None,
        };

        self.opt_main.zero_grad();
        self.opt_pseudo.zero_grad();
        self.opt_worst.zero_grad();
        let worst_params = self.model.h_worst.params();
        let freeze: &[Param] = if two_step { &worst_params } else { &[] };
        let losses = dst_losses(
            &self.model,
            inputs,
            record.as_ref(),
            &self.config,
            with_pseudo,
            with_adv,
            freeze,
            &mut self.dropout_rng,
        )?;
        let tape = &losses.tape;
        ensure_finite(tape.scalar(losses.total), step)?;
        tape.backward(losses.total)?;
        if with_adv && !two_step {
            for p in &worst_params {
                p.grad_mut().iter_mut().for_each(|g| *g = -*g);
            }
            self.opt_worst.clipped_step(local, self.clip_norm)?;
        }
        self.opt_main.clipped_step(local, self.clip_norm)?;
        if with_pseudo {
            self.opt_pseudo.clipped_step(local, self.clip_norm)?;
        }
        let metrics = StepMetrics {
            loss_sup: tape.scalar(losses.l_sup),
            loss_pseudo: match losses.l_pseudo {
                Some(v) => Some(tape.scalar(v)),
                None if record.is_some() && self.config.lambda > 0.0 => Some(0.0),
                None => None,
            },
            loss_adv: losses.adv.map(|v| tape.scalar(v)),
            worst_disagreement: worst,
            lr: self.opt_main.lr_at(local),
            round: self.current_round(),
            adv_skipped,
            record,
        };
        self.source
            .after_step(metrics.record.as_ref(), self.classes, &self.model.main_params())?;
        Ok(metrics)
    }
}

impl SelfTrainer for DebiasedTrainer {
    fn name(&self) -> String {
        format!("dst_{}", self.base.name())
    }

    fn train_step(&mut self, inputs: &StepInputs, step: usize) -> Result<StepMetrics> {
        let local = self.advance_round(step)?;
        self.step_inner(inputs, step, local).map_err(|e| restep(e, step))
    }

    fn eval_logits(&self, x: &Tensor) -> Result<Tensor> {
        eval_logits(&self.model.psi, &self.model.h, x)
    }

    fn inference_params(&self) -> Vec<Param> {
        self.model.main_params()
    }

    fn round_plan(&self) -> Option<RoundPlan> {
        self.rounds.as_ref().map(|r| r.plan)
    }
}
