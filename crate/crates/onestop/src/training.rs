//! The staged training procedure.
//!
//! Training runs up to three stages in a fixed curriculum order, each a
//! normal epoch loop over the same data but with a different loss blend:
//!
//! 1. `question_only` — lambda forced to 1, training only the generator;
//! 2. `span_only` — lambda forced to 0, training only the span heads
//!    (the generator path still runs for teacher forcing, but its
//!    parameters receive zero gradient);
//! 3. `joint` — the configured lambda blends both objectives.
//!
//! Each stage gets a fresh optimizer with linear learning-rate warmup,
//! global-norm gradient clipping, per-epoch validation, early stopping, and
//! best-checkpoint tracking. An optional denoising pass can run before the
//! curriculum: documents with tokens randomly replaced by `<unk>` are
//! "questions" to reconstruct, which pretrains the encoder–decoder alone.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_batches, DataError, Example, EOS, UNK};
use crate::inference::extract_span;
use crate::metrics::span_token_f1;
use crate::model::{LossBreakdown, ModelError, OneStopModel};
use crate::numcore::{clip_global_norm, Adam, AdamConfig, Checkpoint, NumError, Scalar};
use crate::transformer::{DropoutMode, Graph};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(
        "stages must appear at most once each, in the order \
         question_only, span_only, joint; got {found:?}"
    )]
    InvalidStageOrder { found: Vec<Stage> },
    #[error("non-finite loss in {stage:?} at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss {
        stage: Stage,
        epoch: usize,
        step: usize,
        value: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    QuestionOnly,
    SpanOnly,
    Joint,
}

impl Stage {
    fn rank(self) -> u8 {
        match self {
            Stage::QuestionOnly => 0,
            Stage::SpanOnly => 1,
            Stage::Joint => 2,
        }
    }

    /// The loss blend this stage trains with.
    pub fn lambda(self, joint_lambda: f64) -> f64 {
        match self {
            Stage::QuestionOnly => 1.0,
            Stage::SpanOnly => 0.0,
            Stage::Joint => joint_lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: Stage,
    pub epochs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Blend used by the `joint` stage: 1 is pure question generation,
    /// 0 pure span extraction.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of each stage's total steps spent ramping the learning rate
    /// up linearly from zero.
    pub warmup_ratio: f64,
    /// Gradients are rescaled so their global L2 norm never exceeds this.
    pub clip_norm: f64,
    /// Consecutive non-improving validation epochs tolerated before a stage
    /// stops early.
    pub patience: usize,
    pub seed: u64,
    pub stages: Vec<StageSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.2,
            lr: 1e-4,
            batch_size: 16,
            warmup_ratio: 0.05,
            clip_norm: 1.0,
            patience: 2,
            seed: 0,
            stages: vec![
                StageSpec {
                    stage: Stage::QuestionOnly,
                    epochs: 2,
                },
                StageSpec {
                    stage: Stage::SpanOnly,
                    epochs: 2,
                },
                StageSpec {
                    stage: Stage::Joint,
                    epochs: 4,
                },
            ],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(TrainError::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(TrainError::Config(format!(
                "warmup_ratio {} outside [0, 1]",
                self.warmup_ratio
            )));
        }
        if self.clip_norm <= 0.0 {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        let stages: Vec<Stage> = self.stages.iter().map(|s| s.stage).collect();
        let ordered = !stages.is_empty()
            && stages.windows(2).all(|w| w[0].rank() < w[1].rank())
            && self.stages.iter().all(|s| s.epochs >= 1);
        if !ordered {
            return Err(TrainError::InvalidStageOrder { found: stages });
        }
        Ok(())
    }
}

fn warmup_steps(ratio: f64, total_steps: usize) -> usize {
    (ratio * total_steps as f64).ceil() as usize
}

/// Tracks the best validation loss and how long since it improved.
struct EarlyStop {
    best: f64,
    since_improve: usize,
    patience: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        EarlyStop {
            best: f64::INFINITY,
            since_improve: 0,
            patience,
        }
    }

    /// Returns `(improved, should_stop)`.
    fn observe(&mut self, value: f64) -> (bool, bool) {
        if value < self.best {
            self.best = value;
            self.since_improve = 0;
            (true, false)
        } else {
            self.since_improve += 1;
            (false, self.since_improve >= self.patience)
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ValReport {
    pub phi_lm: f64,
    pub phi_start: f64,
    pub phi_end: f64,
    pub phi_total: f64,
    /// Teacher-forced span exact match against the gold span.
    pub exact_match: f64,
    /// Teacher-forced span token-overlap F1.
    pub token_f1: f64,
}

/// Eval-mode forward over `examples`: mean losses at the given blend, plus
/// teacher-forced span accuracy (the argmax span given the gold question).
pub fn evaluate<S: Scalar>(
    model: &OneStopModel<S>,
    examples: &[Example],
    lambda: f64,
) -> Result<ValReport, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::Config("evaluate: no examples".into()));
    }
    let mut sums = [0.0f64; 4];
    let mut em = 0.0;
    let mut f1 = 0.0;
    for ex in examples {
        let mut g = Graph::new(&model.params);
        let nodes = model.example_nodes(
            &mut g,
            &ex.doc,
            ex.doc.len(),
            &ex.question,
            (ex.start, ex.end),
            lambda,
            &mut DropoutMode::Eval,
        )?;
        sums[0] += g.tape.scalar_value(nodes.phi_lm).into_f64();
        sums[1] += g.tape.scalar_value(nodes.phi_start).into_f64();
        sums[2] += g.tape.scalar_value(nodes.phi_end).into_f64();
        sums[3] += g.tape.scalar_value(nodes.phi_total).into_f64();
        let keep = vec![true; ex.doc.len()];
        let mask = crate::numcore::Mask::broadcast_keys(1, &keep);
        let ps = g.tape.softmax(nodes.start_scores, Some(&mask))?;
        let pe = g.tape.softmax(nodes.end_scores, Some(&mask))?;
        let (s, e, _) = extract_span(
            g.tape.value(ps).data(),
            g.tape.value(pe).data(),
            ex.doc.len(),
            ex.doc.len(),
        );
        if (s, e) == (ex.start, ex.end) {
            em += 1.0;
        }
        f1 += span_token_f1((s, e), (ex.start, ex.end));
    }
    let n = examples.len() as f64;
    Ok(ValReport {
        phi_lm: sums[0] / n,
        phi_start: sums[1] / n,
        phi_end: sums[2] / n,
        phi_total: sums[3] / n,
        exact_match: em / n,
        token_f1: f1 / n,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepLog {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub global_step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub val: Option<ValReport>,
    pub improved: bool,
}

pub enum TrainEvent<'a> {
    StageStart { stage: Stage, planned_steps: usize },
    Step(&'a StepLog),
    Epoch(&'a EpochLog),
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub lambda: f64,
    pub epochs_run: usize,
    pub steps_run: usize,
    pub best_val_phi: Option<f64>,
    pub final_val: Option<ValReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    pub total_steps: usize,
}

/// Runs the staged curriculum on `model`. Validation (when `val` is
/// non-empty) drives early stopping and, when `checkpoint` is given,
/// best-weights tracking: the stage's best parameters are restored before
/// the next stage starts. `on_event` observes every step and epoch.
pub fn run_schedule<S: Scalar>(
    model: &mut OneStopModel<S>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    on_event: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("no training examples".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stages = Vec::new();
    let mut global_step = 0usize;
    for spec in &cfg.stages {
        let lambda = spec.stage.lambda(cfg.lambda);
        let shuffle_seed = master.next_u64();
        let dropout_seed = master.next_u64();
        let report = run_stage(
            model,
            train,
            val,
            cfg,
            spec,
            lambda,
            shuffle_seed,
            dropout_seed,
            checkpoint,
            &mut global_step,
            on_event,
        )?;
        stages.push(report);
    }
    Ok(TrainReport {
        stages,
        total_steps: global_step,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_stage<S: Scalar>(
    model: &mut OneStopModel<S>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    spec: &StageSpec,
    lambda: f64,
    shuffle_seed: u64,
    dropout_seed: u64,
    checkpoint: Option<&Path>,
    global_step: &mut usize,
    on_event: &mut dyn FnMut(&TrainEvent),
) -> Result<StageReport, TrainError> {
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let planned_steps = spec.epochs * batches_per_epoch;
    on_event(&TrainEvent::StageStart {
        stage: spec.stage,
        planned_steps,
    });

    let mut adam: Adam<S> = Adam::new(AdamConfig {
        lr: cfg.lr,
        warmup_steps: warmup_steps(cfg.warmup_ratio, planned_steps),
        ..AdamConfig::default()
    });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut order: Vec<Example> = train.to_vec();
    let mut stopper = EarlyStop::new(cfg.patience.max(1));
    let mut best_saved = false;
    let mut epochs_run = 0;
    let mut steps_run = 0;
    let mut final_val = None;

    for epoch in 0..spec.epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut shuffle_rng);
        let batches = make_batches(&order, cfg.batch_size)?;
        for (step, batch) in batches.iter().enumerate() {
            let mut drop_mode = if model.config.dropout > 0.0 {
                DropoutMode::Train {
                    rate: model.config.dropout,
                    rng: ChaCha8Rng::seed_from_u64(drop_rng.next_u64()),
                }
            } else {
                DropoutMode::Eval
            };
            let mut g = Graph::new(&model.params);
            let (loss_node, breakdown) =
                model.batch_loss(&mut g, batch, lambda, &mut drop_mode)?;
            if !breakdown.phi_total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    stage: spec.stage,
                    epoch,
                    step,
                    value: breakdown.phi_total,
                });
            }
            g.tape.backward(loss_node)?;
            let mut grads: Vec<_> = model
                .params
                .ids()
                .filter_map(|id| g.tape.param_grad(id).map(|gr| (id, gr.to_vec())))
                .collect();
            drop(g);
            let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.params, &grads);
            steps_run += 1;
            *global_step += 1;
            let log = StepLog {
                stage: spec.stage,
                epoch,
                step,
                global_step: *global_step,
                lr: adam.config().lr_at(adam.step_count()),
                grad_norm,
                loss: breakdown,
            };
            on_event(&TrainEvent::Step(&log));
        }

        if val.is_empty() {
            on_event(&TrainEvent::Epoch(&EpochLog {
                stage: spec.stage,
                epoch,
                val: None,
                improved: false,
            }));
            continue;
        }
        let report = evaluate(model, val, lambda)?;
        final_val = Some(report);
        let (improved, stop) = stopper.observe(report.phi_total);
        if improved {
            if let Some(path) = checkpoint {
                model.save(path)?;
                best_saved = true;
            }
        }
        on_event(&TrainEvent::Epoch(&EpochLog {
            stage: spec.stage,
            epoch,
            val: Some(report),
            improved,
        }));
        if stop {
            break;
        }
    }

    if best_saved {
        // Leave the stage holding its best weights, not its last.
        let path = checkpoint.expect("best_saved implies a path");
        Checkpoint::load(path)
            .map_err(ModelError::from)?
            .apply_to(&mut model.params)
            .map_err(ModelError::from)?;
    } else if let Some(path) = checkpoint {
        model.save(path)?;
    }

    Ok(StageReport {
        stage: spec.stage,
        lambda,
        epochs_run,
        steps_run,
        best_val_phi: if val.is_empty() {
            None
        } else {
            Some(stopper.best)
        },
        final_val,
    })
}

/// Builds denoising-pretraining examples: each document has tokens replaced
/// by `<unk>` with probability `corrupt_rate`, and the original document
/// (plus `<eos>`) becomes the sequence to reconstruct. The span target is a
/// placeholder — pretraining runs at lambda 1 where span loss has no weight.
pub fn make_denoising_examples<R: Rng>(
    docs: &[Vec<u32>],
    corrupt_rate: f64,
    rng: &mut R,
) -> Result<Vec<Example>, TrainError> {
    if !(0.0..=1.0).contains(&corrupt_rate) {
        return Err(TrainError::Config(format!(
            "corrupt_rate {corrupt_rate} outside [0, 1]"
        )));
    }
    let mut out = Vec::new();
    for doc in docs {
        if doc.is_empty() {
            continue;
        }
        let corrupted: Vec<u32> = doc
            .iter()
            .map(|&t| if rng.random_bool(corrupt_rate) { UNK } else { t })
            .collect();
        let mut question = doc.clone();
        question.push(EOS);
        out.push(Example {
            doc: corrupted,
            question,
            start: 0,
            end: 0,
        });
    }
    Ok(out)
}

/// The pretraining config: a single question-only stage over denoising
/// examples.
pub fn pretrain_config(base: &TrainConfig, epochs: usize) -> TrainConfig {
    TrainConfig {
        stages: vec![StageSpec {
            stage: Stage::QuestionOnly,
            epochs,
        }],
        ..base.clone()
    }
}
