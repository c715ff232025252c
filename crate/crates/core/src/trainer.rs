//! Training regimes: first-order meta-training, plus the conventional
//! pretraining, joint re-training and naive fine-tuning baselines.
//!
//! Per task, the inner loop adapts θ on the two wide-gap triplets,
//!
//! ```text
//! L_in(θ)  = L(f_θ(I1, I5), I3) + L(f_θ(I3, I7), I5)
//! θ'       = θ − α ∇θ L_in(θ)            (k times)
//! L_out(θ') = L(f_θ'(I3, I5), I4)
//! ```
//!
//! and the outer loop applies the first-order meta-gradient
//! `θ ← θ − β Σ_i ∇θ' L_out(θ'_i)`, i.e. gradients taken at each adapted copy
//! and summed over the task batch.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::{map_ordered, Exec};
use crate::frame::SharedFrame;
use crate::model::{self, ModelError, ModelParams, ParamVec, TripletBatch};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tasks::{self, DataError, Sequence, Task, TaskSampler, Triplet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite gradient in {param} ({context})")]
    NonFinite { param: String, context: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Inner-loop (test-time) adaptation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    pub alpha: f64,
    pub k: usize,
    pub optimizer: OptimizerKind,
}

impl AdaptConfig {
    pub fn plain(alpha: f64, k: usize) -> Self {
        Self {
            alpha,
            k,
            optimizer: OptimizerKind::Sgd,
        }
    }

    /// Adaptation switched off.
    pub fn none() -> Self {
        Self::plain(0.0, 0)
    }

    pub fn is_identity(&self) -> bool {
        self.alpha == 0.0 || self.k == 0
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(TrainError::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self::plain(1e-4, 1)
    }
}

/// Outer-loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    pub beta: f64,
    pub batch: usize,
    pub decay_factor: f64,
    /// Validation evaluations without improvement before β is decayed.
    pub patience: usize,
    /// Outer steps between validation evaluations.
    pub val_interval: usize,
    pub max_outer_steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub exec: Exec,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            beta: 1e-4,
            batch: 4,
            decay_factor: 5.0,
            patience: 20,
            val_interval: 50,
            max_outer_steps: 2000,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            exec: Exec::default(),
        }
    }
}

impl MetaConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.beta > 0.0) {
            return Err(TrainError::Config(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be >= 1".into()));
        }
        if !(self.decay_factor > 1.0) {
            return Err(TrainError::Config(format!(
                "decay factor must be > 1, got {}",
                self.decay_factor
            )));
        }
        if self.val_interval == 0 {
            return Err(TrainError::Config(
                "validation interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub outer_loss: f64,
    pub val_loss: Option<f64>,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayEvent {
    pub step: usize,
    pub old_beta: f64,
    pub new_beta: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Validation loss before the first outer step.
    pub initial_val_loss: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub decay_events: Vec<DecayEvent>,
    pub wall_time: Duration,
}

impl PartialEq for TrainReport {
    /// Wall time is excluded.
    fn eq(&self, other: &Self) -> bool {
        self.initial_val_loss == other.initial_val_loss
            && self.steps == other.steps
            && self.decay_events == other.decay_events
    }
}

impl TrainReport {
    /// `step,outer_loss,val_loss,beta`; step 0 carries the initial validation loss.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,outer_loss,val_loss,beta\n");
        if let Some(v) = self.initial_val_loss {
            let beta = self.steps.first().map(|r| r.beta).unwrap_or(f64::NAN);
            writeln!(s, "0,,{v:e},{beta:e}").unwrap();
        }
        for r in &self.steps {
            let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(s, "{},{:e},{},{:e}", r.step, r.outer_loss, val, r.beta).unwrap();
        }
        s
    }
}

fn check_finite(
    params: &ModelParams,
    g: &ParamVec,
    context: impl FnOnce() -> String,
) -> Result<(), TrainError> {
    match g.first_non_finite() {
        Some(i) => Err(TrainError::NonFinite {
            param: params.names()[i].clone(),
            context: context(),
        }),
        None => Ok(()),
    }
}

fn inner_batch(task: &Task) -> TripletBatch<'_> {
    let [t0, t1] = &task.d_train;
    TripletBatch {
        a: vec![&*t0.input_a, &*t1.input_a],
        target: vec![&*t0.target, &*t1.target],
        b: vec![&*t0.input_b, &*t1.input_b],
    }
}

fn triplet_batch<'a>(ts: impl IntoIterator<Item = &'a Triplet>) -> TripletBatch<'a> {
    let mut batch = TripletBatch {
        a: Vec::new(),
        target: Vec::new(),
        b: Vec::new(),
    };
    for t in ts {
        batch.a.push(&*t.input_a);
        batch.target.push(&*t.target);
        batch.b.push(&*t.input_b);
    }
    batch
}

/// `L_in` on the task's two wide-gap triplets.
pub fn inner_loss(params: &ModelParams, task: &Task) -> Result<f64, TrainError> {
    Ok(model::batch_loss(params, &inner_batch(task))?)
}

pub fn inner_loss_and_grad(
    params: &ModelParams,
    task: &Task,
) -> Result<(f64, ParamVec), TrainError> {
    Ok(model::loss_and_grad(params, &inner_batch(task))?)
}

/// `L_out` on the task's narrow-gap test triplet.
pub fn outer_loss(params: &ModelParams, task: &Task) -> Result<f64, TrainError> {
    Ok(model::batch_loss(params, &triplet_batch([&task.d_test]))?)
}

pub fn outer_loss_and_grad(
    params: &ModelParams,
    task: &Task,
) -> Result<(f64, ParamVec), TrainError> {
    Ok(model::loss_and_grad(
        params,
        &triplet_batch([&task.d_test]),
    )?)
}

/// `k` optimizer steps on an arbitrary set of triplets, starting from fresh
/// optimizer state. Returns a new parameter copy.
pub fn adapt_on_triplets(
    params: &ModelParams,
    triplets: &[&Triplet],
    cfg: &AdaptConfig,
) -> Result<ModelParams, TrainError> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok(params.clone());
    }
    let mut theta = params.clone();
    let mut opt = Optimizer::new(cfg.optimizer);
    for i in 0..cfg.k {
        let (_, g) = model::loss_and_grad(&theta, &triplet_batch(triplets.iter().copied()))?;
        check_finite(&theta, &g, || format!("inner step {i}"))?;
        opt.step(&mut theta, &g, cfg.alpha);
    }
    Ok(theta)
}

/// θ → θ' by `k` steps on `L_in`. The input parameters are never modified.
pub fn inner_adapt(
    params: &ModelParams,
    task: &Task,
    cfg: &AdaptConfig,
) -> Result<ModelParams, TrainError> {
    let [t0, t1] = &task.d_train;
    adapt_on_triplets(params, &[t0, t1], cfg)
}

/// First-order meta-gradient for one task: `∇θ' L_out(θ')`.
pub fn task_meta_gradient(
    params: &ModelParams,
    task: &Task,
    acfg: &AdaptConfig,
) -> Result<(f64, ParamVec), TrainError> {
    let adapted = inner_adapt(params, task, acfg)?;
    outer_loss_and_grad(&adapted, task)
}

/// Sums per-item `(loss, gradient)` pairs in input order.
fn reduce_in_order(
    params: &ModelParams,
    parts: Vec<Result<(f64, ParamVec), TrainError>>,
) -> Result<(f64, ParamVec), TrainError> {
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// `(Σ L_out, Σ ∇θ' L_out)` over a task batch. Tasks may be processed in
/// parallel; the reduction always runs in batch order.
pub fn outer_gradient(
    params: &ModelParams,
    batch: &[Task],
    acfg: &AdaptConfig,
    exec: Exec,
) -> Result<(f64, ParamVec), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Data(DataError::ZeroBatch));
    }
    let parts = map_ordered(exec, batch, |t| task_meta_gradient(params, t, acfg));
    reduce_in_order(params, parts)
}

/// One plain-gradient outer update `θ ← θ − β Σ_i ∇θ' L_out(θ'_i)`.
pub fn outer_step(
    params: &ModelParams,
    batch: &[Task],
    acfg: &AdaptConfig,
    mcfg: &MetaConfig,
) -> Result<(ModelParams, f64), TrainError> {
    let (loss, g) = outer_gradient(params, batch, acfg, mcfg.exec)?;
    check_finite(params, &g, || "outer step".into())?;
    let mut next = params.clone();
    Optimizer::new(OptimizerKind::Sgd).step(&mut next, &g, mcfg.beta);
    Ok((next, loss))
}

/// Mean post-adaptation `L_out` over `tasks`.
pub fn validation_loss(
    params: &ModelParams,
    tasks: &[Task],
    acfg: &AdaptConfig,
    exec: Exec,
) -> Result<f64, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::Data(DataError::EmptyDataset));
    }
    let losses = map_ordered(exec, tasks, |t| {
        let adapted = inner_adapt(params, t, acfg)?;
        outer_loss(&adapted, t)
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / tasks.len() as f64)
}

/// Meta-training: sample task batches, adapt per task, apply the summed
/// first-order meta-gradient. Every `val_interval` steps the mean
/// post-adaptation validation loss is measured; after `patience` evaluations
/// without improvement β is divided by `decay_factor`.
pub fn meta_train(
    init: &ModelParams,
    dataset: &[Sequence],
    val: &[Sequence],
    acfg: &AdaptConfig,
    mcfg: &MetaConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    meta_train_with(init, dataset, val, acfg, mcfg, |_| {})
}

/// [`meta_train`] with a per-step observer (progress output).
pub fn meta_train_with(
    init: &ModelParams,
    dataset: &[Sequence],
    val: &[Sequence],
    acfg: &AdaptConfig,
    mcfg: &MetaConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(ModelParams, TrainReport), TrainError> {
    acfg.validate()?;
    mcfg.validate()?;
    let started = Instant::now();
    let mut report = TrainReport::default();
    if mcfg.max_outer_steps == 0 {
        return Ok((init.clone(), report));
    }
    let mut sampler = TaskSampler::new(dataset, mcfg.seed)?;
    let val_tasks = tasks::all_tasks(val)?;
    let mut theta = init.clone();
    let mut opt = Optimizer::new(mcfg.optimizer);
    let mut beta = mcfg.beta;
    let mut best = validation_loss(&theta, &val_tasks, acfg, mcfg.exec)?;
    report.initial_val_loss = Some(best);
    let mut stale = 0;

    for step in 1..=mcfg.max_outer_steps {
        let batch = sampler.next_batch(mcfg.batch)?;
        let (loss, g) = outer_gradient(&theta, &batch, acfg, mcfg.exec)?;
        check_finite(&theta, &g, || format!("outer step {step}"))?;
        opt.step(&mut theta, &g, beta);
        let mut record = StepRecord {
            step,
            outer_loss: loss,
            val_loss: None,
            beta,
        };
        if step % mcfg.val_interval == 0 {
            let v = validation_loss(&theta, &val_tasks, acfg, mcfg.exec)?;
            record.val_loss = Some(v);
            if v < best {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= mcfg.patience {
                    let new_beta = beta / mcfg.decay_factor;
                    report.decay_events.push(DecayEvent {
                        step,
                        old_beta: beta,
                        new_beta,
                    });
                    beta = new_beta;
                    stale = 0;
                }
            }
        }
        on_step(&record);
        report.steps.push(record);
    }
    report.wall_time = started.elapsed();
    Ok((theta, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub exec: Exec,
}

impl TrainSchedule {
    pub fn new(lr: f64, steps: usize, seed: u64) -> Self {
        Self {
            lr,
            steps,
            batch: 4,
            seed,
            optimizer: OptimizerKind::Adamax,
            exec: Exec::default(),
        }
    }

    pub fn with_optimizer(mut self, optimizer: OptimizerKind) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }
}

/// Supervised training on narrow-gap triplets: each step draws `batch`
/// distinct triplets and descends on the sum of their losses.
pub fn pretrain(
    init: &ModelParams,
    triplets: &[Triplet],
    sched: &TrainSchedule,
) -> Result<(ModelParams, Vec<f64>), TrainError> {
    pretrain_with(init, triplets, sched, |_, _| {})
}

pub fn pretrain_with(
    init: &ModelParams,
    triplets: &[Triplet],
    sched: &TrainSchedule,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(ModelParams, Vec<f64>), TrainError> {
    if triplets.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    if sched.batch == 0 {
        return Err(DataError::ZeroBatch.into());
    }
    let batch = sched.batch.min(triplets.len());
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut theta = init.clone();
    let mut opt = Optimizer::new(sched.optimizer);
    let mut losses = Vec::with_capacity(sched.steps);
    for step in 0..sched.steps {
        let picks = index::sample(&mut rng, triplets.len(), batch);
        let (loss, g) =
            model::loss_and_grad(&theta, &triplet_batch(picks.iter().map(|i| &triplets[i])))?;
        check_finite(&theta, &g, || format!("pretrain step {step}"))?;
        if sched.lr != 0.0 {
            opt.step(&mut theta, &g, sched.lr);
        }
        losses.push(loss);
        on_step(step, loss);
    }
    Ok((theta, losses))
}

/// Joint fine-tuning on the meta-training windows without inner/outer
/// structure: batches are sampled exactly as in [`meta_train`] and the update
/// descends on `Σ_i L(f_θ(I3, I5), I4)`. With α = 0 meta-training performs the
/// same update sequence.
pub fn retrain(
    params: &ModelParams,
    dataset: &[Sequence],
    sched: &TrainSchedule,
) -> Result<(ModelParams, Vec<f64>), TrainError> {
    retrain_with(params, dataset, sched, |_, _| {})
}

pub fn retrain_with(
    params: &ModelParams,
    dataset: &[Sequence],
    sched: &TrainSchedule,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(ModelParams, Vec<f64>), TrainError> {
    let mut theta = params.clone();
    let mut losses = Vec::with_capacity(sched.steps);
    if sched.steps == 0 {
        return Ok((theta, losses));
    }
    let mut sampler = TaskSampler::new(dataset, sched.seed)?;
    let mut opt = Optimizer::new(sched.optimizer);
    for step in 1..=sched.steps {
        let batch = sampler.next_batch(sched.batch)?;
        let (loss, g) = retrain_gradient(&theta, &batch, sched.exec)?;
        check_finite(&theta, &g, || format!("retrain step {step}"))?;
        if sched.lr != 0.0 {
            opt.step(&mut theta, &g, sched.lr);
        }
        losses.push(loss);
        on_step(step, loss);
    }
    Ok((theta, losses))
}

/// Re-training under the validation-driven β schedule of [`meta_train`]:
/// meta-training with adaptation switched off.
pub fn retrain_validated(
    params: &ModelParams,
    dataset: &[Sequence],
    val: &[Sequence],
    mcfg: &MetaConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    meta_train(params, dataset, val, &AdaptConfig::none(), mcfg)
}

/// `(Σ L_test, Σ ∇θ L_test)` at θ over a task batch.
pub fn retrain_gradient(
    params: &ModelParams,
    batch: &[Task],
    exec: Exec,
) -> Result<(f64, ParamVec), TrainError> {
    let parts = map_ordered(exec, batch, |t| outer_loss_and_grad(params, t));
    reduce_in_order(params, parts)
}

/// Triplets available from a low-frame-rate input: `(t, t+1, t+2)` for every
/// consecutive window (two for four frames, one for three).
pub fn low_rate_triplets(frames: &[SharedFrame]) -> Result<Vec<Triplet>, TrainError> {
    if frames.len() < 3 {
        return Err(DataError::TooShort {
            len: frames.len(),
            need: 3,
        }
        .into());
    }
    let mut ts = tasks::consecutive_triplets(frames)?;
    for t in &mut ts {
        t.gap = 2;
    }
    Ok(ts)
}

/// Repeated gradient steps on the low-frame-rate triplets only. Returns the
/// final parameters and the loss at each of the `steps + 1` visited points.
pub fn naive_finetune(
    params: &ModelParams,
    frames: &[SharedFrame],
    lr: f64,
    steps: usize,
    optimizer: OptimizerKind,
) -> Result<(ModelParams, Vec<f64>), TrainError> {
    let mut curve = Vec::with_capacity(steps + 1);
    let theta = finetune_with(params, frames, lr, steps, optimizer, |_, _, loss| {
        curve.push(loss)
    })?;
    Ok((theta, curve))
}

/// Fine-tuning loop calling `observe(step, θ_step, loss(θ_step))` for
/// `step = 0..=steps`.
pub fn finetune_with(
    params: &ModelParams,
    frames: &[SharedFrame],
    lr: f64,
    steps: usize,
    optimizer: OptimizerKind,
    mut observe: impl FnMut(usize, &ModelParams, f64),
) -> Result<ModelParams, TrainError> {
    let triplets = low_rate_triplets(frames)?;
    let mut theta = params.clone();
    let mut opt = Optimizer::new(optimizer);
    for step in 0..=steps {
        let (loss, g) = model::loss_and_grad(&theta, &triplet_batch(&triplets))?;
        observe(step, &theta, loss);
        if step == steps {
            break;
        }
        check_finite(&theta, &g, || format!("fine-tune step {step}"))?;
        if lr != 0.0 {
            opt.step(&mut theta, &g, lr);
        }
    }
    Ok(theta)
}
