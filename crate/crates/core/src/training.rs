//! Losses, the Adam optimizer, and the alternating training loop.
//!
//! A response position whose plan entry is a soft word set is scored with
//! soft-label cross-entropy over the set, every other position with plain
//! cross-entropy against the reference token. Augmenting modes alternate:
//! even-indexed optimizer steps train on augmented batches, odd-indexed
//! steps on plain ones, so each variant sees the unmodified data half the
//! time.
//!
//! Batch losses are token means (total position loss over total response
//! tokens in the batch), keeping gradient scale independent of response
//! lengths.

use ndarray::Array1;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::augment::{AugmentationPlan, PlanBuilder, ReplacementPlan, SoftWordSet};
use crate::config::{Mode, RunConfig};
use crate::corpus::{CorpusSplit, DialogueSample, TokenId, Vocabulary};
use crate::neighbors::NeighborModel;
use crate::seeding;
use crate::seq2seq::backward::backward;
use crate::seq2seq::{forward, Seq2SeqParams, StepOutput};
use crate::{Error, Result};

/// Gradients are rescaled when their global L2 norm exceeds this; GRU
/// backprop through long responses occasionally spikes.
pub const MAX_GRAD_NORM: f64 = 5.0;

/// Optimization hyperparameters. `beta1`, `beta2`, and `eps` are fixed at
/// the usual Adam constants by [`TrainConfig::from`]; tests override them
/// directly.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub rho: f64,
    pub tau: f64,
    pub k: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 0.4,
            tau: 0.4,
            k: 5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 42,
            mode: Mode::Ea,
        }
    }
}

impl From<&RunConfig> for TrainConfig {
    fn from(c: &RunConfig) -> Self {
        TrainConfig {
            rho: c.rho,
            tau: c.tau,
            k: c.k,
            lr: c.lr,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed: c.seed,
            mode: c.mode,
            ..TrainConfig::default()
        }
    }
}

/// Soft-label cross-entropy: `-sum_j p(c_j) ln g(c_j)` over the set members.
///
/// Softmax outputs are strictly positive, so a zero member probability means
/// the caller fed something that is not a softmax output.
pub fn soft_ce_loss(g: &Array1<f64>, set: &SoftWordSet) -> Result<f64> {
    let mut loss = 0.0;
    for (tok, p) in set.members() {
        let gv = g[tok];
        if gv <= 0.0 {
            return Err(Error::NonFinite(format!(
                "soft cross-entropy: g({tok}) = {gv}"
            )));
        }
        loss -= p * gv.ln();
    }
    Ok(loss)
}

/// Plain cross-entropy `-ln g(target)`.
pub fn hard_ce_loss(g: &Array1<f64>, target: TokenId) -> Result<f64> {
    let gv = g[target];
    if gv <= 0.0 {
        return Err(Error::NonFinite(format!(
            "cross-entropy: g({target}) = {gv}"
        )));
    }
    Ok(-gv.ln())
}

/// Mean per-position loss of one teacher-forced response: soft where the
/// plan targets the position, hard elsewhere.
pub fn sequence_loss(
    outputs: &[StepOutput],
    response: &[TokenId],
    plan: &AugmentationPlan,
) -> Result<f64> {
    if outputs.len() != response.len() || response.is_empty() {
        return Err(Error::Invalid(format!(
            "sequence_loss: {} outputs vs {} response tokens",
            outputs.len(),
            response.len()
        )));
    }
    let mut total = 0.0;
    for (i, out) in outputs.iter().enumerate() {
        total += match plan.response_set(i) {
            Some(set) => soft_ce_loss(&out.g, set)?,
            None => hard_ce_loss(&out.g, response[i])?,
        };
    }
    Ok(total / response.len() as f64)
}

/// Adam moment estimates, shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Seq2SeqParams,
    pub v: Seq2SeqParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Seq2SeqParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut Seq2SeqParams,
    grads: &Seq2SeqParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads.blocks() {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient block {name}")));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let m_blocks = state.m.blocks_mut();
    let v_blocks = state.v.blocks_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(m_blocks)
        .zip(v_blocks)
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescale `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Seq2SeqParams, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, g) in grads.blocks() {
        for &x in g {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.blocks_mut() {
            for x in g {
                *x *= scale;
            }
        }
    }
    norm
}

fn accumulate(into: &mut Seq2SeqParams, from: &Seq2SeqParams) {
    for ((_, a), (_, b)) in into.blocks_mut().into_iter().zip(from.blocks()) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Teacher-forced loss and gradients for one sample. Returns the unscaled
/// sum of position losses; the logit gradients (and so the returned
/// parameter gradients) are multiplied by `scale`, the caller's batch
/// token-mean factor. With `soft_labels` false, plan targets still fuse the
/// inputs but every position is scored against its hard reference token.
fn sample_loss_and_grads(
    params: &Seq2SeqParams,
    sample: &DialogueSample,
    plan: &AugmentationPlan,
    soft_labels: bool,
    scale: f64,
) -> Result<(f64, Seq2SeqParams)> {
    let cache = forward(params, sample, plan)?;
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(sample.response.len());
    for (i, g) in cache.step_probs().enumerate() {
        let set = if soft_labels { plan.response_set(i) } else { None };
        let mut dl = g.mapv(|x| x * scale);
        match set {
            Some(set) => {
                loss += soft_ce_loss(g, set)?;
                for (tok, p) in set.members() {
                    dl[tok] -= scale * p;
                }
            }
            None => {
                loss += hard_ce_loss(g, sample.response[i])?;
                dl[sample.response[i]] -= scale;
            }
        }
        dlogits.push(dl);
    }
    let grads = backward(params, &cache, &dlogits);
    Ok((loss, grads))
}

/// One optimizer step as recorded in the training trace.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global optimizer step index, 0-based.
    pub step: usize,
    pub augmented: bool,
    /// Token-mean batch loss.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step_count: usize,
    pub augmented_steps: usize,
    /// Token-mean training loss over the epoch.
    pub train_loss: f64,
    pub valid_ppl: f64,
}

/// A non-empty soft plan applied at some augmented step.
#[derive(Debug, Clone, Serialize)]
pub struct PlanLogEntry {
    pub epoch: usize,
    /// Index into the unshuffled train split.
    pub sample_index: usize,
    pub plan: AugmentationPlan,
}

/// A non-empty hard replacement applied at some augmented step (`rep` mode).
#[derive(Debug, Clone, Serialize)]
pub struct ReplacementLogEntry {
    pub epoch: usize,
    pub sample_index: usize,
    pub plan: ReplacementPlan,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation perplexity.
    pub params: Seq2SeqParams,
    /// Optimizer state at that same epoch, for resuming.
    pub adam: AdamState,
    pub best_epoch: usize,
    pub best_ppl: f64,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub plan_log: Vec<PlanLogEntry>,
    pub replacement_log: Vec<ReplacementLogEntry>,
}

/// Train from `init`, visiting batches in seeded shuffled order, and keep
/// the epoch checkpoint with the lowest validation perplexity.
///
/// Selection draws come from a stream keyed by (seed, epoch, sample index),
/// so plans resample every epoch yet stay independent of shuffle order and
/// batch size; at rho 0 an augmenting mode consumes identical randomness to
/// `baseline` and reproduces it bit for bit.
pub fn train(
    init: Seq2SeqParams,
    train_split: &CorpusSplit,
    valid_split: &CorpusSplit,
    vocab: &Vocabulary,
    neighbors: Option<&NeighborModel>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_split.samples.is_empty() {
        return Err(Error::Invalid("train split is empty".into()));
    }
    if valid_split.samples.is_empty() {
        return Err(Error::Invalid("validation split is empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let mut builder = match (cfg.mode.augments(), neighbors) {
        (true, Some(model)) => Some(PlanBuilder::new(model, vocab, cfg.k, cfg.tau)),
        (true, None) => {
            return Err(Error::Config(format!(
                "mode {} needs a neighbor model",
                cfg.mode
            )))
        }
        (false, _) => None,
    };

    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = seeding::stream(cfg.seed, seeding::STREAM_SHUFFLE);

    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut plan_log = Vec::new();
    let mut replacement_log = Vec::new();
    let mut best: Option<(f64, usize, Seq2SeqParams, AdamState)> = None;
    let mut global_step = 0usize;
    let empty_plan = AugmentationPlan::empty();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_split.samples.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        let mut epoch_steps = 0usize;
        let mut epoch_augmented = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            // rho 0 never selects a position, so such a run is a baseline
            // run; keeping the flag false makes its trace say so too.
            let augmented = cfg.mode.augments() && cfg.rho > 0.0 && global_step % 2 == 0;
            let batch_tokens: usize = batch
                .iter()
                .map(|&si| train_split.samples[si].response.len())
                .sum();
            let scale = 1.0 / batch_tokens as f64;

            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &si in batch {
                let sample = &train_split.samples[si];
                let mut plan = &empty_plan;
                let mut owned_plan = AugmentationPlan::empty();
                let mut replaced: Option<DialogueSample> = None;
                let mut soft_labels = false;
                if augmented {
                    let b = builder.as_mut().expect("augmenting mode has a builder");
                    let mut rng = seeding::selection_stream(cfg.seed, epoch, si);
                    match cfg.mode {
                        Mode::Ea | Mode::NoSoftLabel | Mode::NoHistoryAug => {
                            let history = cfg.mode != Mode::NoHistoryAug;
                            owned_plan = b.plan(sample, cfg.rho, history, &mut rng)?;
                            soft_labels = cfg.mode != Mode::NoSoftLabel;
                            if !owned_plan.is_empty() {
                                plan_log.push(PlanLogEntry {
                                    epoch,
                                    sample_index: si,
                                    plan: owned_plan.clone(),
                                });
                            }
                            plan = &owned_plan;
                        }
                        Mode::Rep => {
                            let rplan = b.replacement_plan(sample, cfg.rho, &mut rng)?;
                            if !(rplan.history.is_empty() && rplan.response.is_empty()) {
                                replacement_log.push(ReplacementLogEntry {
                                    epoch,
                                    sample_index: si,
                                    plan: rplan.clone(),
                                });
                            }
                            replaced = Some(PlanBuilder::apply_replacements(sample, &rplan));
                        }
                        Mode::Baseline => unreachable!("baseline never augments"),
                    }
                }
                let effective = replaced.as_ref().unwrap_or(sample);
                let (loss, sample_grads) =
                    sample_loss_and_grads(&params, effective, plan, soft_labels, scale)?;
                batch_loss += loss;
                accumulate(&mut grads, &sample_grads);
                let _ = &owned_plan;
            }

            let grad_norm = clip_global_norm(&mut grads, MAX_GRAD_NORM);
            adam_step(&mut params, &grads, &mut adam, cfg)?;
            steps.push(StepRecord {
                epoch,
                step: global_step,
                augmented,
                loss: batch_loss / batch_tokens as f64,
                grad_norm,
            });
            epoch_loss += batch_loss;
            epoch_tokens += batch_tokens;
            epoch_steps += 1;
            epoch_augmented += augmented as usize;
            global_step += 1;
        }

        let valid_ppl = perplexity(&params, valid_split)?;
        epochs.push(EpochRecord {
            epoch,
            step_count: epoch_steps,
            augmented_steps: epoch_augmented,
            train_loss: epoch_loss / epoch_tokens as f64,
            valid_ppl,
        });
        if best.as_ref().map_or(true, |(ppl, ..)| valid_ppl < *ppl) {
            best = Some((valid_ppl, epoch, params.clone(), adam.clone()));
        }
    }

    let (best_ppl, best_epoch, params, adam) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        adam,
        best_epoch,
        best_ppl,
        epochs,
        steps,
        plan_log,
        replacement_log,
    })
}

/// `exp` of the token-mean negative log-likelihood under teacher forcing,
/// with no augmentation.
pub fn perplexity(params: &Seq2SeqParams, split: &CorpusSplit) -> Result<f64> {
    if split.samples.is_empty() {
        return Err(Error::Invalid("perplexity over an empty split".into()));
    }
    let empty = AugmentationPlan::empty();
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for sample in &split.samples {
        let cache = forward(params, sample, &empty)?;
        for (i, g) in cache.step_probs().enumerate() {
            nll += hard_ce_loss(g, sample.response[i])?;
        }
        tokens += sample.response.len();
    }
    Ok((nll / tokens as f64).exp())
}
