//! DPO objective, optimizers and the stage-wise training loop.
//!
//! Per pair, with `delta = log pi(y_w | x) - log pi(y_l | x)`:
//!
//! ```text
//! loss = -log sigmoid(beta * (delta_theta - delta_ref)) = softplus(-z)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PreferencePair;
use crate::curriculum::CurriculumSchedule;
use crate::error::{Error, Result};
use crate::policy::{PolicyModel, ReferenceSnapshot, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adamw" => Ok(OptimizerKind::Adamw),
            _ => Err(Error::validation(format!("unknown optimizer `{s}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adamw => "adamw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub grad_accum_steps: usize,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    /// Cap on epoch passes summed over all stages.
    pub total_epochs: Option<usize>,
    pub optimizer: OptimizerKind,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Reshuffle pairs inside a stage every epoch. Off keeps curriculum order.
    pub shuffle_within_stage: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Defaults for the small CPU model.
    pub fn desk() -> Self {
        TrainConfig {
            beta: 0.1,
            learning_rate: 1e-3,
            grad_accum_steps: 4,
            batch_size: 4,
            epochs_per_stage: 4,
            total_epochs: None,
            optimizer: OptimizerKind::Adamw,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            shuffle_within_stage: false,
            seed: 0,
        }
    }

    /// Hyperparameters reported for the billion-parameter backbones.
    pub fn paper() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            total_epochs: Some(25),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::validation(format!("unknown config preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(m.to_owned()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be nonnegative");
        }
        if self.grad_accum_steps == 0 || self.batch_size == 0 || self.epochs_per_stage == 0 {
            return bad("grad_accum_steps, batch_size and epochs_per_stage must be at least 1");
        }
        if self.total_epochs == Some(0) {
            return bad("total_epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.b1) || !(0.0..1.0).contains(&self.b2) || self.eps < 0.0 || self.weight_decay < 0.0
        {
            return bad("invalid optimizer constants");
        }
        Ok(())
    }

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::validation(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "beta" => self.beta = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "grad_accum_steps" => self.grad_accum_steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs_per_stage" => self.epochs_per_stage = num(key, value)?,
            "total_epochs" => {
                self.total_epochs = match value {
                    "" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "optimizer" => self.optimizer = value.parse()?,
            "b1" => self.b1 = num(key, value)?,
            "b2" => self.b2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "shuffle_within_stage" => self.shuffle_within_stage = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::validation(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> String {
        let total = self.total_epochs.map_or_else(|| "none".to_owned(), |v| v.to_string());
        format!(
            "beta={}\nlearning_rate={}\ngrad_accum_steps={}\nbatch_size={}\nepochs_per_stage={}\ntotal_epochs={}\noptimizer={}\nb1={}\nb2={}\neps={}\nweight_decay={}\nshuffle_within_stage={}\nseed={}\n",
            self.beta,
            self.learning_rate,
            self.grad_accum_steps,
            self.batch_size,
            self.epochs_per_stage,
            total,
            self.optimizer,
            self.b1,
            self.b2,
            self.eps,
            self.weight_decay,
            self.shuffle_within_stage,
            self.seed
        )
    }
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub stage: usize,
    pub epoch: usize,
    pub step: usize,
    /// Mean per-pair loss over the pairs accumulated into this step.
    pub loss: f64,
    /// Mean of `delta_theta - delta_ref` over the same pairs, before the update.
    pub mean_margin: f64,
    pub examples_seen: usize,
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pair DPO loss.
pub fn dpo_loss(logp_w_theta: f64, logp_l_theta: f64, logp_w_ref: f64, logp_l_ref: f64, beta: f64) -> Result<f64> {
    let inputs = [logp_w_theta, logp_l_theta, logp_w_ref, logp_l_ref, beta];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("dpo_loss inputs {inputs:?}")));
    }
    if beta <= 0.0 {
        return Err(Error::validation("beta must be positive"));
    }
    let z = beta * ((logp_w_theta - logp_l_theta) - (logp_w_ref - logp_l_ref));
    Ok(softplus(-z))
}

/// Token ids of a pair, framed as the policy scores them.
#[derive(Debug, Clone)]
struct EncodedPair {
    prompt_w: Vec<u32>,
    chosen: Vec<u32>,
    prompt_l: Vec<u32>,
    rejected: Vec<u32>,
}

impl EncodedPair {
    fn new(tokenizer: &Tokenizer, pair: &PreferencePair, context: usize) -> Result<Self> {
        let (prompt_w, chosen) = tokenizer.encode_pair(&pair.prompt, &pair.chosen);
        let (prompt_l, rejected) = tokenizer.encode_pair(&pair.prompt, &pair.rejected);
        let len = prompt_w.len() + chosen.len().max(rejected.len());
        if len > context {
            return Err(Error::TooLong { len, max: context }.for_example(&pair.example_id));
        }
        Ok(EncodedPair {
            prompt_w,
            chosen,
            prompt_l,
            rejected,
        })
    }

    fn delta(&self, model: &PolicyModel) -> Result<f64> {
        Ok(model.sequence_logprob(&self.prompt_w, &self.chosen)?
            - model.sequence_logprob(&self.prompt_l, &self.rejected)?)
    }
}

/// Adds `scale * d(loss)/d(theta)` for one pair into `grad`; returns `(loss, margin)`.
fn pair_loss_and_gradient(
    model: &PolicyModel,
    pair: &EncodedPair,
    ref_delta: f64,
    beta: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    // Forward pass first: the coefficient depends on the margin.
    let lw = model.sequence_logprob(&pair.prompt_w, &pair.chosen)?;
    let ll = model.sequence_logprob(&pair.prompt_l, &pair.rejected)?;
    let margin = (lw - ll) - ref_delta;
    let loss = dpo_loss(lw, ll, ref_delta, 0.0, beta)?;
    // d softplus(-z)/dz = -sigmoid(-z), dz/d(delta_theta) = beta
    let coef = -sigmoid(-beta * margin) * beta * scale;
    model.accumulate_logprob_gradient(&pair.prompt_w, &pair.chosen, coef, grad)?;
    model.accumulate_logprob_gradient(&pair.prompt_l, &pair.rejected, -coef, grad)?;
    Ok((loss, margin))
}

/// Summed DPO loss over `batch` and its exact gradient with respect to the policy.
///
/// Reference log-probabilities enter as constants.
pub fn batch_loss_and_gradient(
    model: &PolicyModel,
    reference: &ReferenceSnapshot,
    batch: &[PreferencePair],
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let mut grad = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for pair in batch {
        let enc = EncodedPair::new(model.tokenizer(), pair, model.dims().context)?;
        let ref_delta = enc
            .delta(reference.model())
            .map_err(|e| e.for_example(&pair.example_id))?;
        let (loss, _) = pair_loss_and_gradient(model, &enc, ref_delta, beta, 1.0, &mut grad)
            .map_err(|e| e.for_example(&pair.example_id))?;
        total += loss;
    }
    Ok((total, grad))
}

/// Moments and step count for AdamW.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    let n = params.len();
    if state.m.is_empty() && state.step == 0 {
        *state = AdamState::new(n);
    }
    for found in [grads.len(), state.m.len(), state.v.len()] {
        if found != n {
            return Err(Error::Shape { expected: n, found });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, lr) = (config.b1, config.b2, config.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * (mhat / (vhat.sqrt() + config.eps) + config.weight_decay * params[i]);
    }
    Ok(())
}

/// Plain gradient descent with decoupled weight decay.
pub fn sgd_step(params: &mut [f64], grads: &[f64], config: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Shape {
            expected: params.len(),
            found: grads.len(),
        });
    }
    let lr = config.learning_rate;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + config.weight_decay * *p);
    }
    Ok(())
}

/// Optimizer state shared by every stage of one run.
#[derive(Debug, Clone)]
enum OptimizerState {
    Sgd,
    Adamw(AdamState),
}

impl OptimizerState {
    fn new(config: &TrainConfig, n: usize) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adamw => OptimizerState::Adamw(AdamState::new(n)),
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], config: &TrainConfig) -> Result<()> {
        match self {
            OptimizerState::Sgd => sgd_step(params, grads, config),
            OptimizerState::Adamw(state) => adamw_step(params, grads, state, config),
        }
    }
}

/// Gradient accumulation window between two optimizer steps.
struct Window {
    grad: Vec<f64>,
    micro_batches: usize,
    pairs: usize,
    loss: f64,
    margin: f64,
}

impl Window {
    fn new(n: usize) -> Self {
        Window {
            grad: vec![0.0; n],
            micro_batches: 0,
            pairs: 0,
            loss: 0.0,
            margin: 0.0,
        }
    }

    fn reset(&mut self) {
        self.grad.fill(0.0);
        self.micro_batches = 0;
        self.pairs = 0;
        self.loss = 0.0;
        self.margin = 0.0;
    }
}

/// Runs stage-wise DPO over `schedule`, stages strictly in order.
///
/// Within a stage every epoch walks the stage's pairs in stored order in
/// micro-batches of `batch_size`; the optimizer steps on the mean gradient
/// every `grad_accum_steps` micro-batches, and a partial window is flushed
/// when the stage ends. Optimizer state carries across stages. The
/// reference is only read.
pub fn train(
    mut model: PolicyModel,
    reference: &ReferenceSnapshot,
    schedule: &CurriculumSchedule,
    config: &TrainConfig,
) -> Result<(PolicyModel, Vec<TrainLogRecord>)> {
    config.validate()?;
    if schedule.num_pairs() == 0 {
        return Err(Error::validation("schedule has no pairs"));
    }
    if reference.model().dims() != model.dims() || reference.model().tokenizer() != model.tokenizer() {
        return Err(Error::validation("reference and policy have different shapes"));
    }

    // Reference margins are constant for the whole run.
    let mut stages = Vec::with_capacity(schedule.num_stages());
    for (_, pairs) in schedule.iter_stages() {
        let mut encoded = Vec::with_capacity(pairs.len());
        for p in pairs {
            let enc = EncodedPair::new(model.tokenizer(), p, model.dims().context)?;
            let ref_delta = enc.delta(reference.model()).map_err(|e| e.for_example(&p.example_id))?;
            encoded.push((enc, ref_delta, p.example_id.as_str()));
        }
        stages.push(encoded);
    }

    let n = model.num_params();
    let mut optimizer = OptimizerState::new(config, n);
    let mut window = Window::new(n);
    let mut log = Vec::new();
    let mut examples_seen = 0;
    let mut epochs_run = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    'stages: for (stage_idx, stage) in stages.iter().enumerate() {
        let stage_no = stage_idx + 1;
        if stage.is_empty() {
            log::warn!("stage {stage_no} is empty, skipping");
            continue;
        }
        let mut order: Vec<usize> = (0..stage.len()).collect();
        let mut last_epoch = 0;
        for epoch in 1..=config.epochs_per_stage {
            if config.total_epochs.is_some_and(|cap| epochs_run >= cap) {
                flush(
                    &mut model,
                    &mut optimizer,
                    &mut window,
                    config,
                    &mut log,
                    stage_no,
                    last_epoch,
                    examples_seen,
                )?;
                break 'stages;
            }
            epochs_run += 1;
            last_epoch = epoch;
            if config.shuffle_within_stage {
                order.shuffle(&mut rng);
            }
            for micro in order.chunks(config.batch_size) {
                for &i in micro {
                    let (pair, ref_delta, id) = &stage[i];
                    let (loss, margin) =
                        pair_loss_and_gradient(&model, pair, *ref_delta, config.beta, 1.0, &mut window.grad)
                            .map_err(|e| e.for_example(id))?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "loss {loss} at stage {stage_no} epoch {epoch} on `{id}`"
                        )));
                    }
                    window.loss += loss;
                    window.margin += margin;
                    window.pairs += 1;
                    examples_seen += 1;
                }
                window.micro_batches += 1;
                if window.micro_batches == config.grad_accum_steps {
                    flush(
                        &mut model,
                        &mut optimizer,
                        &mut window,
                        config,
                        &mut log,
                        stage_no,
                        epoch,
                        examples_seen,
                    )?;
                }
            }
        }
        flush(
            &mut model,
            &mut optimizer,
            &mut window,
            config,
            &mut log,
            stage_no,
            last_epoch,
            examples_seen,
        )?;
    }
    Ok((model, log))
}

#[allow(clippy::too_many_arguments)]
fn flush(
    model: &mut PolicyModel,
    optimizer: &mut OptimizerState,
    window: &mut Window,
    config: &TrainConfig,
    log: &mut Vec<TrainLogRecord>,
    stage: usize,
    epoch: usize,
    examples_seen: usize,
) -> Result<()> {
    if window.pairs == 0 {
        return Ok(());
    }
    let inv = 1.0 / window.pairs as f64;
    window.grad.iter_mut().for_each(|g| *g *= inv);
    let record = TrainLogRecord {
        stage,
        epoch,
        step: log.len() + 1,
        loss: window.loss * inv,
        mean_margin: window.margin * inv,
        examples_seen,
    };
    if !record.loss.is_finite() || window.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "training diverged: {}",
            serde_json::to_string(&record).unwrap_or_default()
        )));
    }
    optimizer.step(model.params_mut(), &window.grad, config)?;
    log.push(record);
    window.reset();
    Ok(())
}
