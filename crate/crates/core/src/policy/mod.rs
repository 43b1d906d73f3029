//! A small trainable causal language model with exact sequence
//! log-likelihoods and analytic gradients, plus its frozen reference copy.

mod io;
mod layout;
mod tokenizer;
mod transformer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, FORMAT_VERSION};
pub use tokenizer::{Tokenizer, BOS, EOS, SEP, UNK};

use crate::error::{Error, Result};
use layout::{Layout, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    /// Hidden width of the feed-forward block.
    pub ff: usize,
}

impl ModelDims {
    /// Desk-scale defaults: d=64, 2 layers, 2 heads, 256 positions, 4d MLP.
    pub fn for_vocab(vocab: usize) -> Self {
        ModelDims {
            vocab,
            embed: 64,
            layers: 2,
            heads: 2,
            context: 256,
            ff: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embed == 0 || self.heads == 0 || self.context == 0 || self.ff == 0 {
            return Err(Error::validation(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if !self.embed.is_multiple_of(self.heads) {
            return Err(Error::validation(format!(
                "embed dim {} not divisible by {} heads",
                self.embed, self.heads
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        Layout::new(self).total
    }
}

/// How fresh parameters are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Every parameter zero, which makes every next-token distribution uniform.
    Zeros,
    /// Seeded Gaussian weights, unit norm gains, zero biases.
    Random,
}

/// Decoder-only transformer `pi_theta` with its word-level tokenizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    dims: ModelDims,
    seed: u64,
    tokenizer: Tokenizer,
    params: Vec<f64>,
    layout: Layout,
}

impl PolicyModel {
    pub fn new(tokenizer: Tokenizer, dims: ModelDims, seed: u64, init: Init) -> Result<Self> {
        dims.validate()?;
        if dims.vocab != tokenizer.len() {
            return Err(Error::validation(format!(
                "model vocab {} does not match tokenizer size {}",
                dims.vocab,
                tokenizer.len()
            )));
        }
        let layout = Layout::new(&dims);
        let mut params = vec![0.0; layout.total];
        if init == Init::Random {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (start, len, fan_in, role) in layout.tensors(&dims) {
                let slot = &mut params[start..start + len];
                match role {
                    Role::Gain => slot.fill(1.0),
                    Role::Bias => {}
                    Role::Embedding | Role::Weight => {
                        let std = if role == Role::Embedding {
                            0.5
                        } else {
                            1.0 / (fan_in as f64).sqrt()
                        };
                        let normal = Normal::new(0.0, std).expect("positive std");
                        slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng));
                    }
                }
            }
        }
        Ok(PolicyModel {
            dims,
            seed,
            tokenizer,
            params,
            layout,
        })
    }

    pub fn random(tokenizer: Tokenizer, dims: ModelDims, seed: u64) -> Result<Self> {
        Self::new(tokenizer, dims, seed, Init::Random)
    }

    pub fn zeroed(tokenizer: Tokenizer, dims: ModelDims, seed: u64) -> Result<Self> {
        Self::new(tokenizer, dims, seed, Init::Zeros)
    }

    pub(crate) fn from_parts(tokenizer: Tokenizer, dims: ModelDims, seed: u64, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeroed(tokenizer, dims, seed)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape {
                expected: model.params.len(),
                found: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Index range of the output bias within the parameter vector.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        self.layout.b_out..self.layout.b_out + self.dims.vocab
    }

    /// Index range of the final normalization gain.
    pub fn final_gain_range(&self) -> std::ops::Range<usize> {
        self.layout.lnf..self.layout.lnf + self.dims.embed
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.dims.context {
            return Err(Error::TooLong {
                len: tokens.len(),
                max: self.dims.context,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.dims.vocab) {
            return Err(Error::validation(format!("token id {t} outside vocabulary")));
        }
        Ok(())
    }

    /// Next-token logits at every position of `tokens`.
    pub fn logits(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
        if tokens.is_empty() {
            return Err(Error::validation("empty token sequence"));
        }
        self.check_tokens(tokens)?;
        let fwd = transformer::forward(&self.dims, &self.layout, &self.params, tokens, 0);
        Ok(fwd.logits.chunks(self.dims.vocab).map(<[f64]>::to_vec).collect())
    }

    fn prepare(&self, prompt: &[u32], completion: &[u32]) -> Result<Vec<u32>> {
        if prompt.is_empty() || completion.is_empty() {
            return Err(Error::validation("prompt and completion must be nonempty"));
        }
        let mut seq = Vec::with_capacity(prompt.len() + completion.len());
        seq.extend_from_slice(prompt);
        seq.extend_from_slice(completion);
        self.check_tokens(&seq)?;
        // The last completion token is never an input.
        seq.pop();
        Ok(seq)
    }

    /// `sum_t log p(completion_t | prompt, completion_<t)`; prompt tokens contribute nothing.
    pub fn sequence_logprob(&self, prompt: &[u32], completion: &[u32]) -> Result<f64> {
        let inputs = self.prepare(prompt, completion)?;
        let first = prompt.len() - 1;
        let mut fwd = transformer::forward(&self.dims, &self.layout, &self.params, &inputs, first);
        transformer::log_softmax_rows(&mut fwd.logits, self.dims.vocab);
        Ok(completion
            .iter()
            .enumerate()
            .map(|(i, &tok)| fwd.logits[i * self.dims.vocab + tok as usize])
            .sum())
    }

    /// Adds `scale * d(logprob)/d(theta)` into `grad` and returns the logprob.
    pub fn accumulate_logprob_gradient(
        &self,
        prompt: &[u32],
        completion: &[u32],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                found: grad.len(),
            });
        }
        let inputs = self.prepare(prompt, completion)?;
        let first = prompt.len() - 1;
        let fwd = transformer::forward(&self.dims, &self.layout, &self.params, &inputs, first);
        let v = self.dims.vocab;
        let mut logp = 0.0;
        // d/dlogits of log softmax(logits)[target] = onehot(target) - softmax
        let mut dlogits = fwd.logits.clone();
        transformer::log_softmax_rows(&mut dlogits, v);
        for (i, &tok) in completion.iter().enumerate() {
            let row = &mut dlogits[i * v..(i + 1) * v];
            logp += row[tok as usize];
            for x in row.iter_mut() {
                *x = -scale * x.exp();
            }
            row[tok as usize] += scale;
        }
        transformer::backward(&self.dims, &self.layout, &self.params, &inputs, &fwd, &dlogits, grad);
        Ok(logp)
    }

    pub fn logprob_and_gradient(&self, prompt: &[u32], completion: &[u32]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let lp = self.accumulate_logprob_gradient(prompt, completion, 1.0, &mut grad)?;
        Ok((lp, grad))
    }

    /// Text-level convenience: frames with [`Tokenizer::encode_pair`] and scores.
    pub fn text_logprob(&self, prompt: &str, completion: &str) -> Result<f64> {
        let (p, c) = self.tokenizer.encode_pair(prompt, completion);
        self.sequence_logprob(&p, &c)
    }

    pub fn snapshot(&self) -> ReferenceSnapshot {
        ReferenceSnapshot { model: self.clone() }
    }
}

pub fn sequence_logprob(model: &PolicyModel, prompt: &[u32], completion: &[u32]) -> Result<f64> {
    model.sequence_logprob(prompt, completion)
}

pub fn logprob_gradient(model: &PolicyModel, prompt: &[u32], completion: &[u32]) -> Result<Vec<f64>> {
    model.logprob_and_gradient(prompt, completion).map(|(_, g)| g)
}

pub fn snapshot_reference(model: &PolicyModel) -> ReferenceSnapshot {
    model.snapshot()
}

/// Frozen deep copy of a policy, taken at training start.
///
/// Exposes read-only access only, so it cannot be mutated after creation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot {
    model: PolicyModel,
}

impl ReferenceSnapshot {
    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn sequence_logprob(&self, prompt: &[u32], completion: &[u32]) -> Result<f64> {
        self.model.sequence_logprob(prompt, completion)
    }

    pub fn text_logprob(&self, prompt: &str, completion: &str) -> Result<f64> {
        self.model.text_logprob(prompt, completion)
    }

    pub fn snapshot(&self) -> ReferenceSnapshot {
        self.clone()
    }
}
