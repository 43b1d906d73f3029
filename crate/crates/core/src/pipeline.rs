//! End-to-end runs: filter, pair, stage, train, evaluate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{build_pairs, DetectionExample, PreferencePair, PromptTemplate, TemplateMode};
use crate::curriculum::{build_schedule_with, Binning, CurriculumSchedule, SamplingPolicy};
use crate::dpo::{train, TrainConfig, TrainLogRecord};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, evaluate_detection, pairwise_win_rate, MetricsReport};
use crate::grounding::{attach_scores, tercile_tiers, GroundingScore, ScoreRange};
use crate::policy::{ModelDims, PolicyModel, ReferenceSnapshot, Tokenizer};

/// Which preference pairs each training example contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Factual answer text over hallucinated answer text.
    Answer,
    /// Correct verdict over wrong verdict for the gold candidate.
    Label,
    /// One pair of each kind per example.
    #[default]
    Both,
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "answer" => Ok(PairMode::Answer),
            "label" => Ok(PairMode::Label),
            "both" => Ok(PairMode::Both),
            _ => Err(Error::validation(format!("unknown pair mode `{s}`"))),
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairMode::Answer => "answer",
            PairMode::Label => "label",
            PairMode::Both => "both",
        })
    }
}

/// Model shape minus the vocabulary, which comes from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embed: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    pub ff: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = ModelDims::for_vocab(0);
        ModelShape {
            embed: d.embed,
            layers: d.layers,
            heads: d.heads,
            context: d.context,
            ff: d.ff,
        }
    }
}

impl ModelShape {
    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.embed,
            layers: self.layers,
            heads: self.heads,
            context: self.context,
            ff: self.ff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub range: ScoreRange,
    pub stages: usize,
    pub policy: SamplingPolicy,
    pub binning: Binning,
    pub pair_mode: PairMode,
    pub shape: ModelShape,
    pub config: TrainConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            range: ScoreRange::DEFAULT,
            stages: 3,
            policy: SamplingPolicy::Curriculum,
            binning: Binning::EqualCount,
            pair_mode: PairMode::Both,
            shape: ModelShape::default(),
            config: TrainConfig::desk(),
        }
    }
}

/// True for the ~20% of ids held out from training, decided by a hash of the id.
pub fn is_holdout(id: &str) -> bool {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap()) % 5 == 0
}

/// `(train, test)` by [`is_holdout`], order preserved.
pub fn split_holdout(examples: &[DetectionExample]) -> (Vec<DetectionExample>, Vec<DetectionExample>) {
    examples.iter().cloned().partition(|e| !is_holdout(&e.id))
}

/// Vocabulary covering every rendered prompt and completion of `examples`.
pub fn build_tokenizer(examples: &[DetectionExample]) -> Tokenizer {
    let (a, l) = (PromptTemplate::answer_preference(), PromptTemplate::label_preference());
    let mut texts = vec![
        a.template_text.clone(),
        l.template_text.clone(),
        l.verdict_positive.clone(),
        l.verdict_negative.clone(),
    ];
    for e in examples {
        texts.extend([
            e.context.clone(),
            e.question.clone(),
            e.answer_true.clone(),
            e.answer_hall.clone(),
        ]);
    }
    // Placeholder names are not vocabulary.
    let cleaned: Vec<String> = texts
        .iter()
        .map(|t| {
            t.replace("{context}", " ")
                .replace("{question}", " ")
                .replace("{answer}", " ")
        })
        .collect();
    Tokenizer::from_texts(cleaned.iter().map(String::as_str))
}

pub fn training_pairs(examples: &[DetectionExample], mode: PairMode) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    if matches!(mode, PairMode::Answer | PairMode::Both) {
        out.extend(build_pairs(
            examples,
            &PromptTemplate::for_mode(TemplateMode::AnswerPreference),
        )?);
    }
    if matches!(mode, PairMode::Label | PairMode::Both) {
        out.extend(build_pairs(
            examples,
            &PromptTemplate::for_mode(TemplateMode::LabelPreference),
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PolicyModel,
    pub reference: ReferenceSnapshot,
    pub log: Vec<TrainLogRecord>,
    pub schedule: CurriculumSchedule,
    /// Examples inside the score range.
    pub kept: usize,
    pub discarded: usize,
}

/// Filters `examples` by grounding score, builds pairs and a schedule, and
/// trains a fresh policy seeded from `options.config.seed`.
pub fn run_training(
    examples: &[DetectionExample],
    scores: &[GroundingScore],
    options: &RunOptions,
) -> Result<TrainOutcome> {
    let mut scored = examples.to_vec();
    attach_scores(&mut scored, scores)?;
    let total = scored.len();
    scored.retain(|e| options.range.contains(e.score.unwrap()));
    let kept = scored.len();
    if kept == 0 {
        return Err(Error::validation(format!(
            "no examples inside score range {}",
            options.range
        )));
    }
    let pairs = training_pairs(&scored, options.pair_mode)?;
    let seed = options.config.seed;
    let schedule = build_schedule_with(&pairs, options.stages, options.policy, seed, options.binning)?;
    let tokenizer = build_tokenizer(&scored);
    let dims = options.shape.dims(tokenizer.len());
    let model = PolicyModel::random(tokenizer, dims, seed)?;
    let reference = model.snapshot();
    let (model, log) = train(model, &reference, &schedule, &options.config)?;
    Ok(TrainOutcome {
        model,
        reference,
        log,
        schedule,
        kept,
        discarded: total - kept,
    })
}

/// Detection metrics plus pairwise win-rate on answer-preference pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub skipped: usize,
}

/// Fills in missing tiers from score terciles when every example carries a score.
pub fn fill_tiers(examples: &mut [DetectionExample]) {
    if examples.iter().all(|e| e.tier.is_some()) || examples.iter().any(|e| e.score.is_none()) {
        return;
    }
    let scores: Vec<GroundingScore> = examples
        .iter()
        .map(|e| GroundingScore {
            example_id: e.id.clone(),
            p: e.score.unwrap(),
            scorer_id: String::new(),
        })
        .collect();
    let tiers = tercile_tiers(&scores);
    for e in examples.iter_mut().filter(|e| e.tier.is_none()) {
        e.tier = tiers.get(&e.id).copied();
    }
}

pub fn evaluate(model: &PolicyModel, examples: &[DetectionExample], both_answers: bool) -> Result<Evaluation> {
    let mut examples = examples.to_vec();
    fill_tiers(&mut examples);
    let detection = evaluate_detection(model, &examples, &PromptTemplate::label_preference(), both_answers)?;
    let mut report = compute_metrics(&detection.predictions)?;
    let pairs = build_pairs(&examples, &PromptTemplate::answer_preference())?;
    let win = pairwise_win_rate(model, &pairs)?;
    report.pairwise_win_rate = Some(win.rate);
    Ok(Evaluation {
        report,
        skipped: detection.skipped + win.skipped,
    })
}
