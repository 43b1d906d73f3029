//! Detection examples, prompt templates, preference pairs and the synthetic
//! corpus generator.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled hallucination-detection instance.
///
/// `label == 1` marks the example whose candidate under judgment is the
/// hallucinated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionExample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer_true: String,
    pub answer_hall: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl DetectionExample {
    /// The answer shown to the classifier: the hallucinated one for label 1.
    pub fn candidate(&self) -> &str {
        if self.label == 1 {
            &self.answer_hall
        } else {
            &self.answer_true
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("example id must be nonempty"));
        }
        if self.label > 1 {
            return Err(Error::validation(format!(
                "example `{}`: label must be 0 or 1, got {}",
                self.id, self.label
            )));
        }
        let (t, h) = (normalize_ws(&self.answer_true), normalize_ws(&self.answer_hall));
        if t == h {
            return Err(Error::validation(format!(
                "example `{}`: answer_true and answer_hall are identical",
                self.id
            )));
        }
        if t.to_lowercase() == h.to_lowercase() {
            log::warn!("example `{}`: answers differ only in case", self.id);
        }
        Ok(())
    }
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const CORPUS_FIELDS: [&str; 6] = ["id", "context", "question", "answer_true", "answer_hall", "label"];

/// Loads a corpus JSONL file, preserving file order.
pub fn load_corpus(path: &Path) -> Result<Vec<DetectionExample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, map) in jsonl::read_objects(path)? {
        let ex: DetectionExample = jsonl::decode(line, map, &CORPUS_FIELDS)?;
        ex.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Parse { line, message: m },
            other => other,
        })?;
        if !seen.insert(ex.id.clone()) {
            return Err(Error::DuplicateId(ex.id));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, examples: &[DetectionExample]) -> Result<()> {
    jsonl::write(path, examples)
}

/// Checks the corpus-level invariants (ids unique, answers distinct, labels binary).
pub fn validate_corpus(examples: &[DetectionExample]) -> Result<()> {
    let mut seen = HashSet::new();
    for ex in examples {
        ex.validate()?;
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::DuplicateId(ex.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    /// Prefer the factual answer text over the hallucinated answer text.
    AnswerPreference,
    /// Prefer the correct verdict string for the candidate answer.
    LabelPreference,
}

impl FromStr for TemplateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "answer" | "answer_preference" => Ok(TemplateMode::AnswerPreference),
            "label" | "label_preference" => Ok(TemplateMode::LabelPreference),
            _ => Err(Error::validation(format!("unknown template mode `{s}`"))),
        }
    }
}

impl fmt::Display for TemplateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateMode::AnswerPreference => "answer_preference",
            TemplateMode::LabelPreference => "label_preference",
        })
    }
}

const PLACEHOLDERS: [&str; 3] = ["context", "question", "answer"];

/// Prompt layout for one of the two pair modes.
///
/// `template_text` may reference `{context}`, `{question}` and `{answer}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub mode: TemplateMode,
    pub template_text: String,
    pub verdict_positive: String,
    pub verdict_negative: String,
}

impl PromptTemplate {
    pub fn new(
        mode: TemplateMode,
        template_text: impl Into<String>,
        verdict_positive: impl Into<String>,
        verdict_negative: impl Into<String>,
    ) -> Result<Self> {
        let t = PromptTemplate {
            mode,
            template_text: template_text.into(),
            verdict_positive: verdict_positive.into(),
            verdict_negative: verdict_negative.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Built-in template for answer-preference pairs.
    pub fn answer_preference() -> Self {
        PromptTemplate {
            mode: TemplateMode::AnswerPreference,
            template_text: "context : {context} question : {question} answer :".into(),
            verdict_positive: "hallucinated".into(),
            verdict_negative: "faithful".into(),
        }
    }

    /// Built-in template for label-preference pairs and classification.
    pub fn label_preference() -> Self {
        PromptTemplate {
            mode: TemplateMode::LabelPreference,
            template_text: "context : {context} question : {question} answer : {answer} verdict :".into(),
            verdict_positive: "hallucinated".into(),
            verdict_negative: "faithful".into(),
        }
    }

    pub fn for_mode(mode: TemplateMode) -> Self {
        match mode {
            TemplateMode::AnswerPreference => Self::answer_preference(),
            TemplateMode::LabelPreference => Self::label_preference(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut rest = self.template_text.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| Error::validation("template has an unclosed `{`"))?;
            let name = &after[..close];
            if !PLACEHOLDERS.contains(&name) {
                return Err(Error::validation(format!("unknown template placeholder `{{{name}}}`")));
            }
            rest = &after[close + 1..];
        }
        let (p, n) = (
            self.verdict_positive.split_whitespace().count(),
            self.verdict_negative.split_whitespace().count(),
        );
        if p == 0 || p != n {
            return Err(Error::validation(format!(
                "verdict completions must be nonempty and of equal length ({p} vs {n} words)"
            )));
        }
        if normalize_ws(&self.verdict_positive) == normalize_ws(&self.verdict_negative) {
            return Err(Error::validation("verdict completions must differ"));
        }
        Ok(())
    }

    /// Renders the prompt for `ex` with `answer` as the candidate.
    pub fn render(&self, ex: &DetectionExample, answer: &str) -> String {
        let text = self
            .template_text
            .replace("{context}", &ex.context)
            .replace("{question}", &ex.question)
            .replace("{answer}", answer);
        normalize_ws(&text)
    }

    pub fn verdict(&self, hallucinated: bool) -> &str {
        if hallucinated {
            &self.verdict_positive
        } else {
            &self.verdict_negative
        }
    }
}

/// A `(prompt, chosen, rejected)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub example_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Builds exactly one pair per example, in input order.
///
/// The example's `score` field, when present, is carried onto the pair.
pub fn build_pairs(examples: &[DetectionExample], template: &PromptTemplate) -> Result<Vec<PreferencePair>> {
    template.validate()?;
    Ok(examples
        .iter()
        .map(|ex| {
            let (prompt, chosen, rejected) = match template.mode {
                TemplateMode::AnswerPreference => (
                    template.render(ex, ""),
                    normalize_ws(&ex.answer_true),
                    normalize_ws(&ex.answer_hall),
                ),
                TemplateMode::LabelPreference => {
                    let hall = ex.label == 1;
                    (
                        template.render(ex, ex.candidate()),
                        normalize_ws(template.verdict(hall)),
                        normalize_ws(template.verdict(!hall)),
                    )
                }
            };
            PreferencePair {
                example_id: ex.id.clone(),
                prompt,
                chosen,
                rejected,
                score: ex.score,
            }
        })
        .collect())
}

const PAIR_FIELDS: [&str; 4] = ["example_id", "prompt", "chosen", "rejected"];

pub fn load_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    jsonl::read(path, &PAIR_FIELDS)
}

pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    jsonl::write(path, pairs)
}

// Word pools for the synthetic corpus. The three answer pools are disjoint
// from each other and from the stop-word list, so grounding of a
// hallucinated answer is controlled exactly by how many context words it
// borrows.
const PLACES: &[&str] = &[
    "arvandor",
    "belmora",
    "corvessa",
    "dunmire",
    "eldravia",
    "falkreach",
    "glimmerton",
    "haldren",
    "istravel",
    "jorvik",
    "kelmarsh",
    "lorwyn",
    "mistral",
    "norvane",
    "ostermoor",
    "pellinor",
    "quenwick",
    "ravensholm",
    "sablecrest",
    "thornvale",
    "ulmaren",
    "vasquith",
    "wyndale",
    "xandrel",
    "yorrowmere",
    "zephyrine",
];
const ATTRIBUTES: &[&str] = &[
    "capital", "river", "export", "festival", "mountain", "guild", "harbor", "dialect", "monument", "cuisine",
];
const FACT_WORDS: &[&str] = &[
    "amber", "basalt", "cedar", "copper", "crimson", "ember", "falcon", "granite", "harvest", "ivory", "jasper",
    "juniper", "kestrel", "lotus", "marble", "meridian", "nectar", "obsidian", "orchid", "pearl", "quartz", "raven",
    "saffron", "sapphire", "sequoia", "tundra", "umber", "velvet", "willow", "zenith",
];
const DISTRACTOR_WORDS: &[&str] = &[
    "anchor", "barrel", "candle", "drizzle", "fiddle", "gravel", "hammock", "kettle", "ladder", "lantern", "mitten",
    "noodle", "paddle", "pebble", "puddle", "ribbon", "saddle", "shovel", "thimble", "tinsel", "trolley", "tunnel",
    "waffle", "wagon", "walnut", "whistle", "wicker", "yarn", "zipper", "bucket",
];
const FABRICATED_WORDS: &[&str] = &[
    "quantum", "flux", "nebula", "plasma", "vortex", "cipher", "photon", "entropy", "fractal", "tachyon", "neutrino",
    "isotope", "quasar", "magnetar", "graviton", "hadron", "lepton", "pulsar", "spectrum", "tensor", "vector",
    "matrix", "helix", "syntax", "kernel", "daemon", "cortex", "synapse", "module", "nanite",
];

/// Generates `n` examples whose hallucinated answers borrow a controlled
/// fraction of their words from the context.
///
/// Each hallucinated answer has `k` words; `round(f * k)` of them are
/// distractor words present in the context and the rest never occur in it,
/// where `f = difficulty_spread * u` with `u` uniform on `[0, 1]`. The
/// factual answer is copied from the context, so it is always fully
/// grounded. Labels are balanced in expectation.
pub fn generate_synthetic_corpus(n: usize, difficulty_spread: f64, seed: u64) -> Result<Vec<DetectionExample>> {
    if n == 0 {
        return Err(Error::validation("synthetic corpus size must be at least 1"));
    }
    if !(0.0..=1.0).contains(&difficulty_spread) {
        return Err(Error::validation(format!(
            "difficulty_spread must lie in [0, 1], got {difficulty_spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.random_range(3..=4usize);
        let place = *PLACES.choose(&mut rng).unwrap();
        let mut attrs: Vec<&str> = ATTRIBUTES.choose_multiple(&mut rng, 2).copied().collect();
        let (attr, other_attr) = (attrs.remove(0), attrs.remove(0));
        let facts: Vec<&str> = FACT_WORDS.choose_multiple(&mut rng, k).copied().collect();
        let distractors: Vec<&str> = DISTRACTOR_WORDS.choose_multiple(&mut rng, k).copied().collect();

        let grounded = (difficulty_spread * rng.random::<f64>() * k as f64).round() as usize;
        let mut hall: Vec<&str> = distractors[..grounded].to_vec();
        hall.extend(FABRICATED_WORDS.choose_multiple(&mut rng, k - grounded));
        hall.shuffle(&mut rng);

        let context = format!(
            "the {attr} of {place} is {} . the {other_attr} of {place} is {} .",
            facts.join(" "),
            distractors.join(" ")
        );
        let p = grounded as f64 / k as f64;
        let tier = if p < 0.34 {
            Tier::Easy
        } else if p < 0.67 {
            Tier::Medium
        } else {
            Tier::Hard
        };
        out.push(DetectionExample {
            id: format!("syn-{i:05}"),
            context,
            question: format!("what is the {attr} of {place} ?"),
            answer_true: facts.join(" "),
            answer_hall: hall.join(" "),
            label: u8::from(rng.random_bool(0.5)),
            tier: Some(tier),
            score: None,
        });
    }
    Ok(out)
}
