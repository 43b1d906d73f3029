//! Grounding-difficulty scoring of hallucinated answers.
//!
//! A scorer maps `(answer_hall, context)` to a probability `p` that the
//! answer is supported by the context. Lower `p` marks a hallucination that
//! is easier to spot, so the curriculum sorts ascending by `p`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DetectionExample, Tier};
use crate::curriculum::chunk_sizes;
use crate::error::{Error, Result};
use crate::jsonl;

/// Bumped whenever [`STOP_WORDS`] changes, since proxy scores depend on it.
pub const STOP_WORDS_VERSION: u32 = 1;

/// Words ignored by the lexical proxy. Sorted for binary search.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do", "does",
    "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her",
    "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "more", "most",
    "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over",
    "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
    "yours",
];

fn is_stop_word(w: &str) -> bool {
    STOP_WORDS.binary_search(&w).is_ok()
}

/// Lowercase alphanumeric tokens of `text`.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn content_tokens(text: &str) -> HashSet<String> {
    tokens(text).filter(|t| !is_stop_word(t)).collect()
}

/// Fraction of the answer's distinct content tokens that occur in the context.
///
/// Returns 0.0 when the answer has no content tokens.
pub fn lexical_proxy_score(answer: &str, context: &str) -> f64 {
    let answer = content_tokens(answer);
    if answer.is_empty() {
        return 0.0;
    }
    let context: HashSet<String> = tokens(context).collect();
    let hits = answer.iter().filter(|t| context.contains(*t)).count();
    hits as f64 / answer.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub example_id: String,
    pub p: f64,
    pub scorer_id: String,
}

/// Produces a grounding probability for an example's hallucinated answer.
pub trait Scorer: Send + Sync {
    fn scorer_id(&self) -> &str;

    /// Returns [`Error::MissingScores`] when the scorer has nothing for this example.
    fn score(&self, example: &DetectionExample) -> Result<f64>;
}

/// Built-in overlap-based stand-in for an entailment verifier.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalProxyScorer;

impl Scorer for LexicalProxyScorer {
    fn scorer_id(&self) -> &str {
        "lexical_proxy"
    }

    fn score(&self, example: &DetectionExample) -> Result<f64> {
        Ok(lexical_proxy_score(&example.answer_hall, &example.context))
    }
}

/// Pass-through of precomputed scores from a sidecar file.
#[derive(Debug, Clone, Default)]
pub struct FileBackedScorer {
    scores: HashMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarLine {
    id: String,
    p: f64,
}

impl FileBackedScorer {
    pub fn new(scores: HashMap<String, f64>) -> Result<Self> {
        for (id, &p) in &scores {
            check_probability(id, p)?;
        }
        Ok(FileBackedScorer { scores })
    }

    pub fn from_sidecar(path: &Path) -> Result<Self> {
        let mut scores = HashMap::new();
        for (line, map) in jsonl::read_objects(path)? {
            let rec: SidecarLine = jsonl::decode(line, map, &["id", "p"])?;
            check_probability(&rec.id, rec.p).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if scores.insert(rec.id.clone(), rec.p).is_some() {
                return Err(Error::DuplicateId(rec.id));
            }
        }
        Ok(FileBackedScorer { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl Scorer for FileBackedScorer {
    fn scorer_id(&self) -> &str {
        "file_backed"
    }

    fn score(&self, example: &DetectionExample) -> Result<f64> {
        self.scores
            .get(&example.id)
            .copied()
            .ok_or_else(|| Error::MissingScores(vec![example.id.clone()]))
    }
}

fn check_probability(id: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::validation(format!("score for `{id}` is {p}, outside [0, 1]")))
    }
}

/// Scores every example; a file-backed scorer missing ids reports all of them at once.
pub fn score_examples(examples: &[DetectionExample], scorer: &dyn Scorer) -> Result<Vec<GroundingScore>> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        match scorer.score(ex) {
            Ok(p) => {
                check_probability(&ex.id, p)?;
                out.push(GroundingScore {
                    example_id: ex.id.clone(),
                    p,
                    scorer_id: scorer.scorer_id().to_owned(),
                });
            }
            Err(Error::MissingScores(ids)) => missing.extend(ids),
            Err(e) => return Err(e),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::MissingScores(missing))
    }
}

pub fn write_sidecar(path: &Path, scores: &[GroundingScore]) -> Result<()> {
    let lines: Vec<_> = scores
        .iter()
        .map(|s| SidecarLine {
            id: s.example_id.clone(),
            p: s.p,
        })
        .collect();
    jsonl::write(path, &lines)
}

/// Copies each example's score onto the example itself.
pub fn attach_scores(examples: &mut [DetectionExample], scores: &[GroundingScore]) -> Result<()> {
    let by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.example_id.as_str(), s.p)).collect();
    let mut missing = Vec::new();
    for ex in examples.iter_mut() {
        match by_id.get(ex.id.as_str()) {
            Some(&p) => ex.score = Some(p),
            None => missing.push(ex.id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingScores(missing))
    }
}

/// Inclusive probability interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    lo: f64,
    hi: f64,
}

impl ScoreRange {
    /// Discards only the very poorly grounded negatives (`p < 0.25`).
    pub const DEFAULT: ScoreRange = ScoreRange { lo: 0.25, hi: 1.0 };

    pub const PRESETS: [(&'static str, ScoreRange); 4] = [
        ("r00-75", ScoreRange { lo: 0.0, hi: 0.75 }),
        ("r25-100", ScoreRange { lo: 0.25, hi: 1.0 }),
        ("r25-75", ScoreRange { lo: 0.25, hi: 0.75 }),
        ("r00-100", ScoreRange { lo: 0.0, hi: 1.0 }),
    ];

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::validation(format!("invalid score range [{lo}, {hi}]")));
        }
        Ok(ScoreRange { lo, hi })
    }

    pub fn preset(name: &str) -> Option<ScoreRange> {
        Self::PRESETS.iter().find(|(n, _)| *n == name).map(|(_, r)| *r)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }
}

impl Default for ScoreRange {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl FromStr for ScoreRange {
    type Err = Error;

    /// Accepts a preset name (`r25-100`) or an explicit `lo:hi` pair.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(r) = Self::preset(s) {
            return Ok(r);
        }
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::validation(format!("unknown range `{s}`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::validation(format!("unknown range `{s}`")))
        };
        ScoreRange::new(parse(lo)?, parse(hi)?)
    }
}

impl fmt::Display for ScoreRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}-{:.2}", self.lo, self.hi)
    }
}

pub fn filter_by_range(scores: &[GroundingScore], range: ScoreRange) -> Vec<GroundingScore> {
    scores.iter().filter(|s| range.contains(s.p)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

/// Mean, median and count of `p` per tier. All three tiers are always reported.
pub fn tier_statistics(scores: &[GroundingScore], tiers: &HashMap<String, Tier>) -> Result<BTreeMap<Tier, TierStats>> {
    let mut buckets: BTreeMap<Tier, Vec<f64>> = Tier::ALL.iter().map(|t| (*t, Vec::new())).collect();
    for s in scores {
        let tier = tiers
            .get(&s.example_id)
            .ok_or_else(|| Error::validation(format!("no tier for scored example `{}`", s.example_id)))?;
        buckets.get_mut(tier).unwrap().push(s.p);
    }
    Ok(buckets
        .into_iter()
        .map(|(tier, mut ps)| {
            let count = ps.len();
            let stats = if count == 0 {
                TierStats {
                    count,
                    mean: None,
                    median: None,
                }
            } else {
                ps.sort_by(f64::total_cmp);
                let median = if count % 2 == 1 {
                    ps[count / 2]
                } else {
                    (ps[count / 2 - 1] + ps[count / 2]) / 2.0
                };
                TierStats {
                    count,
                    mean: Some(ps.iter().sum::<f64>() / count as f64),
                    median: Some(median),
                }
            };
            (tier, stats)
        })
        .collect())
}

/// Tiers from the corpus `tier` field.
pub fn corpus_tiers(examples: &[DetectionExample]) -> HashMap<String, Tier> {
    examples
        .iter()
        .filter_map(|e| e.tier.map(|t| (e.id.clone(), t)))
        .collect()
}

/// Fallback tiers: terciles of the score distribution, lowest third easy.
///
/// Ties are broken by example id; uneven thirds give the lower tiers the
/// extra element.
pub fn tercile_tiers(scores: &[GroundingScore]) -> HashMap<String, Tier> {
    let mut sorted: Vec<&GroundingScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.p.total_cmp(&b.p).then_with(|| a.example_id.cmp(&b.example_id)));
    let n = sorted.len();
    let mut out = HashMap::with_capacity(n);
    let mut it = sorted.into_iter();
    for (tier, size) in Tier::ALL.iter().zip(chunk_sizes(n, 3)) {
        for s in it.by_ref().take(size) {
            out.insert(s.example_id.clone(), *tier);
        }
    }
    out
}
