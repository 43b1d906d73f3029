//! Easy-to-hard staging of scored preference pairs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PreferencePair;
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingPolicy {
    /// Ascending grounding score.
    Curriculum,
    /// Seeded uniform shuffle; the ablation baseline.
    Random,
}

impl FromStr for SamplingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curriculum" => Ok(SamplingPolicy::Curriculum),
            "random" => Ok(SamplingPolicy::Random),
            _ => Err(Error::validation(format!("unknown sampling policy `{s}`"))),
        }
    }
}

impl fmt::Display for SamplingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingPolicy::Curriculum => "curriculum",
            SamplingPolicy::Random => "random",
        })
    }
}

/// How sorted pairs are cut into stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Contiguous bins of (nearly) equal size.
    #[default]
    EqualCount,
    /// Bins of equal width over `[0, 1]` in score; may leave stages empty.
    EqualWidth,
}

impl FromStr for Binning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal_count" | "count" => Ok(Binning::EqualCount),
            "equal_width" | "width" => Ok(Binning::EqualWidth),
            _ => Err(Error::validation(format!("unknown binning `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub stages: Vec<Vec<PreferencePair>>,
    pub policy: SamplingPolicy,
    pub seed: u64,
}

/// Sizes of `parts` contiguous chunks of `n` items; earlier chunks take the remainder.
pub fn chunk_sizes(n: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let (base, extra) = (n / parts, n % parts);
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

fn split_contiguous(items: Vec<PreferencePair>, sizes: &[usize]) -> Vec<Vec<PreferencePair>> {
    let mut it = items.into_iter();
    sizes.iter().map(|&k| it.by_ref().take(k).collect()).collect()
}

pub fn build_schedule(
    pairs: &[PreferencePair],
    stages: usize,
    policy: SamplingPolicy,
    seed: u64,
) -> Result<CurriculumSchedule> {
    build_schedule_with(pairs, stages, policy, seed, Binning::EqualCount)
}

/// Builds a schedule of `stages` stages.
///
/// Curriculum: stable ascending sort by `(score, example_id)`. Random: seeded
/// shuffle. Either order is then cut into contiguous bins. Equal-width
/// binning applies to the curriculum policy only.
pub fn build_schedule_with(
    pairs: &[PreferencePair],
    stages: usize,
    policy: SamplingPolicy,
    seed: u64,
    binning: Binning,
) -> Result<CurriculumSchedule> {
    if stages == 0 {
        return Err(Error::validation("stage count must be at least 1"));
    }
    if stages > pairs.len() {
        return Err(Error::validation(format!(
            "stage count {stages} exceeds the number of pairs ({})",
            pairs.len()
        )));
    }
    let mut ordered = pairs.to_vec();
    let stages = match policy {
        SamplingPolicy::Curriculum => {
            if let Some(p) = ordered.iter().find(|p| p.score.is_none()) {
                return Err(Error::validation(format!(
                    "pair for `{}` has no grounding score",
                    p.example_id
                )));
            }
            ordered.sort_by(|a, b| {
                a.score
                    .unwrap()
                    .total_cmp(&b.score.unwrap())
                    .then_with(|| a.example_id.cmp(&b.example_id))
            });
            match binning {
                Binning::EqualCount => split_contiguous(ordered, &chunk_sizes(pairs.len(), stages)),
                Binning::EqualWidth => {
                    let mut bins = vec![Vec::new(); stages];
                    for p in ordered {
                        let idx = ((p.score.unwrap() * stages as f64).floor() as usize).min(stages - 1);
                        bins[idx].push(p);
                    }
                    bins
                }
            }
        }
        SamplingPolicy::Random => {
            ordered.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            split_contiguous(ordered, &chunk_sizes(pairs.len(), stages))
        }
    };
    Ok(CurriculumSchedule { stages, policy, seed })
}

impl CurriculumSchedule {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    /// Stages in order as `(1-based index, pairs)`; pairs keep their stored order.
    pub fn iter_stages(&self) -> impl Iterator<Item = (usize, &[PreferencePair])> + '_ {
        self.stages.iter().enumerate().map(|(i, s)| (i + 1, s.as_slice()))
    }

    pub fn pairs(&self) -> impl Iterator<Item = &PreferencePair> + '_ {
        self.stages.iter().flatten()
    }

    pub fn export_rows(&self) -> Vec<ScheduleRow> {
        self.iter_stages()
            .flat_map(|(stage, pairs)| {
                pairs.iter().enumerate().map(move |(i, p)| ScheduleRow {
                    stage,
                    position: i + 1,
                    example_id: p.example_id.clone(),
                    score: p.score,
                })
            })
            .collect()
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.export_rows())
    }
}

/// One line of the audit export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub stage: usize,
    pub position: usize,
    pub example_id: String,
    pub score: Option<f64>,
}
