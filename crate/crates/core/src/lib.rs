//! Curriculum-guided Direct Preference Optimization for hallucination detection.
//!
//! The pipeline runs in five steps:
//!
//! 1. [`corpus`] ingests labeled detection examples and turns them into
//!    preference pairs (factual answer preferred over the hallucinated one).
//! 2. [`grounding`] scores every hallucinated answer with a grounding
//!    probability `p` in `[0, 1]`. Low `p` means the hallucination is easy to
//!    spot.
//! 3. [`curriculum`] sorts the scored pairs ascending by `p` and splits them
//!    into `S` stages, easy to hard.
//! 4. [`dpo`] fine-tunes a small causal LM ([`policy`]) stage by stage against
//!    a frozen reference copy using the DPO objective.
//! 5. [`eval`] measures detection accuracy/precision/recall/F1 overall and per
//!    difficulty tier, plus the pairwise win-rate.

pub mod corpus;
pub mod curriculum;
pub mod dpo;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod jsonl;
pub mod pipeline;
pub mod policy;

pub use corpus::{DetectionExample, PreferencePair, PromptTemplate, TemplateMode, Tier};
pub use curriculum::{Binning, CurriculumSchedule, SamplingPolicy};
pub use dpo::{OptimizerKind, TrainConfig, TrainLogRecord};
pub use error::{Error, ErrorKind, Result};
pub use eval::{Confusion, MetricBlock, MetricsReport};
pub use grounding::{GroundingScore, ScoreRange, Scorer};
pub use policy::{ModelDims, PolicyModel, ReferenceSnapshot, Tokenizer};
