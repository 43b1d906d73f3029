use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use curdpo_core::corpus::{generate_synthetic_corpus, load_corpus, write_corpus};
use curdpo_core::grounding::{
    corpus_tiers, score_examples, tercile_tiers, tier_statistics, write_sidecar, FileBackedScorer, LexicalProxyScorer,
    TierStats,
};
use curdpo_core::pipeline::{evaluate, is_holdout, run_training, ModelShape, RunOptions};
use curdpo_core::policy::{load_model, save_model};
use curdpo_core::{
    eval::render_table, jsonl, DetectionExample, Error, GroundingScore, Result, SamplingPolicy, ScoreRange,
    TemplateMode, Tier, TrainConfig,
};

use crate::ablate;
use crate::args::{
    AblateArgs, Common, EvalArgs, ScoreArgs, ScorerChoice, Split, StatsArgs, SynthArgs, TrainArgs, TrainingFlags,
};
use crate::manifest::RunManifest;

fn select(examples: Vec<DetectionExample>, split: Split) -> Vec<DetectionExample> {
    match split {
        Split::All => examples,
        Split::Train => examples.into_iter().filter(|e| !is_holdout(&e.id)).collect(),
        Split::Test => examples.into_iter().filter(|e| is_holdout(&e.id)).collect(),
    }
}

/// Scores from a sidecar, else from the corpus itself, else the lexical proxy.
fn resolve_scores(
    examples: &[DetectionExample],
    sidecar: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<(Vec<GroundingScore>, &'static str)> {
    if let Some(path) = sidecar {
        manifest.input("scores", path)?;
        let scorer = FileBackedScorer::from_sidecar(path)?;
        return Ok((score_examples(examples, &scorer)?, "file_backed"));
    }
    if examples.iter().all(|e| e.score.is_some()) {
        let scores = examples
            .iter()
            .map(|e| GroundingScore {
                example_id: e.id.clone(),
                p: e.score.unwrap(),
                scorer_id: "corpus".to_owned(),
            })
            .collect();
        return Ok((scores, "corpus"));
    }
    Ok((score_examples(examples, &LexicalProxyScorer)?, "lexical_proxy"))
}

/// Preset, then config file, then flags, then `--seed`.
fn resolve_options(common: &Common, flags: &TrainingFlags, manifest: &mut RunManifest) -> Result<RunOptions> {
    let mut config = TrainConfig::preset(&flags.preset)?;
    if let Some(path) = &common.config {
        manifest.input("config", path)?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config.apply_kv(&text)?;
    }
    let c = &mut config;
    if let Some(v) = flags.beta {
        c.beta = v;
    }
    if let Some(v) = flags.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = flags.epochs_per_stage {
        c.epochs_per_stage = v;
    }
    if let Some(v) = flags.total_epochs {
        c.total_epochs = Some(v);
    }
    if let Some(v) = flags.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = flags.grad_accum_steps {
        c.grad_accum_steps = v;
    }
    if let Some(seed) = common.seed {
        c.seed = seed;
    }
    config.validate()?;

    let d = ModelShape::default();
    let shape = ModelShape {
        embed: flags.embed.unwrap_or(d.embed),
        layers: flags.layers.unwrap_or(d.layers),
        heads: flags.heads.unwrap_or(d.heads),
        context: flags.context.unwrap_or(d.context),
        ff: flags.ff.unwrap_or(d.ff),
    };
    Ok(RunOptions {
        stages: flags.stages,
        binning: flags.binning.parse()?,
        pair_mode: flags.pair_mode.parse()?,
        shape,
        config,
        ..RunOptions::default()
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("json value") + "\n"))
}

pub fn score(common: &Common, args: &ScoreArgs, m: &mut RunManifest) -> Result<()> {
    m.input("corpus", &args.corpus)?;
    let examples = load_corpus(&args.corpus)?;
    let scores = match args.scorer {
        ScorerChoice::Proxy => score_examples(&examples, &LexicalProxyScorer)?,
        ScorerChoice::FileBacked => {
            let path = args
                .sidecar
                .as_deref()
                .ok_or_else(|| Error::validation("--scorer file-backed needs --sidecar"))?;
            m.input("sidecar", path)?;
            score_examples(&examples, &FileBackedScorer::from_sidecar(path)?)?
        }
    };
    let out = common.out.join("scores.jsonl");
    write_sidecar(&out, &scores)?;
    m.config = json!({ "scorer": scores[0].scorer_id });
    m.output("scores", &out)?;
    println!("scored {} examples -> {}", scores.len(), out.display());
    Ok(())
}

pub fn train(common: &Common, args: &TrainArgs, m: &mut RunManifest) -> Result<()> {
    m.input("corpus", &args.corpus)?;
    let mut options = resolve_options(common, &args.training, m)?;
    options.range = args.range.parse()?;
    options.policy = args.policy.parse()?;
    let examples = select(load_corpus(&args.corpus)?, args.split);
    let (scores, scorer) = resolve_scores(&examples, args.training.scores.as_deref(), m)?;
    m.seed = Some(options.config.seed);
    m.config = json!({ "options": options, "scorer": scorer, "split": format!("{:?}", args.split).to_lowercase() });

    let outcome = run_training(&examples, &scores, &options)?;
    let dir = &common.out;
    let (model_path, log_path, schedule_path) = (
        dir.join("model.bin"),
        dir.join("train_log.jsonl"),
        dir.join("schedule.jsonl"),
    );
    save_model(&outcome.model, &model_path)?;
    jsonl::write(&log_path, &outcome.log)?;
    outcome.schedule.export(&schedule_path)?;
    m.output("model", &model_path)?;
    m.output("train_log", &log_path)?;
    m.output("schedule", &schedule_path)?;

    let last = outcome.log.last();
    println!(
        "kept {} of {} examples; {} pairs in {} stages; {} steps; final loss {}",
        outcome.kept,
        outcome.kept + outcome.discarded,
        outcome.schedule.num_pairs(),
        outcome.schedule.num_stages(),
        outcome.log.len(),
        last.map_or_else(|| "-".to_owned(), |r| format!("{:.4}", r.loss))
    );
    Ok(())
}

pub fn eval(common: &Common, args: &EvalArgs, m: &mut RunManifest) -> Result<()> {
    let mode: TemplateMode = args.template.parse()?;
    if mode != TemplateMode::LabelPreference {
        return Err(Error::validation("eval classifies with the label_preference template"));
    }
    m.input("model", &args.model)?;
    m.input("corpus", &args.corpus)?;
    let model = load_model(&args.model)?;
    let mut examples = select(load_corpus(&args.corpus)?, args.split);
    if let Some(path) = &args.scores {
        let (scores, _) = resolve_scores(&examples, Some(path), m)?;
        curdpo_core::grounding::attach_scores(&mut examples, &scores)?;
    }
    let result = evaluate(&model, &examples, args.both_answers)?;
    let table = render_table(&result.report);
    let split = format!("{:?}", args.split).to_lowercase();
    m.config = json!({ "template": mode.to_string(), "both_answers": args.both_answers, "split": split });
    let report = json!({
        "model": args.model,
        "corpus": args.corpus,
        "template": mode.to_string(),
        "both_answers": args.both_answers,
        "split": split,
        "examples": examples.len(),
        "skipped": result.skipped,
        "metrics": result.report,
    });
    let (json_path, table_path) = (common.out.join("report.json"), common.out.join("report.txt"));
    write_json(&json_path, &report)?;
    write_text(&table_path, &table)?;
    m.output("report", &json_path)?;
    m.output("table", &table_path)?;
    print!("{table}");
    if result.skipped > 0 {
        println!("skipped {} over-length items", result.skipped);
    }
    Ok(())
}

pub fn ablate(common: &Common, args: &AblateArgs, m: &mut RunManifest) -> Result<()> {
    m.input("corpus", &args.corpus)?;
    let cells = match &args.grid {
        Some(path) => {
            m.input("grid", path)?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ablate::parse_grid(&text)?
        }
        None => {
            let policies = args
                .policies
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<SamplingPolicy>>>()?;
            let ranges = args
                .ranges
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<ScoreRange>>>()?;
            let ranges = if ranges.is_empty() && !policies.is_empty() {
                vec![ScoreRange::DEFAULT]
            } else {
                ranges
            };
            let policies = if policies.is_empty() && !ranges.is_empty() {
                vec![SamplingPolicy::Curriculum]
            } else {
                policies
            };
            let seeds = match (&args.seeds[..], common.seed) {
                ([], Some(s)) => vec![s],
                ([], None) => vec![0],
                (s, _) => s.to_vec(),
            };
            ablate::cartesian(&policies, &ranges, &seeds)
        }
    };
    let options = resolve_options(common, &args.training, m)?;
    let examples = load_corpus(&args.corpus)?;
    let (scores, scorer) = resolve_scores(&examples, args.training.scores.as_deref(), m)?;
    m.seed = common.seed;
    m.config = json!({ "options": options, "scorer": scorer, "cells": cells });

    let result = ablate::run_grid(&examples, &scores, &cells, &options)?;
    let table = ablate::render(&result);
    let (json_path, table_path) = (common.out.join("ablation.json"), common.out.join("ablation.txt"));
    write_json(&json_path, &serde_json::to_value(&result).expect("ablation serializes"))?;
    write_text(&table_path, &table)?;
    m.output("ablation", &json_path)?;
    m.output("table", &table_path)?;
    print!("{table}");
    Ok(())
}

/// Scores and tiers for one negative set.
fn stats_for(
    name: &str,
    corpus: &Path,
    sidecar: Option<&Path>,
    proxy: bool,
    m: &mut RunManifest,
) -> Result<BTreeMap<Tier, TierStats>> {
    m.input(name, corpus)?;
    let examples = load_corpus(corpus)?;
    let has_scores = sidecar.is_some() || examples.iter().all(|e| e.score.is_some()) || proxy;
    let has_tiers = examples.iter().all(|e| e.tier.is_some());
    if !has_scores {
        let hint = if has_tiers { "" } else { " and no tiers" };
        return Err(Error::validation(format!(
            "{}: no grounding scores{hint}; pass --scores or --proxy",
            corpus.display()
        )));
    }
    let (scores, _) = resolve_scores(&examples, sidecar, m)?;
    let tiers = if has_tiers {
        corpus_tiers(&examples)
    } else {
        tercile_tiers(&scores)
    };
    tier_statistics(&scores, &tiers)
}

fn stat_cell(s: &TierStats) -> String {
    match (s.mean, s.median) {
        (Some(mean), Some(median)) => format!("{mean:.3} / {median:.3}"),
        _ => "-".to_owned(),
    }
}

pub fn render_stats(sets: &[(String, BTreeMap<Tier, TierStats>)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "negatives");
    for t in Tier::ALL {
        let _ = write!(out, " {:>15}", t.as_str());
    }
    let _ = writeln!(out, " {:>6}", "n");
    for (name, stats) in sets {
        let _ = write!(out, "{name:<12}");
        for t in Tier::ALL {
            let _ = write!(out, " {:>15}", stat_cell(&stats[&t]));
        }
        let _ = writeln!(out, " {:>6}", stats.values().map(|s| s.count).sum::<usize>());
    }
    out.push_str("cells: mean / median grounding score\n");
    out
}

pub fn stats(common: &Common, args: &StatsArgs, m: &mut RunManifest) -> Result<()> {
    let mut sets = vec![(
        "curated".to_owned(),
        stats_for("corpus", &args.corpus, args.scores.as_deref(), args.proxy, m)?,
    )];
    if let Some(alt) = &args.alt_corpus {
        sets.push((
            "alternative".to_owned(),
            stats_for("alt_corpus", alt, args.alt_scores.as_deref(), args.proxy, m)?,
        ));
    }
    let table = render_stats(&sets);
    let value: BTreeMap<&str, &BTreeMap<Tier, TierStats>> = sets.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let (json_path, table_path) = (common.out.join("stats.json"), common.out.join("stats.txt"));
    write_json(&json_path, &serde_json::to_value(value).expect("stats serialize"))?;
    write_text(&table_path, &table)?;
    m.config = json!({ "proxy": args.proxy });
    m.output("stats", &json_path)?;
    m.output("table", &table_path)?;
    print!("{table}");
    Ok(())
}

pub fn synth(common: &Common, args: &SynthArgs, m: &mut RunManifest) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    let examples = generate_synthetic_corpus(args.n, args.spread, seed)?;
    let path = common.out.join(&args.name);
    write_corpus(&path, &examples)?;
    m.seed = Some(seed);
    m.config = json!({ "n": args.n, "spread": args.spread });
    m.output("corpus", &path)?;
    println!("wrote {} examples -> {}", examples.len(), path.display());
    Ok(())
}
