//! Acceptance checks. Runs as a plain binary so every check prints one
//! PASS/FAIL line; exits nonzero if any check fails.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use curdpo_core::corpus::{build_pairs, generate_synthetic_corpus};
use curdpo_core::curriculum::build_schedule;
use curdpo_core::dpo::{batch_loss_and_gradient, dpo_loss, train};
use curdpo_core::eval::{compute_metrics, Prediction};
use curdpo_core::pipeline::build_tokenizer;
use curdpo_core::{
    Confusion, MetricBlock, ModelDims, PolicyModel, PreferencePair, PromptTemplate, SamplingPolicy, Tier, Tokenizer,
    TrainConfig,
};

type Check = std::result::Result<String, String>;
type Named<'a> = (&'a str, Box<dyn Fn() -> Check + 'a>);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let code = curdpo_cli::main_with(std::iter::once("curdpo").chain(args.iter().copied()));
    if code == 0 {
        Ok(())
    } else {
        Err(format!("`curdpo {}` exited with {code}", args.join(" ")))
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu",
];

fn random_text(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_pair(rng: &mut ChaCha8Rng, i: usize) -> PreferencePair {
    PreferencePair {
        example_id: format!("p{i}"),
        prompt: random_text(rng, 2, 6),
        chosen: random_text(rng, 1, 4),
        rejected: random_text(rng, 1, 4),
        score: Some(rng.random()),
    }
}

fn small_model(seed: u64) -> PolicyModel {
    let tok = Tokenizer::from_texts(WORDS);
    let dims = ModelDims {
        vocab: tok.len(),
        embed: 16,
        layers: 2,
        heads: 2,
        context: 32,
        ff: 24,
    };
    PolicyModel::random(tok, dims, seed).unwrap()
}

fn c1_loss_at_reference() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for b in 0..100 {
        let model = small_model(b);
        let reference = model.snapshot();
        let size = rng.random_range(1..=8);
        let batch: Vec<_> = (0..size).map(|i| random_pair(&mut rng, i)).collect();
        let beta = [0.1, 0.5, 1.0][b as usize % 3];
        let (loss, _) = batch_loss_and_gradient(&model, &reference, &batch, beta).map_err(|e| e.to_string())?;
        worst = worst.max((loss - size as f64 * std::f64::consts::LN_2).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst < 1e-9 && secs < 10.0,
        format!("max |loss - |B| ln2| = {worst:.2e} over 100 batches, {secs:.1}s"),
    )
}

fn c2_gradient_finite_differences() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let reference = small_model(1).snapshot();
    let mut model = small_model(2);
    let batch: Vec<_> = (0..20).map(|i| random_pair(&mut rng, i)).collect();
    let beta = 0.5;
    let (_, grad) = batch_loss_and_gradient(&model, &reference, &batch, beta).map_err(|e| e.to_string())?;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let samples = 60;
    for _ in 0..samples {
        let i = rng.random_range(0..model.num_params());
        let base = model.params()[i];
        model.params_mut()[i] = base + h;
        let up = batch_loss_and_gradient(&model, &reference, &batch, beta).unwrap().0;
        model.params_mut()[i] = base - h;
        let down = batch_loss_and_gradient(&model, &reference, &batch, beta).unwrap().0;
        model.params_mut()[i] = base;
        let num = (up - down) / (2.0 * h);
        let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst < 1e-4 && secs < 120.0,
        format!("max relative error {worst:.2e} on {samples} parameters, 20 pairs, {secs:.1}s"),
    )
}

fn c3_loss_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut shift: f64 = 0.0;
    for _ in 0..1000 {
        let (lw, ll, rw, rl) = (
            rng.random_range(-30.0..0.0),
            rng.random_range(-30.0..0.0),
            rng.random_range(-30.0..0.0),
            rng.random_range(-30.0..0.0),
        );
        let c: f64 = rng.random_range(-10.0..10.0);
        let beta = rng.random_range(0.01..2.0);
        let a = dpo_loss(lw, ll, rw, rl, beta).unwrap();
        let b = dpo_loss(lw, ll, rw + c, rl + c, beta).unwrap();
        shift = shift.max((a - b).abs());
    }
    let grid: Vec<f64> = (0..1000)
        .map(|k| dpo_loss(-20.0 + 40.0 * k as f64 / 999.0, -10.0, -12.0, -11.0, 0.1).unwrap())
        .collect();
    let monotone = grid.windows(2).all(|w| w[1] < w[0]);
    let limit = (dpo_loss(-3.0, -9.0, -4.0, -2.0, 1e-12).unwrap() - std::f64::consts::LN_2).abs();
    let big_pos = dpo_loss(700.0, 0.0, 0.0, 0.0, 1.0).unwrap();
    let big_neg = dpo_loss(-700.0, 0.0, 0.0, 0.0, 1.0).unwrap();
    let stable = big_pos.is_finite() && big_pos >= 0.0 && (big_neg - 700.0).abs() < 1e-9;
    ensure(
        shift < 1e-12 && monotone && limit < 1e-9 && stable,
        format!(
            "shift {shift:.1e}, strictly decreasing on 1000 points: {monotone}, small-beta gap {limit:.1e}, z=+700 -> {big_pos:.3e}, z=-700 -> {big_neg}"
        ),
    )
}

/// Rank-and-count reference for contiguous equal-count staging.
fn oracle_stages(pairs: &[PreferencePair], stages: usize) -> Vec<Vec<String>> {
    let n = pairs.len();
    let key = |p: &PreferencePair| (p.score.unwrap(), p.example_id.clone());
    let rank = |p: &PreferencePair| {
        pairs
            .iter()
            .filter(|q| {
                let (a, b) = (key(q), key(p));
                a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
            })
            .count()
    };
    let mut by_rank = vec![String::new(); n];
    for p in pairs {
        by_rank[rank(p)] = p.example_id.clone();
    }
    let mut out = Vec::new();
    let mut start = 0;
    for s in 0..stages {
        let size = n / stages + usize::from(s < n % stages);
        out.push(by_rank[start..start + size].to_vec());
        start += size;
    }
    out
}

fn c4_curriculum_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    let mut boundary = 0;
    let mut runs = 0;
    for _ in 0..1000 {
        for stages in [1usize, 2, 3, 5] {
            let n = rng.random_range(stages..stages + 40);
            let coarse = rng.random_bool(0.5);
            let pairs: Vec<_> = (0..n)
                .map(|i| PreferencePair {
                    example_id: format!("id{:03}", rng.random_range(0..1000) * 100 + i),
                    prompt: "q".into(),
                    chosen: "a".into(),
                    rejected: "b".into(),
                    score: Some(if coarse {
                        rng.random_range(0..4) as f64 / 4.0
                    } else {
                        rng.random()
                    }),
                })
                .collect();
            let schedule = build_schedule(&pairs, stages, SamplingPolicy::Curriculum, 0).map_err(|e| e.to_string())?;
            let got: Vec<Vec<String>> = schedule
                .stages
                .iter()
                .map(|s| s.iter().map(|p| p.example_id.clone()).collect())
                .collect();
            if got != oracle_stages(&pairs, stages) {
                mismatches += 1;
            }
            for w in schedule.stages.windows(2) {
                let max = w[0].iter().map(|p| p.score.unwrap()).fold(f64::NEG_INFINITY, f64::max);
                let min = w[1].iter().map(|p| p.score.unwrap()).fold(f64::INFINITY, f64::min);
                if max > min {
                    boundary += 1;
                }
            }
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        mismatches == 0 && boundary == 0 && secs < 30.0,
        format!("{runs} schedules, {mismatches} oracle mismatches, {boundary} boundary violations, {secs:.1}s"),
    )
}

fn brute_block(preds: &[(u8, u8)]) -> MetricBlock {
    let count = |g: u8, p: u8| preds.iter().filter(|x| **x == (g, p)).count();
    let c = Confusion {
        tp: count(1, 1),
        fp: count(0, 1),
        fn_: count(1, 0),
        tn: count(0, 0),
    };
    let n = preds.len();
    let accuracy = (n > 0).then(|| (c.tp + c.tn) as f64 / n as f64);
    let precision = (c.tp + c.fp > 0).then(|| c.tp as f64 / (c.tp + c.fp) as f64);
    let recall = (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricBlock {
        accuracy,
        precision,
        recall,
        f1,
        confusion: c,
    }
}

fn c5_metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut mismatches = 0;
    let mut identity: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..60);
        let preds: Vec<Prediction> = (0..n)
            .map(|_| Prediction {
                gold: rng.random_range(0..2),
                predicted: rng.random_range(0..2),
                tier: [None, Some(Tier::Easy), Some(Tier::Medium), Some(Tier::Hard)][rng.random_range(0..4)],
            })
            .collect();
        let report = compute_metrics(&preds).map_err(|e| e.to_string())?;
        let all: Vec<(u8, u8)> = preds.iter().map(|p| (p.gold, p.predicted)).collect();
        if report.overall != brute_block(&all) {
            mismatches += 1;
        }
        for tier in Tier::ALL {
            let sub: Vec<(u8, u8)> = preds
                .iter()
                .filter(|p| p.tier == Some(tier))
                .map(|p| (p.gold, p.predicted))
                .collect();
            let expected = (!sub.is_empty()).then(|| brute_block(&sub));
            if report.per_tier.get(&tier) != expected.as_ref() {
                mismatches += 1;
            }
        }
        let o = &report.overall;
        if let (Some(p), Some(r), Some(f)) = (o.precision, o.recall, o.f1) {
            if p > 0.0 && r > 0.0 {
                identity = identity.max((1.0 / f - 0.5 * (1.0 / p + 1.0 / r)).abs());
            }
        }
    }
    ensure(
        mismatches == 0 && identity < 1e-12,
        format!("10000 prediction sets, {mismatches} mismatches, harmonic-mean gap {identity:.1e}"),
    )
}

fn c6_end_to_end(dir: &Path) -> Check {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    cli(&[
        "synth",
        "--n",
        "500",
        "--spread",
        "1.0",
        "--seed",
        "1",
        "--out",
        &d("data"),
    ])?;
    cli(&["score", "--corpus", &d("data/corpus.jsonl"), "--out", &d("data")])?;
    let start = Instant::now();
    cli(&[
        "train",
        "--corpus",
        &d("data/corpus.jsonl"),
        "--scores",
        &d("data/scores.jsonl"),
        "--range",
        "r25-100",
        "--stages",
        "3",
        "--split",
        "train",
        "--seed",
        "1",
        "--out",
        &d("run"),
    ])?;
    cli(&[
        "eval",
        "--model",
        &d("run/model.bin"),
        "--corpus",
        &d("data/corpus.jsonl"),
        "--split",
        "test",
        "--out",
        &d("eval"),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let report = read_json(&dir.join("eval/report.json"));
    let metrics = &report["metrics"];
    let win = metrics["pairwise_win_rate"].as_f64().unwrap_or(0.0);
    let acc = metrics["accuracy"].as_f64().unwrap_or(0.0);
    let tiers = metrics["per_tier"].as_object().map_or(0, |m| m.len());
    ensure(
        win >= 0.9 && acc >= 0.9 && secs < 300.0,
        format!(
            "held-out n={}, win-rate {win:.3}, accuracy {acc:.3}, {tiers} tier blocks, {secs:.0}s",
            report["examples"]
        ),
    )
}

fn c7_curriculum_vs_random(dir: &Path) -> Check {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    cli(&[
        "ablate",
        "--corpus",
        &d("data/corpus.jsonl"),
        "--scores",
        &d("data/scores.jsonl"),
        "--policies",
        "curriculum,random",
        "--seeds",
        "1,2,3,4,5",
        "--epochs-per-stage",
        "1",
        "--out",
        &d("ablate_policy"),
    ])?;
    let result = read_json(&dir.join("ablate_policy/ablation.json"));
    let rows = result["rows"].as_array().unwrap();
    let means: HashMap<String, f64> = result["means"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| (m["policy"].as_str().unwrap().to_owned(), m["f1"].as_f64().unwrap()))
        .collect();
    let (cur, rnd) = (means.get("curriculum").copied(), means.get("random").copied());
    let (Some(cur), Some(rnd)) = (cur, rnd) else {
        return Err(format!("missing mean rows: {means:?}"));
    };
    ensure(
        rows.len() == 10 && cur >= rnd - 0.02,
        format!(
            "{} cells, mean F1 curriculum {cur:.3} vs random {rnd:.3}, signed difference {:+.3} (MedHallu-3B reference: 0.759 vs 0.694, {:+.3})",
            rows.len(),
            cur - rnd,
            0.759 - 0.694
        ),
    )
}

fn c8_determinism(dir: &Path) -> Check {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    cli(&["synth", "--n", "150", "--seed", "3", "--out", &d("small")])?;
    let train = |out: &str| {
        cli(&[
            "train",
            "--corpus",
            &d("small/corpus.jsonl"),
            "--policy",
            "random",
            "--seed",
            "7",
            "--epochs-per-stage",
            "2",
            "--out",
            &d(out),
        ])
    };
    train("det_a")?;
    train("det_b")?;
    let same = |f: &str| fs::read(dir.join("det_a").join(f)).unwrap() == fs::read(dir.join("det_b").join(f)).unwrap();
    let (model, log, schedule) = (same("model.bin"), same("train_log.jsonl"), same("schedule.jsonl"));

    // Re-run from the manifest alone and compare against its recorded checksums.
    let manifest = curdpo_cli::RunManifest::load(&dir.join("det_a/manifest.json")).map_err(|e| e.to_string())?;
    let args: Vec<&str> = manifest.args.iter().map(String::as_str).collect();
    cli(&args)?;
    let changed = manifest.verify_outputs();
    ensure(
        model && log && schedule && changed.is_empty(),
        format!("model identical: {model}, log identical: {log}, schedule identical: {schedule}, changed after manifest re-run: {changed:?}"),
    )
}

fn c9_cutoff_ablation(dir: &Path) -> Check {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    cli(&["synth", "--n", "250", "--seed", "9", "--out", &d("cut")])?;
    cli(&[
        "ablate",
        "--corpus",
        &d("cut/corpus.jsonl"),
        "--ranges",
        "r00-75,r25-100,r25-75,r00-100",
        "--seeds",
        "1",
        "--epochs-per-stage",
        "1",
        "--out",
        &d("ablate_range"),
    ])?;
    let result = read_json(&dir.join("ablate_range/ablation.json"));
    let rows = result["rows"].as_array().unwrap();
    let complete = rows
        .iter()
        .all(|r| r["ok"] == Value::Bool(true) && ["f1", "precision", "accuracy"].iter().all(|k| r.get(*k).is_some()));
    let table = fs::read_to_string(dir.join("ablate_range/ablation.txt")).unwrap();
    for line in table.lines() {
        println!("    {line}");
    }
    ensure(
        rows.len() == 4 && complete && result["means"].as_array().unwrap().is_empty(),
        format!("{} rows, all cells complete: {complete}", rows.len()),
    )
}

fn c10_frozen_reference() -> Check {
    let exs = generate_synthetic_corpus(48, 1.0, 12).unwrap();
    let mut pairs = build_pairs(&exs, &PromptTemplate::answer_preference()).unwrap();
    for (i, p) in pairs.iter_mut().enumerate() {
        p.score = Some(i as f64 / 48.0);
    }
    let tok = build_tokenizer(&exs);
    let dims = ModelDims {
        vocab: tok.len(),
        embed: 16,
        layers: 1,
        heads: 2,
        context: 96,
        ff: 32,
    };
    let model = PolicyModel::random(tok, dims, 5).unwrap();
    let reference = model.snapshot();
    let probe = &pairs[..32];
    let logps = |m: &curdpo_core::ReferenceSnapshot| -> Vec<u64> {
        probe
            .iter()
            .flat_map(|p| {
                [
                    m.text_logprob(&p.prompt, &p.chosen).unwrap(),
                    m.text_logprob(&p.prompt, &p.rejected).unwrap(),
                ]
            })
            .map(f64::to_bits)
            .collect()
    };
    let before = logps(&reference);
    let schedule = build_schedule(&pairs, 3, SamplingPolicy::Curriculum, 0).unwrap();
    let config = TrainConfig {
        epochs_per_stage: 2,
        learning_rate: 1e-2,
        ..TrainConfig::desk()
    };
    let (trained, log) = train(model, &reference, &schedule, &config).map_err(|e| e.to_string())?;
    let after = logps(&reference);
    let moved = trained.params() != reference.model().params();
    ensure(
        before == after && moved,
        format!(
            "64 reference logprobs bit-identical after {} steps: {}, policy moved: {moved}",
            log.len(),
            before == after
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let checks: Vec<Named> = vec![
        (
            "1 loss equals |B| ln 2 at the reference",
            Box::new(c1_loss_at_reference),
        ),
        (
            "2 gradient matches finite differences",
            Box::new(c2_gradient_finite_differences),
        ),
        (
            "3 loss shift invariance, monotonicity, limits",
            Box::new(c3_loss_properties),
        ),
        (
            "4 schedule equals sort-and-chunk oracle",
            Box::new(c4_curriculum_oracle),
        ),
        (
            "5 metrics equal brute-force confusion counts",
            Box::new(c5_metrics_oracle),
        ),
        ("6 end-to-end synthetic run", Box::new(|| c6_end_to_end(dir.path()))),
        (
            "7 curriculum not worse than random",
            Box::new(|| c7_curriculum_vs_random(dir.path())),
        ),
        (
            "8 repeated training is byte-identical",
            Box::new(|| c8_determinism(dir.path())),
        ),
        (
            "9 four-range cut-off ablation",
            Box::new(|| c9_cutoff_ablation(dir.path())),
        ),
        ("10 reference frozen during training", Box::new(c10_frozen_reference)),
    ];
    let mut failed = 0;
    let total = Instant::now();
    for (name, check) in &checks {
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_owned()));
        let secs = Duration::as_secs_f64(&start.elapsed());
        match result {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        checks.len() - failed,
        checks.len(),
        total.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
