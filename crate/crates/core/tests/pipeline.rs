use curdpo_core::corpus::{generate_synthetic_corpus, load_corpus, write_corpus};
use curdpo_core::grounding::{score_examples, LexicalProxyScorer};
use curdpo_core::pipeline::{evaluate, run_training, split_holdout, ModelShape, RunOptions};
use curdpo_core::policy::{load_model, save_model};
use curdpo_core::{SamplingPolicy, ScoreRange, TrainConfig};

fn options(policy: SamplingPolicy) -> RunOptions {
    RunOptions {
        policy,
        shape: ModelShape {
            embed: 16,
            layers: 1,
            heads: 2,
            context: 96,
            ff: 32,
        },
        config: TrainConfig {
            epochs_per_stage: 2,
            seed: 3,
            ..TrainConfig::desk()
        },
        ..RunOptions::default()
    }
}

#[test]
fn corpus_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let exs = generate_synthetic_corpus(25, 0.5, 9).unwrap();
    write_corpus(&path, &exs).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), exs);
}

#[test]
fn train_save_load_evaluate() {
    let exs = generate_synthetic_corpus(80, 1.0, 5).unwrap();
    let (train, test) = split_holdout(&exs);
    let scores = score_examples(&exs, &LexicalProxyScorer).unwrap();
    let out = run_training(&train, &scores, &options(SamplingPolicy::Curriculum)).unwrap();
    assert_eq!(out.kept + out.discarded, train.len());
    assert!(out.log.last().unwrap().loss < out.log[0].loss);
    assert_eq!(
        out.reference.model().params(),
        out.reference.snapshot().model().params()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&out.model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let a = evaluate(&out.model, &test, true).unwrap();
    let b = evaluate(&loaded, &test, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.report.overall.confusion.total(), 2 * test.len());
}

#[test]
fn policies_share_pairs_but_not_order() {
    let exs = generate_synthetic_corpus(40, 1.0, 6).unwrap();
    let scores = score_examples(&exs, &LexicalProxyScorer).unwrap();
    let mut opts = options(SamplingPolicy::Curriculum);
    opts.range = ScoreRange::preset("r00-100").unwrap();
    opts.config.epochs_per_stage = 1;
    let cur = run_training(&exs, &scores, &opts).unwrap();
    opts.policy = SamplingPolicy::Random;
    let rnd = run_training(&exs, &scores, &opts).unwrap();
    let ids = |s: &curdpo_core::CurriculumSchedule| s.pairs().map(|p| p.example_id.clone()).collect::<Vec<_>>();
    let (mut a, mut b) = (ids(&cur.schedule), ids(&rnd.schedule));
    assert_ne!(a, b);
    a.sort();
    b.sort();
    assert_eq!(a, b);
}
