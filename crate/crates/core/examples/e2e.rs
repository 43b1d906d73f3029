//! Trains on a synthetic corpus and prints held-out metrics.
//!
//! `cargo run --release -p curdpo-core --example e2e -- [n] [seed]`

use std::time::Instant;

use curdpo_core::corpus::generate_synthetic_corpus;
use curdpo_core::eval::render_table;
use curdpo_core::grounding::{score_examples, LexicalProxyScorer};
use curdpo_core::pipeline::{evaluate, run_training, split_holdout, RunOptions};

fn main() -> curdpo_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().map_or(500, |a| a.parse().unwrap());
    let seed = args.next().map_or(1, |a| a.parse().unwrap());
    let corpus = generate_synthetic_corpus(n, 1.0, seed)?;
    let (train, test) = split_holdout(&corpus);
    let scores = score_examples(&train, &LexicalProxyScorer)?;
    let mut opts = RunOptions::default();
    opts.config.seed = seed;
    let start = Instant::now();
    let out = run_training(&train, &scores, &opts)?;
    println!(
        "trained on {} examples ({} discarded), {} steps in {:.1?}",
        out.kept,
        out.discarded,
        out.log.len(),
        start.elapsed()
    );
    if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
        println!(
            "loss {:.4} -> {:.4}, margin {:.3} -> {:.3}",
            first.loss, last.loss, first.mean_margin, last.mean_margin
        );
    }
    let eval = evaluate(&out.model, &test, false)?;
    print!("{}", render_table(&eval.report));
    Ok(())
}
