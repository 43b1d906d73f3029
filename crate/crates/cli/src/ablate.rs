//! Ablation grids: train and evaluate one model per (policy, range, seed) cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use curdpo_core::pipeline::{evaluate, run_training, split_holdout, RunOptions};
use curdpo_core::{DetectionExample, Error, GroundingScore, Result, SamplingPolicy, ScoreRange};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub policy: SamplingPolicy,
    pub range: ScoreRange,
    pub seed: u64,
}

/// Parses one `policy range seed` cell per line; `#` starts a comment.
pub fn parse_grid(text: &str) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [policy, range, seed] = fields[..] else {
            return Err(parse_err(format!("expected `policy range seed`, got `{line}`")));
        };
        cells.push(GridCell {
            policy: policy.parse().map_err(|e: Error| parse_err(e.to_string()))?,
            range: range.parse().map_err(|e: Error| parse_err(e.to_string()))?,
            seed: seed.parse().map_err(|_| parse_err(format!("bad seed `{seed}`")))?,
        });
    }
    Ok(cells)
}

/// Every combination, seeds varying fastest.
pub fn cartesian(policies: &[SamplingPolicy], ranges: &[ScoreRange], seeds: &[u64]) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &policy in policies {
        for &range in ranges {
            for &seed in seeds {
                cells.push(GridCell { policy, range, seed });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: GridCell,
    pub ok: bool,
    pub error: Option<String>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
    pub pairwise_win_rate: Option<f64>,
    pub kept: usize,
    pub steps: usize,
    pub seconds: f64,
}

/// Mean over the successful cells sharing a policy and range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub policy: SamplingPolicy,
    pub range: ScoreRange,
    pub cells: usize,
    /// Cells with undefined F1 count as 0.
    pub f1: f64,
    pub precision: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub test_size: usize,
    pub rows: Vec<CellResult>,
    pub means: Vec<MeanRow>,
}

fn run_cell(
    train: &[DetectionExample],
    test: &[DetectionExample],
    scores: &[GroundingScore],
    cell: GridCell,
    base: &RunOptions,
) -> Result<CellResult> {
    let mut options = base.clone();
    options.policy = cell.policy;
    options.range = cell.range;
    options.config.seed = cell.seed;
    let start = Instant::now();
    let outcome = run_training(train, scores, &options)?;
    let eval = evaluate(&outcome.model, test, false)?;
    let m = &eval.report.overall;
    Ok(CellResult {
        cell,
        ok: true,
        error: None,
        f1: m.f1,
        precision: m.precision,
        accuracy: m.accuracy,
        pairwise_win_rate: eval.report.pairwise_win_rate,
        kept: outcome.kept,
        steps: outcome.log.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every cell on the shared hash split of `examples`. A failing cell is
/// recorded and the grid carries on.
pub fn run_grid(
    examples: &[DetectionExample],
    scores: &[GroundingScore],
    cells: &[GridCell],
    base: &RunOptions,
) -> Result<Ablation> {
    if cells.is_empty() {
        return Err(Error::validation("ablation grid is empty"));
    }
    let (train, test) = split_holdout(examples);
    if test.is_empty() || train.is_empty() {
        return Err(Error::validation("corpus too small for a train/test split"));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for (i, &cell) in cells.iter().enumerate() {
        log::info!(
            "cell {}/{}: {} {} seed {}",
            i + 1,
            cells.len(),
            cell.policy,
            cell.range,
            cell.seed
        );
        let row = run_cell(&train, &test, scores, cell, base).unwrap_or_else(|e| {
            log::warn!("cell {} {} seed {} failed: {e}", cell.policy, cell.range, cell.seed);
            CellResult {
                cell,
                ok: false,
                error: Some(e.to_string()),
                f1: None,
                precision: None,
                accuracy: None,
                pairwise_win_rate: None,
                kept: 0,
                steps: 0,
                seconds: 0.0,
            }
        });
        rows.push(row);
    }
    let means = mean_rows(&rows);
    Ok(Ablation {
        test_size: test.len(),
        rows,
        means,
    })
}

/// One mean row per (policy, range) group holding at least two successful cells.
pub fn mean_rows(rows: &[CellResult]) -> Vec<MeanRow> {
    let mut groups: BTreeMap<(String, String), Vec<&CellResult>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok) {
        groups
            .entry((r.cell.policy.to_string(), r.cell.range.to_string()))
            .or_default()
            .push(r);
    }
    let mean = |rs: &[&CellResult], f: fn(&CellResult) -> Option<f64>| {
        rs.iter().map(|r| f(r).unwrap_or(0.0)).sum::<f64>() / rs.len() as f64
    };
    groups
        .into_values()
        .filter(|rs| rs.len() >= 2)
        .map(|rs| MeanRow {
            policy: rs[0].cell.policy,
            range: rs[0].cell.range,
            cells: rs.len(),
            f1: mean(&rs, |r| r.f1),
            precision: mean(&rs, |r| r.precision),
            accuracy: mean(&rs, |r| r.accuracy),
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"))
}

pub fn render(ablation: &Ablation) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<11} {:<10} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "policy", "range", "seed", "f1", "prec", "acc", "kept"
    );
    for r in &ablation.rows {
        let c = &r.cell;
        if r.ok {
            let _ = writeln!(
                out,
                "{:<11} {:<10} {:>6} {:>6} {:>6} {:>6} {:>6}",
                c.policy.to_string(),
                c.range.to_string(),
                c.seed,
                cell(r.f1),
                cell(r.precision),
                cell(r.accuracy),
                r.kept
            );
        } else {
            let _ = writeln!(
                out,
                "{:<11} {:<10} {:>6} failed: {}",
                c.policy.to_string(),
                c.range.to_string(),
                c.seed,
                r.error.as_deref().unwrap_or("")
            );
        }
    }
    for m in &ablation.means {
        let _ = writeln!(
            out,
            "{:<11} {:<10} {:>6} {:>6.3} {:>6.3} {:>6.3} {:>6}",
            m.policy.to_string(),
            m.range.to_string(),
            "mean",
            m.f1,
            m.precision,
            m.accuracy,
            format!("n={}", m.cells)
        );
    }
    let _ = writeln!(out, "held-out examples: {}", ablation.test_size);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_file_parses() {
        let cells = parse_grid("# header\ncurriculum r25-100 1\n\nrandom 0.1:0.9 2 # trailing\n").unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].policy, SamplingPolicy::Random);
        assert_eq!(cells[1].range, ScoreRange::new(0.1, 0.9).unwrap());
        assert!(matches!(
            parse_grid("curriculum r25-100"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_grid("x\ncurriculum nope 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_grid("curriculum r25-100 1\ncurriculum nope 1"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn cartesian_order() {
        let r = ScoreRange::DEFAULT;
        let cells = cartesian(&[SamplingPolicy::Curriculum, SamplingPolicy::Random], &[r], &[1, 2, 3]);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[2].seed, 3);
        assert_eq!(cells[3].policy, SamplingPolicy::Random);
    }

    fn row(policy: SamplingPolicy, f1: Option<f64>, ok: bool) -> CellResult {
        CellResult {
            cell: GridCell {
                policy,
                range: ScoreRange::DEFAULT,
                seed: 0,
            },
            ok,
            error: None,
            f1,
            precision: Some(0.5),
            accuracy: Some(0.5),
            pairwise_win_rate: None,
            kept: 1,
            steps: 1,
            seconds: 0.0,
        }
    }

    #[test]
    fn means_skip_failures_and_singletons() {
        let rows = vec![
            row(SamplingPolicy::Curriculum, Some(0.8), true),
            row(SamplingPolicy::Curriculum, None, true),
            row(SamplingPolicy::Curriculum, Some(1.0), false),
            row(SamplingPolicy::Random, Some(0.3), true),
        ];
        let means = mean_rows(&rows);
        assert_eq!(means.len(), 1);
        assert_eq!(means[0].cells, 2);
        assert!((means[0].f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_grid_rejected() {
        let err = run_grid(&[], &[], &[], &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
