//! Hallucination-detection metrics and preference win-rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{DetectionExample, PreferencePair, PromptTemplate, TemplateMode, Tier};
use crate::error::{Error, Result};
use crate::policy::PolicyModel;

/// Confusion counts with "hallucinated" (1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, gold: u8, predicted: u8) {
        match (gold, predicted) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (1, 0) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }
}

/// Metrics derived from one confusion matrix. Undefined ratios are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricBlock {
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        MetricBlock {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            confusion: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: MetricBlock,
    pub per_tier: BTreeMap<Tier, MetricBlock>,
    pub pairwise_win_rate: Option<f64>,
}

/// One judged example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub gold: u8,
    pub predicted: u8,
    pub tier: Option<Tier>,
}

pub fn compute_metrics(predictions: &[Prediction]) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::validation("no predictions to score"));
    }
    let mut overall = Confusion::default();
    let mut tiers: BTreeMap<Tier, Confusion> = BTreeMap::new();
    for p in predictions {
        if p.gold > 1 || p.predicted > 1 {
            return Err(Error::validation(format!("labels must be 0 or 1, got {p:?}")));
        }
        overall.add(p.gold, p.predicted);
        if let Some(t) = p.tier {
            tiers.entry(t).or_default().add(p.gold, p.predicted);
        }
    }
    Ok(MetricsReport {
        overall: MetricBlock::from_confusion(overall),
        per_tier: tiers
            .into_iter()
            .map(|(t, c)| (t, MetricBlock::from_confusion(c)))
            .collect(),
        pairwise_win_rate: None,
    })
}

fn check_label_template(model: &PolicyModel, template: &PromptTemplate) -> Result<()> {
    if template.mode != TemplateMode::LabelPreference {
        return Err(Error::validation("classification needs a label_preference template"));
    }
    let tok = model.tokenizer();
    if tok.encode(&template.verdict_positive).len() != tok.encode(&template.verdict_negative).len() {
        return Err(Error::validation("verdict completions tokenize to different lengths"));
    }
    Ok(())
}

/// Judges `answer` for `example`: 1 iff the positive verdict is strictly more likely.
pub fn judge(model: &PolicyModel, example: &DetectionExample, answer: &str, template: &PromptTemplate) -> Result<u8> {
    check_label_template(model, template)?;
    let prompt = template.render(example, answer);
    let pos = model.text_logprob(&prompt, &template.verdict_positive)?;
    let neg = model.text_logprob(&prompt, &template.verdict_negative)?;
    Ok(u8::from(pos > neg))
}

/// Predicts the label of the example's candidate answer (chosen by its gold label).
pub fn predict_label(model: &PolicyModel, example: &DetectionExample, template: &PromptTemplate) -> Result<u8> {
    judge(model, example, example.candidate(), template)
}

/// Predictions over a corpus plus the number of examples skipped for length.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub predictions: Vec<Prediction>,
    pub skipped: usize,
}

/// Classifies every example. With `both_answers`, each example contributes
/// two judgments: its factual answer (gold 0) and its hallucinated one (gold 1).
pub fn evaluate_detection(
    model: &PolicyModel,
    examples: &[DetectionExample],
    template: &PromptTemplate,
    both_answers: bool,
) -> Result<Detection> {
    check_label_template(model, template)?;
    let mut out = Detection {
        predictions: Vec::with_capacity(examples.len()),
        skipped: 0,
    };
    for ex in examples {
        let cases: Vec<(&str, u8)> = if both_answers {
            vec![(&ex.answer_true, 0), (&ex.answer_hall, 1)]
        } else {
            vec![(ex.candidate(), ex.label)]
        };
        for (answer, gold) in cases {
            match judge(model, ex, answer, template) {
                Ok(predicted) => out.predictions.push(Prediction {
                    gold,
                    predicted,
                    tier: ex.tier,
                }),
                Err(Error::TooLong { len, max }) => {
                    log::warn!("skipping `{}`: {len} tokens exceed context {max}", ex.id);
                    out.skipped += 1;
                }
                Err(e) => return Err(e.for_example(&ex.id)),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub rate: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Fraction of pairs where the chosen completion is more likely; ties count half.
pub fn pairwise_win_rate(model: &PolicyModel, pairs: &[PreferencePair]) -> Result<WinRate> {
    let mut wins = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for p in pairs {
        let scored = model
            .text_logprob(&p.prompt, &p.chosen)
            .and_then(|w| Ok((w, model.text_logprob(&p.prompt, &p.rejected)?)));
        match scored {
            Ok((w, l)) => {
                evaluated += 1;
                if w > l {
                    wins += 1.0;
                } else if w == l {
                    wins += 0.5;
                }
            }
            Err(Error::TooLong { .. }) => skipped += 1,
            Err(e) => return Err(e.for_example(&p.example_id)),
        }
    }
    if evaluated == 0 {
        return Err(Error::validation("no pairs could be evaluated"));
    }
    Ok(WinRate {
        rate: wins / evaluated as f64,
        evaluated,
        skipped,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"))
}

/// Plain-text table: one row overall and one per tier.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "split", "acc", "prec", "rec", "f1", "n"
    );
    let mut row = |name: &str, b: &MetricBlock| {
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6}",
            name,
            cell(b.accuracy),
            cell(b.precision),
            cell(b.recall),
            cell(b.f1),
            b.confusion.total()
        );
    };
    row("overall", &report.overall);
    for (tier, block) in &report.per_tier {
        row(tier.as_str(), block);
    }
    if let Some(w) = report.pairwise_win_rate {
        let _ = writeln!(out, "pairwise win-rate: {w:.3}");
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::build_pairs;
    use crate::policy::{ModelDims, Tokenizer};

    fn preds(gold: &[u8], predicted: &[u8]) -> Vec<Prediction> {
        gold.iter()
            .zip(predicted)
            .map(|(&g, &p)| Prediction {
                gold: g,
                predicted: p,
                tier: None,
            })
            .collect()
    }

    #[test]
    fn balanced_confusion() {
        let r = compute_metrics(&preds(&[1, 0, 0, 1], &[1, 1, 0, 0])).unwrap();
        assert_eq!(
            r.overall.confusion,
            Confusion {
                tp: 1,
                fp: 1,
                fn_: 1,
                tn: 1
            }
        );
        for v in [r.overall.accuracy, r.overall.precision, r.overall.recall, r.overall.f1] {
            assert_eq!(v, Some(0.5));
        }
    }

    #[test]
    fn all_correct() {
        let r = compute_metrics(&preds(&[1, 0, 1], &[1, 0, 1])).unwrap();
        assert_eq!(r.overall.accuracy, Some(1.0));
        assert_eq!(r.overall.f1, Some(1.0));
    }

    #[test]
    fn undefined_ratios_are_null() {
        let r = compute_metrics(&preds(&[1, 0], &[0, 0])).unwrap();
        assert_eq!(r.overall.precision, None);
        assert_eq!(r.overall.recall, Some(0.0));
        assert_eq!(r.overall.f1, None);
        let r = compute_metrics(&preds(&[0, 0], &[1, 0])).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall), (Some(0.0), None));
        assert!(compute_metrics(&[]).is_err());
        assert!(compute_metrics(&preds(&[2], &[0])).is_err());
    }

    #[test]
    fn confusion_serializes_with_fn_key() {
        let json = serde_json::to_string(&Confusion {
            tp: 1,
            fp: 2,
            fn_: 3,
            tn: 4,
        })
        .unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
    }

    #[test]
    fn per_tier_counts_sum_to_overall() {
        let tiers = [Tier::Easy, Tier::Hard, Tier::Hard, Tier::Medium, Tier::Easy];
        let p: Vec<_> = [(1, 1), (0, 1), (1, 0), (0, 0), (1, 1)]
            .iter()
            .zip(tiers)
            .map(|(&(g, q), t)| Prediction {
                gold: g,
                predicted: q,
                tier: Some(t),
            })
            .collect();
        let r = compute_metrics(&p).unwrap();
        let sum: usize = r.per_tier.values().map(|b| b.confusion.total()).sum();
        assert_eq!(sum, r.overall.confusion.total());
        assert_eq!(r.per_tier[&Tier::Easy].confusion.tp, 2);
        let table = render_table(&r);
        assert!(table.contains("overall") && table.contains("hard"));
    }

    proptest! {
        #[test]
        fn permutation_invariant(labels in prop::collection::vec((0u8..2, 0u8..2), 1..40), rot in 0usize..40) {
            let p: Vec<_> = labels.iter().map(|&(g, q)| Prediction { gold: g, predicted: q, tier: None }).collect();
            let mut rotated = p.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            prop_assert_eq!(compute_metrics(&p).unwrap(), compute_metrics(&rotated).unwrap());
        }
    }

    fn example(id: &str, label: u8) -> DetectionExample {
        DetectionExample {
            id: id.into(),
            context: "the sky is blue".into(),
            question: "what color ?".into(),
            answer_true: "blue".into(),
            answer_hall: "green".into(),
            label,
            tier: Some(Tier::Easy),
            score: None,
        }
    }

    fn model_for(examples: &[DetectionExample], zero: bool) -> PolicyModel {
        let t = PromptTemplate::label_preference();
        let mut texts: Vec<String> = examples
            .iter()
            .flat_map(|e| {
                [
                    t.render(e, &e.answer_true),
                    t.render(e, &e.answer_hall),
                    e.answer_true.clone(),
                    e.answer_hall.clone(),
                ]
            })
            .collect();
        texts.push(format!("{} {}", t.verdict_positive, t.verdict_negative));
        let tok = Tokenizer::from_texts(texts.iter().map(String::as_str));
        let dims = ModelDims {
            vocab: tok.len(),
            embed: 8,
            layers: 1,
            heads: 1,
            context: 32,
            ff: 8,
        };
        if zero {
            PolicyModel::zeroed(tok, dims, 0).unwrap()
        } else {
            PolicyModel::random(tok, dims, 5).unwrap()
        }
    }

    #[test]
    fn zero_model_predicts_negative_everywhere() {
        let exs = [example("a", 1), example("b", 0), example("c", 1)];
        let model = model_for(&exs, true);
        let t = PromptTemplate::label_preference();
        for ex in &exs {
            assert_eq!(predict_label(&model, ex, &t).unwrap(), 0);
        }
        let det = evaluate_detection(&model, &exs, &t, false).unwrap();
        let r = compute_metrics(&det.predictions).unwrap();
        assert_eq!(r.overall.recall, Some(0.0));
        let both = evaluate_detection(&model, &exs, &t, true).unwrap();
        assert_eq!(both.predictions.len(), 6);
    }

    #[test]
    fn verdict_bias_forces_positive() {
        let exs = [example("a", 1), example("b", 0)];
        let mut model = model_for(&exs, true);
        let t = PromptTemplate::label_preference();
        let id = model.tokenizer().token_id(&t.verdict_positive).unwrap() as usize;
        let start = model.output_bias_range().start;
        model.params_mut()[start + id] = 5.0;
        for ex in &exs {
            assert_eq!(predict_label(&model, ex, &t).unwrap(), 1);
        }
    }

    #[test]
    fn answer_template_rejected_for_classification() {
        let exs = [example("a", 1)];
        let model = model_for(&exs, true);
        assert!(predict_label(&model, &exs[0], &PromptTemplate::answer_preference()).is_err());
    }

    #[test]
    fn over_length_examples_are_skipped() {
        let mut long = example("long", 1);
        long.context = "the sky is blue ".repeat(10);
        let exs = [example("a", 1), long];
        let model = model_for(&exs, true);
        let det = evaluate_detection(&model, &exs, &PromptTemplate::label_preference(), false).unwrap();
        assert_eq!((det.predictions.len(), det.skipped), (1, 1));
    }

    #[test]
    fn win_rate_ties_and_forced_margin() {
        let exs = [example("a", 1), example("b", 0)];
        let pairs = build_pairs(&exs, &PromptTemplate::answer_preference()).unwrap();
        let mut model = model_for(&exs, true);
        assert_eq!(pairwise_win_rate(&model, &pairs).unwrap().rate, 0.5);
        let id = model.tokenizer().token_id("blue").unwrap() as usize;
        let start = model.output_bias_range().start;
        model.params_mut()[start + id] = 3.0;
        assert_eq!(pairwise_win_rate(&model, &pairs).unwrap().rate, 1.0);
    }

    #[test]
    fn predictions_deterministic() {
        let exs = [example("a", 1), example("b", 0)];
        let model = model_for(&exs, false);
        let t = PromptTemplate::label_preference();
        let a = evaluate_detection(&model, &exs, &t, true).unwrap();
        let b = evaluate_detection(&model, &exs, &t, true).unwrap();
        assert_eq!(a, b);
    }
}
