//! Sequence-tagging metrics: conlleval-style span micro-F1 for BIO tasks and
//! token accuracy for POS.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Task};
use crate::decoder::{PredictionRecord, PredictionSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub kind: String,
}

/// Maximal labelled spans. An `I-X` that does not continue an `X` span opens a
/// new one, as the CoNLL scorer does.
pub fn extract_spans(labels: &[String]) -> BTreeSet<Span> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, label) in labels.iter().enumerate() {
        let (begins, kind) = if let Some(k) = label.strip_prefix("B-") {
            (true, Some(k))
        } else if let Some(k) = label.strip_prefix("I-") {
            (false, Some(k))
        } else {
            (false, None)
        };
        let continues = !begins && matches!((open, kind), (Some((_, cur)), Some(k)) if cur == k);
        if continues {
            continue;
        }
        if let Some((start, cur)) = open.take() {
            spans.insert(Span {
                start,
                end: i,
                kind: cur.to_string(),
            });
        }
        if let Some(k) = kind {
            open = Some((i, k));
        }
    }
    if let Some((start, cur)) = open {
        spans.insert(Span {
            start,
            end: labels.len(),
            kind: cur.to_string(),
        });
    }
    spans
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl LabelCounts {
    fn add(&mut self, other: &LabelCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub per_label: BTreeMap<String, LabelCounts>,
    pub n_sentences: usize,
    pub n_tokens: usize,
}

impl EvalReport {
    /// F1 for BIO tasks, accuracy for POS.
    pub fn headline(&self) -> f64 {
        self.f1.or(self.accuracy).unwrap_or(0.0)
    }

    pub fn totals(&self) -> LabelCounts {
        let mut total = LabelCounts::default();
        for counts in self.per_label.values() {
            total.add(counts);
        }
        total
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "task: {}  sentences: {}  tokens: {}",
            self.task, self.n_sentences, self.n_tokens
        )?;
        if let (Some(p), Some(r), Some(f1)) = (self.precision, self.recall, self.f1) {
            writeln!(f, "precision: {:6.2}%  recall: {:6.2}%  F1: {:6.2}", p * 100.0, r * 100.0, f1 * 100.0)?;
        }
        if let Some(acc) = self.accuracy {
            writeln!(f, "accuracy: {:6.2}%", acc * 100.0)?;
        }
        writeln!(f, "{:<10} {:>7} {:>7} {:>7} {:>8}", "label", "tp", "fp", "fn", "f1")?;
        for (label, c) in &self.per_label {
            let p = ratio(c.tp, c.tp + c.fp);
            let r = ratio(c.tp, c.tp + c.fn_);
            writeln!(
                f,
                "{:<10} {:>7} {:>7} {:>7} {:>8.2}",
                label,
                c.tp,
                c.fp,
                c.fn_,
                f1_score(p, r) * 100.0
            )?;
        }
        Ok(())
    }
}

fn check_alignment(record: &PredictionRecord, gold: &CorpusSplit) -> Result<()> {
    let sentence = gold.get(record.test_id).ok_or_else(|| Error::Alignment {
        test_id: record.test_id,
        reason: "no gold sentence with this id".into(),
    })?;
    if sentence.tokens != record.tokens {
        return Err(Error::Alignment {
            test_id: record.test_id,
            reason: "tokens differ from the gold sentence".into(),
        });
    }
    if record.predicted.len() != sentence.len() {
        return Err(Error::Alignment {
            test_id: record.test_id,
            reason: format!(
                "{} predicted labels for {} tokens",
                record.predicted.len(),
                sentence.len()
            ),
        });
    }
    Ok(())
}

fn merge(mut a: BTreeMap<String, LabelCounts>, b: BTreeMap<String, LabelCounts>) -> BTreeMap<String, LabelCounts> {
    for (label, counts) in b {
        a.entry(label).or_default().add(&counts);
    }
    a
}

/// Micro-averaged span precision, recall and F1 against `gold`.
pub fn micro_f1(pred: &PredictionSet, gold: &CorpusSplit) -> Result<EvalReport> {
    let per_label = pred
        .records
        .par_iter()
        .map(|record| {
            check_alignment(record, gold)?;
            let gold_spans = extract_spans(&gold.sentences[record.test_id].labels);
            let pred_spans = extract_spans(&record.predicted);
            let mut counts: BTreeMap<String, LabelCounts> = BTreeMap::new();
            for span in gold_spans.intersection(&pred_spans) {
                counts.entry(span.kind.clone()).or_default().tp += 1;
            }
            for span in pred_spans.difference(&gold_spans) {
                counts.entry(span.kind.clone()).or_default().fp += 1;
            }
            for span in gold_spans.difference(&pred_spans) {
                counts.entry(span.kind.clone()).or_default().fn_ += 1;
            }
            Ok::<_, Error>(counts)
        })
        .try_reduce(BTreeMap::new, |a, b| Ok(merge(a, b)))?;

    let mut report = EvalReport {
        task: gold.scheme.task(),
        precision: None,
        recall: None,
        f1: None,
        accuracy: None,
        per_label,
        n_sentences: pred.records.len(),
        n_tokens: pred.records.iter().map(|r| r.tokens.len()).sum(),
    };
    let total = report.totals();
    let p = ratio(total.tp, total.tp + total.fp);
    let r = ratio(total.tp, total.tp + total.fn_);
    report.precision = Some(p);
    report.recall = Some(r);
    report.f1 = Some(f1_score(p, r));
    Ok(report)
}

/// Fraction of tokens whose predicted label equals the gold label.
pub fn token_accuracy(pred: &PredictionSet, gold: &CorpusSplit) -> Result<EvalReport> {
    let (per_label, correct) = pred
        .records
        .par_iter()
        .map(|record| {
            check_alignment(record, gold)?;
            let gold_labels = &gold.sentences[record.test_id].labels;
            let mut counts: BTreeMap<String, LabelCounts> = BTreeMap::new();
            let mut correct = 0usize;
            for (g, p) in gold_labels.iter().zip(&record.predicted) {
                if g == p {
                    correct += 1;
                    counts.entry(g.clone()).or_default().tp += 1;
                } else {
                    counts.entry(p.clone()).or_default().fp += 1;
                    counts.entry(g.clone()).or_default().fn_ += 1;
                }
            }
            Ok::<_, Error>((counts, correct))
        })
        .try_reduce(
            || (BTreeMap::new(), 0),
            |(a, ca), (b, cb)| Ok((merge(a, b), ca + cb)),
        )?;
    let n_tokens = pred.records.iter().map(|r| r.tokens.len()).sum();
    Ok(EvalReport {
        task: gold.scheme.task(),
        precision: None,
        recall: None,
        f1: None,
        accuracy: Some(ratio(correct, n_tokens)),
        per_label,
        n_sentences: pred.records.len(),
        n_tokens,
    })
}

/// The task's reported metric: span F1 for BIO schemes, accuracy otherwise.
pub fn evaluate(pred: &PredictionSet, gold: &CorpusSplit) -> Result<EvalReport> {
    if gold.scheme.is_bio() {
        micro_f1(pred, gold)
    } else {
        token_accuracy(pred, gold)
    }
}

/// Sentences with at least one wrong label, as `(test_id, positions)`.
pub fn error_listing(pred: &PredictionSet) -> Vec<(usize, Vec<usize>)> {
    pred.records
        .iter()
        .filter_map(|r| {
            let wrong: Vec<usize> = r
                .gold
                .iter()
                .zip(&r.predicted)
                .enumerate()
                .filter(|(_, (g, p))| g != p)
                .map(|(i, _)| i)
                .collect();
            (!wrong.is_empty()).then_some((r.test_id, wrong))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelScheme, SplitName, TaggedSentence};

    fn labels(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn span(start: usize, end: usize, kind: &str) -> Span {
        Span {
            start,
            end,
            kind: kind.into(),
        }
    }

    #[test]
    fn spans_follow_conlleval() {
        assert_eq!(
            extract_spans(&labels(&["B-ORG", "I-ORG", "O"])),
            BTreeSet::from([span(0, 2, "ORG")])
        );
        assert!(extract_spans(&labels(&["O", "O"])).is_empty());
        assert_eq!(
            extract_spans(&labels(&["I-PER", "I-PER", "I-LOC", "B-LOC", "I-LOC"])),
            BTreeSet::from([span(0, 2, "PER"), span(2, 3, "LOC"), span(3, 5, "LOC")])
        );
        assert_eq!(
            extract_spans(&labels(&["B-NP", "O", "I-NP"])),
            BTreeSet::from([span(0, 1, "NP"), span(2, 3, "NP")])
        );
    }

    fn setup(gold: &[&str], pred: &[&str]) -> (CorpusSplit, PredictionSet) {
        let tokens: Vec<String> = (0..gold.len()).map(|i| format!("w{i}")).collect();
        let split = CorpusSplit::new(
            SplitName::Test,
            LabelScheme::conll2003_ner(),
            vec![TaggedSentence::new(0, tokens.clone(), labels(gold)).unwrap()],
        )
        .unwrap();
        let set = PredictionSet {
            records: vec![PredictionRecord {
                test_id: 0,
                tokens,
                gold: labels(gold),
                predicted: labels(pred),
                example_ids: vec![],
                prompt_hash: String::new(),
                repairs: vec![],
            }],
            failures: vec![],
        };
        (split, set)
    }

    #[test]
    fn half_recall_case() {
        let (gold, pred) = setup(
            &["B-PER", "I-PER", "O", "B-LOC"],
            &["B-PER", "I-PER", "O", "O"],
        );
        let report = micro_f1(&pred, &gold).unwrap();
        assert_eq!(report.precision, Some(1.0));
        assert_eq!(report.recall, Some(0.5));
        assert!((report.f1.unwrap() - 0.66667).abs() < 1e-5);
    }

    #[test]
    fn perfect_and_empty() {
        let (gold, pred) = setup(&["B-ORG", "O"], &["B-ORG", "O"]);
        assert_eq!(micro_f1(&pred, &gold).unwrap().f1, Some(1.0));
        let (gold, pred) = setup(&["O", "O"], &["O", "O"]);
        assert_eq!(micro_f1(&pred, &gold).unwrap().f1, Some(0.0));
    }

    #[test]
    fn misalignment_names_sentence() {
        let (gold, mut pred) = setup(&["B-ORG", "O"], &["B-ORG", "O"]);
        pred.records[0].predicted.pop();
        assert!(matches!(
            micro_f1(&pred, &gold),
            Err(Error::Alignment { test_id: 0, .. })
        ));
        pred.records[0].test_id = 9;
        assert!(matches!(
            token_accuracy(&pred, &gold),
            Err(Error::Alignment { test_id: 9, .. })
        ));
    }

    #[test]
    fn accuracy_half() {
        let (gold, pred) = setup(&["B-ORG", "O", "O", "O"], &["O", "O", "B-PER", "O"]);
        let report = token_accuracy(&pred, &gold).unwrap();
        assert_eq!(report.accuracy, Some(0.5));
        assert!(report.f1.is_none());
        assert_eq!(error_listing(&pred), vec![(0, vec![0, 2])]);
    }

    #[test]
    fn report_renders() {
        let (gold, pred) = setup(&["B-ORG", "O"], &["B-ORG", "O"]);
        let report = micro_f1(&pred, &gold).unwrap();
        let text = report.to_string();
        assert!(text.contains("F1: 100.00"));
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["f1"], 1.0);
        assert!(json.get("accuracy").is_none());
    }
}
