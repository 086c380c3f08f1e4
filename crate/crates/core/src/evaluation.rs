//! Exact-match scoring, the multi-triplet slice and invalid-prediction rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnnotatedSentence, Extraction, SequenceDiagnostics, SubtaskKind};

/// Extractions attached to one sentence id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTuples {
    pub id: String,
    pub tuples: Vec<Extraction>,
}

impl SentenceTuples {
    pub fn new(id: impl Into<String>, tuples: impl IntoIterator<Item = Extraction>) -> Self {
        SentenceTuples {
            id: id.into(),
            tuples: tuples.into_iter().collect(),
        }
    }

    fn projected(&self, subtask: SubtaskKind) -> BTreeSet<Extraction> {
        self.tuples.iter().filter_map(|t| t.project(subtask)).collect()
    }

    /// More than one distinct aspect or more than one distinct opinion.
    pub fn is_multi_triplet(&self) -> bool {
        let aspects: BTreeSet<_> = self.tuples.iter().map(|t| t.aspect()).collect();
        let opinions: BTreeSet<_> = self.tuples.iter().filter_map(|t| t.opinion()).collect();
        aspects.len() > 1 || opinions.len() > 1
    }
}

impl From<&AnnotatedSentence> for SentenceTuples {
    fn from(s: &AnnotatedSentence) -> Self {
        SentenceTuples::new(s.id.clone(), s.triplets.iter().map(|t| Extraction::Triplet(*t)))
    }
}

/// Micro-averaged precision, recall and F1 with their raw counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Prf {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
        }
    }
}

fn align<'a>(
    predictions: &'a [SentenceTuples],
    golds: &'a [SentenceTuples],
) -> Result<Vec<(&'a SentenceTuples, &'a SentenceTuples)>> {
    let mut by_id: BTreeMap<&str, &SentenceTuples> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Alignment(format!("duplicate prediction id {:?}", p.id)));
        }
    }
    if predictions.len() != golds.len() {
        return Err(Error::Alignment(format!(
            "{} predictions for {} gold sentences",
            predictions.len(),
            golds.len()
        )));
    }
    golds
        .iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (*p, g))
                .ok_or_else(|| Error::Alignment(format!("no prediction for sentence {:?}", g.id)))
        })
        .collect()
}

fn count(pairs: &[(&SentenceTuples, &SentenceTuples)], subtask: SubtaskKind) -> Prf {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (pred, gold) in pairs {
        let p = pred.projected(subtask);
        let g = gold.projected(subtask);
        tp += p.intersection(&g).count();
        np += p.len();
        ng += g.len();
    }
    Prf::from_counts(tp, np, ng)
}

/// Corpus-level exact-match scores. Duplicate predictions within a sentence
/// count once.
pub fn exact_match_scores(
    predictions: &[SentenceTuples],
    golds: &[SentenceTuples],
    subtask: SubtaskKind,
) -> Result<Prf> {
    Ok(count(&align(predictions, golds)?, subtask))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub scores: Prf,
    pub sentences: usize,
    /// No sentence qualified for the slice.
    pub empty: bool,
}

/// Scores restricted to sentences whose gold annotation has more than one
/// distinct aspect or opinion.
pub fn multi_triplet_breakdown(
    predictions: &[SentenceTuples],
    golds: &[SentenceTuples],
    subtask: SubtaskKind,
) -> Result<SliceReport> {
    let pairs: Vec<_> = align(predictions, golds)?
        .into_iter()
        .filter(|(_, g)| g.is_multi_triplet())
        .collect();
    Ok(SliceReport {
        scores: count(&pairs, subtask),
        sentences: pairs.len(),
        empty: pairs.is_empty(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InvalidRates {
    /// Length-error groups over all groups, in percent.
    pub err_length_rate: f64,
    /// Order-error groups over all groups, in percent.
    pub err_order_rate: f64,
    pub total_groups: usize,
    /// Percent of sentences with at least one length error.
    pub sentence_err_length_rate: f64,
    /// Percent of sentences with at least one order error.
    pub sentence_err_order_rate: f64,
    /// No groups were generated at all.
    pub empty: bool,
}

pub fn invalid_rates(diagnostics: &[SequenceDiagnostics]) -> InvalidRates {
    let mut total = SequenceDiagnostics::default();
    for d in diagnostics {
        total += *d;
    }
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let sentences = diagnostics.len();
    InvalidRates {
        err_length_rate: pct(total.err_length_count, total.total_groups),
        err_order_rate: pct(total.err_order_count, total.total_groups),
        total_groups: total.total_groups,
        sentence_err_length_rate: pct(
            diagnostics.iter().filter(|d| d.err_length_count > 0).count(),
            sentences,
        ),
        sentence_err_order_rate: pct(
            diagnostics.iter().filter(|d| d.err_order_count > 0).count(),
            sentences,
        ),
        empty: total.total_groups == 0,
    }
}

/// Everything `evaluate` reports for one dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subtasks: BTreeMap<SubtaskKind, Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi_triplet: Option<BTreeMap<SubtaskKind, SliceReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invalid: Option<InvalidRates>,
}

impl MetricsReport {
    pub fn build(
        predictions: &[SentenceTuples],
        golds: &[SentenceTuples],
        subtasks: &[SubtaskKind],
        multi_triplet: bool,
        diagnostics: Option<&[SequenceDiagnostics]>,
    ) -> Result<MetricsReport> {
        let mut report = MetricsReport::default();
        for &s in subtasks {
            report.subtasks.insert(s, exact_match_scores(predictions, golds, s)?);
        }
        if multi_triplet {
            let mut slices = BTreeMap::new();
            for &s in subtasks {
                slices.insert(s, multi_triplet_breakdown(predictions, golds, s)?);
            }
            report.multi_triplet = Some(slices);
        }
        report.invalid = diagnostics.map(invalid_rates);
        Ok(report)
    }

    /// Plain-text tables in percent, one row per metric.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let subtasks: Vec<SubtaskKind> = self.subtasks.keys().copied().collect();
        let header = |out: &mut String, title: &str| {
            let _ = write!(out, "{title:<12}");
            for s in &subtasks {
                let _ = write!(out, "{:>10}", s.name());
            }
            out.push('\n');
        };
        let rows = |out: &mut String, get: &dyn Fn(SubtaskKind) -> Prf| {
            for (label, pick) in [("P", 0), ("R", 1), ("F1", 2)] {
                let _ = write!(out, "{label:<12}");
                for &s in &subtasks {
                    let prf = get(s);
                    let v = [prf.precision, prf.recall, prf.f1][pick];
                    let _ = write!(out, "{:>10.2}", 100.0 * v);
                }
                out.push('\n');
            }
        };
        header(&mut out, "Overall");
        rows(&mut out, &|s| self.subtasks[&s]);
        if let Some(slices) = &self.multi_triplet {
            out.push('\n');
            header(&mut out, "Multi");
            rows(&mut out, &|s| slices[&s].scores);
        }
        if let Some(inv) = &self.invalid {
            out.push('\n');
            let _ = writeln!(out, "{:<12}{:>10}", "Error(%)", "triplet");
            let _ = writeln!(out, "{:<12}{:>10.2}", "Err-length", inv.err_length_rate);
            let _ = writeln!(out, "{:<12}{:>10.2}", "Err-order", inv.err_order_rate);
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode_indices;
    use crate::types::{Polarity, Span, Triplet};

    fn t(a: usize, o: usize, p: Polarity) -> Extraction {
        Extraction::Triplet(Triplet::new(Span::word(a).unwrap(), Span::word(o).unwrap(), p))
    }

    #[test]
    fn identical_is_perfect() {
        let g = vec![SentenceTuples::new("a", [t(1, 2, Polarity::Positive)])];
        let prf = exact_match_scores(&g, &g, SubtaskKind::Triplet).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_pred_one_correct_three_gold() {
        let gold = vec![SentenceTuples::new(
            "a",
            [t(1, 2, Polarity::Positive), t(3, 4, Polarity::Negative), t(5, 6, Polarity::Neutral)],
        )];
        let pred = vec![SentenceTuples::new("a", [t(1, 2, Polarity::Positive), t(3, 4, Polarity::Positive)])];
        let prf = exact_match_scores(&pred, &gold, SubtaskKind::Triplet).unwrap();
        assert_eq!(prf.precision, 0.5);
        assert_eq!(prf.recall, 1.0 / 3.0);
        assert!((prf.f1 - 0.4).abs() < 1e-15);
        // the polarity slip still counts for pairs
        let pair = exact_match_scores(&pred, &gold, SubtaskKind::Pair).unwrap();
        assert_eq!(pair.true_positives, 2);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let gold = vec![SentenceTuples::new("a", [t(1, 2, Polarity::Positive)])];
        let pred = vec![SentenceTuples::new("a", [])];
        let prf = exact_match_scores(&pred, &gold, SubtaskKind::Aesc).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn misaligned_ids_fail() {
        let gold = vec![SentenceTuples::new("a", [])];
        let pred = vec![SentenceTuples::new("b", [])];
        assert!(matches!(
            exact_match_scores(&pred, &gold, SubtaskKind::Triplet),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn multi_slice_flags_empty() {
        let g = vec![SentenceTuples::new("a", [t(1, 2, Polarity::Positive)])];
        let slice = multi_triplet_breakdown(&g, &g, SubtaskKind::Triplet).unwrap();
        assert!(slice.empty);
        assert_eq!(slice.sentences, 0);
    }

    #[test]
    fn crafted_invalid_batch() {
        // ten groups over four sentences (n = 4): two length errors, three order errors
        let seqs: [&[usize]; 4] = [
            &[2, 2, 1, 1, 5, 2, 1, 1, 1, 5, 4, 4, 3, 3, 6],
            &[2, 2, 1, 5, 1, 1, 2, 2, 7],
            &[3, 3, 2, 1, 6, 4, 4, 4, 3, 5],
            &[1, 1, 2, 2, 5, 3, 3, 4, 4, 6, 4, 4],
        ];
        let diags: Vec<_> = seqs
            .iter()
            .map(|s| decode_indices(s, 4, SubtaskKind::Triplet).unwrap().diagnostics)
            .collect();
        let rates = invalid_rates(&diags);
        assert_eq!(rates.total_groups, 10);
        assert_eq!(rates.err_length_rate, 20.0);
        assert_eq!(rates.err_order_rate, 30.0);
        assert!(invalid_rates(&[]).empty);
    }

    #[test]
    fn report_renders_tables() {
        let g = vec![SentenceTuples::new("a", [t(1, 2, Polarity::Positive), t(3, 2, Polarity::Positive)])];
        let diags = [SequenceDiagnostics { total_groups: 2, ..Default::default() }];
        let report = MetricsReport::build(&g, &g, &SubtaskKind::ALL, true, Some(&diags)).unwrap();
        let table = report.to_table();
        assert!(table.contains("Multi") && table.contains("Err-order"), "{table}");
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["subtasks"]["triplet"]["f1"], 1.0);
    }
}
