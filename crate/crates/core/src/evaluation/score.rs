use std::fmt;

use serde::{Deserialize, Serialize};

use super::spans::TimexSpan;
use crate::error::{Error, Result};

/// Spans of one evaluation document, token offsets relative to the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSpans {
    pub id: String,
    pub spans: Vec<TimexSpan>,
}

impl DocumentSpans {
    pub fn new(id: impl Into<String>, spans: Vec<TimexSpan>) -> Self {
        Self { id: id.into(), spans }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Strict,
    Relaxed,
    Type,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Metric::Strict),
            "relaxed" => Ok(Metric::Relaxed),
            "type" => Ok(Metric::Type),
            other => Err(Error::Parameter(format!("unknown metric '{other}' (strict|relaxed|type)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(matches: usize, gold: usize, predicted: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { matches as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { matches as f64 / gold as f64 };
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub gold: usize,
    pub predicted: usize,
    pub strict: usize,
    pub relaxed: usize,
    pub typed: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.gold += o.gold;
        self.predicted += o.predicted;
        self.strict += o.strict;
        self.relaxed += o.relaxed;
        self.typed += o.typed;
    }
}

/// Micro-averaged strict, relaxed and type scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub strict: Prf,
    pub relaxed: Prf,
    #[serde(rename = "type")]
    pub typed: Prf,
    pub counts: MatchCounts,
}

impl ScoreReport {
    pub fn from_counts(counts: MatchCounts) -> Self {
        Self {
            strict: Prf::from_counts(counts.strict, counts.gold, counts.predicted),
            relaxed: Prf::from_counts(counts.relaxed, counts.gold, counts.predicted),
            typed: Prf::from_counts(counts.typed, counts.gold, counts.predicted),
            counts,
        }
    }

    pub fn f1(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Strict => self.strict.f1,
            Metric::Relaxed => self.relaxed.f1,
            Metric::Type => self.typed.f1,
        }
    }

    /// TempEval-3 style attribute score: relaxed F1 times type accuracy over relaxed matches.
    pub fn type_f1_tempeval(&self) -> f64 {
        if self.counts.relaxed == 0 {
            0.0
        } else {
            self.relaxed.f1 * self.counts.typed as f64 / self.counts.relaxed as f64
        }
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>10}{:>10}{:>10}", "metric", "precision", "recall", "f1")?;
        for (name, prf) in [("strict", self.strict), ("relaxed", self.relaxed), ("type", self.typed)] {
            writeln!(
                f,
                "{:<10}{:>10.4}{:>10.4}{:>10.4}",
                name, prf.precision, prf.recall, prf.f1
            )?;
        }
        write!(
            f,
            "gold={} predicted={} strict={} relaxed={} type={}",
            self.counts.gold, self.counts.predicted, self.counts.strict, self.counts.relaxed, self.counts.typed
        )
    }
}

/// Match counts for one document.
///
/// Relaxed matching is one-to-one and greedy: gold spans are visited by start
/// index and each takes an unmatched overlapping prediction, preferring one
/// with identical boundaries and otherwise the leftmost.
pub fn match_document(gold: &[TimexSpan], pred: &[TimexSpan]) -> MatchCounts {
    let mut gold_sorted = gold.to_vec();
    gold_sorted.sort();
    let mut pred_sorted = pred.to_vec();
    pred_sorted.sort();
    let mut used = vec![false; pred_sorted.len()];
    let mut counts = MatchCounts {
        gold: gold.len(),
        predicted: pred.len(),
        ..Default::default()
    };
    for g in &gold_sorted {
        let candidates = || {
            pred_sorted
                .iter()
                .enumerate()
                .filter(|(j, p)| !used[*j] && p.overlaps(g))
        };
        let chosen = candidates()
            .find(|(_, p)| p.start == g.start && p.end == g.end)
            .or_else(|| candidates().next())
            .map(|(j, _)| j);
        if let Some(j) = chosen {
            used[j] = true;
            let p = &pred_sorted[j];
            counts.relaxed += 1;
            if p.start == g.start && p.end == g.end {
                counts.strict += 1;
            }
            if p.kind == g.kind {
                counts.typed += 1;
            }
        }
    }
    counts
}

fn check_ids(gold: &[DocumentSpans], pred: &[DocumentSpans]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "gold has {} documents, prediction has {}",
            gold.len(),
            pred.len()
        )));
    }
    for (g, p) in gold.iter().zip(pred) {
        if g.id != p.id {
            return Err(Error::Data(format!("document id mismatch: gold '{}' vs predicted '{}'", g.id, p.id)));
        }
    }
    Ok(())
}

/// Micro-averaged scores over paired documents.
pub fn score(gold: &[DocumentSpans], pred: &[DocumentSpans]) -> Result<ScoreReport> {
    check_ids(gold, pred)?;
    let mut total = MatchCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        total += match_document(&g.spans, &p.spans);
    }
    Ok(ScoreReport::from_counts(total))
}

/// One F1 value per document, the unit of the paired permutation test.
pub fn per_document_f1(gold: &[DocumentSpans], pred: &[DocumentSpans], metric: Metric) -> Result<Vec<f64>> {
    check_ids(gold, pred)?;
    Ok(gold
        .iter()
        .zip(pred)
        .map(|(g, p)| ScoreReport::from_counts(match_document(&g.spans, &p.spans)).f1(metric))
        .collect())
}
