//! Span decoding, strict/relaxed/type scoring, significance testing and
//! corpus statistics.

mod score;
mod significance;
mod spans;

use std::fmt;

use serde::Serialize;

pub use score::{f1, match_document, per_document_f1, score, DocumentSpans, MatchCounts, Metric, Prf, ScoreReport};
pub use significance::paired_permutation_test;
pub use spans::{iob2_strings_to_spans, iob2_to_spans, spans_to_iob2, TimexSpan};

use crate::corpus::Corpus;

/// Sentence and temporal-expression counts of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub expressions: usize,
}

impl fmt::Display for CorpusStats {
    /// `"<sentences> / <expressions>"` with thousands separators.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", grouped(self.sentences), grouped(self.expressions))
    }
}

fn grouped(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    CorpusStats {
        sentences: corpus.sentences.len(),
        expressions: corpus.sentences.iter().map(|s| s.spans().len()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedSentence;
    use crate::tagger::{Label, TimexType};

    #[test]
    fn empty_corpus() {
        let c = Corpus::new("en", vec![]);
        assert_eq!(corpus_stats(&c).to_string(), "0 / 0");
    }

    #[test]
    fn counts_spans() {
        let sent = |labels: Vec<Label>| AnnotatedSentence {
            language: "en".into(),
            tokens: vec!["t".into(); labels.len()],
            labels: Some(labels),
            doc_id: "d".into(),
        };
        let d = TimexType::Date;
        let c = Corpus::new("en", vec![sent(vec![Label::B(d), Label::I(d), Label::O]), sent(vec![Label::O])]);
        assert_eq!(corpus_stats(&c), CorpusStats { sentences: 2, expressions: 1 });
    }

    #[test]
    fn table_format_groups_thousands() {
        let s = CorpusStats {
            sentences: 3461,
            expressions: 1456,
        };
        assert_eq!(s.to_string(), "3,461 / 1,456");
        assert_eq!(grouped(1_234_567), "1,234,567");
        assert_eq!(grouped(999), "999");
    }
}
