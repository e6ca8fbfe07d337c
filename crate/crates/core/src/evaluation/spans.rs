use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagger::{Label, TimexType};

/// A temporal expression as an inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimexSpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub kind: TimexType,
}

impl TimexSpan {
    pub fn new(start: usize, end: usize, kind: TimexType) -> Self {
        debug_assert!(start <= end);
        Self { start, end, kind }
    }

    pub fn overlaps(&self, other: &TimexSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn shifted(self, offset: usize) -> Self {
        Self {
            start: self.start + offset,
            end: self.end + offset,
            kind: self.kind,
        }
    }
}

/// Decodes maximal `B-X (I-X)*` runs into spans.
///
/// An `I-X` without a valid predecessor opens a new span of type X, so every
/// label sequence decodes to a well-formed span list.
pub fn iob2_to_spans(labels: &[Label]) -> Vec<TimexSpan> {
    let mut spans = Vec::new();
    let mut open: Option<TimexSpan> = None;
    for (i, &label) in labels.iter().enumerate() {
        match label {
            Label::O => {
                spans.extend(open.take());
            }
            Label::B(t) => {
                spans.extend(open.take());
                open = Some(TimexSpan::new(i, i, t));
            }
            Label::I(t) => match &mut open {
                Some(span) if span.kind == t => span.end = i,
                _ => {
                    spans.extend(open.take());
                    open = Some(TimexSpan::new(i, i, t));
                }
            },
        }
    }
    spans.extend(open);
    spans
}

/// Same as [`iob2_to_spans`] for label strings.
pub fn iob2_strings_to_spans<S: AsRef<str>>(labels: &[S]) -> Result<Vec<TimexSpan>> {
    let parsed = labels
        .iter()
        .map(|s| s.as_ref().parse::<Label>())
        .collect::<Result<Vec<_>>>()?;
    Ok(iob2_to_spans(&parsed))
}

/// Encodes spans as IOB2 labels over a sentence of `len` tokens.
pub fn spans_to_iob2(spans: &[TimexSpan], len: usize) -> Result<Vec<Label>> {
    let mut labels = vec![Label::O; len];
    let mut taken = vec![false; len];
    for span in spans {
        if span.start > span.end || span.end >= len {
            return Err(Error::Data(format!(
                "span {}..={} does not fit a sentence of {len} tokens",
                span.start, span.end
            )));
        }
        for i in span.start..=span.end {
            if taken[i] {
                return Err(Error::Data(format!("overlapping spans at token {i}")));
            }
            taken[i] = true;
            labels[i] = if i == span.start { Label::B(span.kind) } else { Label::I(span.kind) };
        }
    }
    Ok(labels)
}
