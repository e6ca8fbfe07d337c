//! Column-format corpora, unlabeled sentence pools and training configuration files.
//!
//! Labeled corpus format (UTF-8):
//!
//! ```text
//! # lang: en
//! # doc: wsj_0001
//! On	O
//! March	B-DATE
//! 3	I-DATE
//!
//! ```
//!
//! One token per line as `token<TAB>label`, a blank line ends a sentence.
//! A file may also omit the label column entirely (tagging input).

mod config;

pub use config::{parse_config, validate_config};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{iob2_to_spans, spans_to_iob2, DocumentSpans, TimexSpan};
use crate::tagger::{Label, LabelScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub language: String,
    pub tokens: Vec<String>,
    pub labels: Option<Vec<Label>>,
    pub doc_id: String,
}

impl AnnotatedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold spans, empty when the sentence is unlabeled.
    pub fn spans(&self) -> Vec<TimexSpan> {
        self.labels.as_deref().map(iob2_to_spans).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub language: String,
    pub split: Option<Split>,
    pub sentences: Vec<AnnotatedSentence>,
}

impl Corpus {
    pub fn new(language: impl Into<String>, sentences: Vec<AnnotatedSentence>) -> Self {
        Self {
            language: language.into(),
            split: None,
            sentences,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.sentences.iter().all(|s| s.labels.is_some())
    }

    /// Gold spans grouped into evaluation documents.
    pub fn gold_documents(&self) -> Vec<DocumentSpans> {
        group_documents(
            self.sentences
                .iter()
                .map(|s| (s.doc_id.as_str(), s.len(), s.spans())),
        )
    }

    /// Serializes to the column format. Loading the result yields an equal corpus.
    pub fn to_column_string(&self) -> String {
        let mut out = format!("# lang: {}\n", self.language);
        let mut current_doc: Option<&str> = None;
        let mut directives = false;
        for (i, s) in self.sentences.iter().enumerate() {
            if current_doc != Some(s.doc_id.as_str()) && (directives || s.doc_id != default_doc_id(i)) {
                out.push_str(&format!("# doc: {}\n", s.doc_id));
                directives = true;
            }
            current_doc = Some(&s.doc_id);
            for (k, tok) in s.tokens.iter().enumerate() {
                out.push_str(tok);
                if let Some(labels) = &s.labels {
                    out.push('\t');
                    out.push_str(&labels[k].to_string());
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_column_string()).map_err(|e| Error::io(path, e))
    }
}

/// Concatenates consecutive sentences sharing a document id, offsetting spans
/// by the running token count.
pub fn group_documents<'a>(items: impl IntoIterator<Item = (&'a str, usize, Vec<TimexSpan>)>) -> Vec<DocumentSpans> {
    let mut docs: Vec<DocumentSpans> = Vec::new();
    let mut offset = 0;
    for (id, len, spans) in items {
        match docs.last_mut() {
            Some(d) if d.id == id => {}
            _ => {
                docs.push(DocumentSpans::new(id, Vec::new()));
                offset = 0;
            }
        }
        let d = docs.last_mut().unwrap();
        d.spans.extend(spans.into_iter().map(|s| s.shifted(offset)));
        offset += len;
    }
    docs
}

fn default_doc_id(index: usize) -> String {
    format!("s{index}")
}

/// Loads a labeled (or token-only) column-format corpus.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labeled(&text, &path.display().to_string())
}

/// Parses column-format text; `origin` names the source in error messages.
pub fn parse_labeled(text: &str, origin: &str) -> Result<Corpus> {
    let mut language: Option<String> = None;
    let mut columns: Option<usize> = None;
    let mut sentences: Vec<AnnotatedSentence> = Vec::new();
    let mut doc: Option<String> = None;
    let mut seen_docs: HashSet<String> = HashSet::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut labels: Vec<Label> = Vec::new();
    let mut start_line = 0;

    let mut finish = |tokens: &mut Vec<String>,
                      labels: &mut Vec<Label>,
                      doc: &Option<String>,
                      language: &str,
                      line: usize,
                      has_labels: bool|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let index = sentences.len();
        let doc_id = doc.clone().unwrap_or_else(|| default_doc_id(index));
        let continues = sentences.last().is_some_and(|s| s.doc_id == doc_id);
        if !continues && !seen_docs.insert(doc_id.clone()) {
            return Err(Error::Data(format!("{origin}: duplicate document id '{doc_id}'")));
        }
        let mut labs = std::mem::take(labels);
        if has_labels && !LabelScheme.is_valid_sequence(&labs) {
            log::warn!("{origin}:{line}: invalid IOB2 sequence repaired (orphan I- label opens a span)");
            labs = spans_to_iob2(&iob2_to_spans(&labs), labs.len())?;
        }
        sentences.push(AnnotatedSentence {
            language: language.to_string(),
            tokens: std::mem::take(tokens),
            labels: has_labels.then_some(labs),
            doc_id,
        });
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(lang) = &language {
                finish(&mut tokens, &mut labels, &doc, lang, start_line, columns == Some(2))?;
            }
            continue;
        }
        if line.starts_with('#') && !line.contains('\t') {
            let body = line[1..].trim();
            if let Some(v) = body.strip_prefix("lang:") {
                if language.is_some() {
                    return Err(Error::format(origin, lineno, "repeated '# lang:' directive"));
                }
                let v = v.trim();
                if v.is_empty() {
                    return Err(Error::format(origin, lineno, "empty language code"));
                }
                language = Some(v.to_string());
            } else if let Some(v) = body.strip_prefix("doc:") {
                let lang = language
                    .as_deref()
                    .ok_or_else(|| Error::format(origin, lineno, "'# lang:' must come first"))?;
                finish(&mut tokens, &mut labels, &doc, lang, start_line, columns == Some(2))?;
                doc = Some(v.trim().to_string());
            }
            continue;
        }
        if language.is_none() {
            return Err(Error::format(origin, lineno, "missing '# lang: <iso>' header"));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() != expected || !(1..=2).contains(&fields.len()) {
            return Err(Error::format(
                origin,
                lineno,
                format!("expected {expected} tab-separated column(s), found {}", fields.len()),
            ));
        }
        let token = fields[0].trim();
        if token.is_empty() {
            return Err(Error::format(origin, lineno, "empty token"));
        }
        if tokens.is_empty() {
            start_line = lineno;
        }
        tokens.push(token.to_string());
        if expected == 2 {
            let label = fields[1]
                .trim()
                .parse::<Label>()
                .map_err(|e| Error::Data(format!("{origin}:{lineno}: {e}")))?;
            labels.push(label);
        }
    }
    let language = language.ok_or_else(|| Error::format(origin, 1, "missing '# lang: <iso>' header"))?;
    finish(&mut tokens, &mut labels, &doc, &language, start_line, columns == Some(2))?;
    Ok(Corpus {
        language,
        split: None,
        sentences,
    })
}

/// One whitespace-tokenized sentence per line; blank lines are skipped.
pub fn load_unlabeled(path: impl AsRef<Path>, language: &str) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pool: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|t| !t.is_empty())
        .collect();
    if pool.is_empty() {
        log::warn!("{}: unlabeled pool for '{language}' is empty", path.display());
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::TimexType;

    const TWO: &str = "# lang: en\nOn\tO\nMarch\tB-DATE\n3\tI-DATE\n\nIt\tO\nrained\tO\n";

    #[test]
    fn two_sentences() {
        let c = parse_labeled(TWO, "mem").unwrap();
        assert_eq!(c.language, "en");
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].spans(), vec![TimexSpan::new(1, 2, TimexType::Date)]);
        assert_eq!(c.sentences[1].doc_id, "s1");
    }

    #[test]
    fn ragged_line_reports_line_number() {
        let text = "# lang: en\nOn\tO\nMarch\tB-DATE\textra\n";
        match parse_labeled(text, "f.txt") {
            Err(Error::Format { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "f.txt");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_a_data_error() {
        let text = "# lang: en\nparty\tB-EVENT\n";
        assert!(matches!(parse_labeled(text, "f"), Err(Error::Data(_))));
    }

    #[test]
    fn missing_language_header() {
        assert!(matches!(parse_labeled("On\tO\n", "f"), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn invalid_iob2_is_repaired() {
        let c = parse_labeled("# lang: es\nel\tO\nlunes\tI-DATE\n", "f").unwrap();
        let labels = c.sentences[0].labels.clone().unwrap();
        assert_eq!(labels[1], Label::B(TimexType::Date));
    }

    #[test]
    fn doc_directive_groups_sentences() {
        let text = "# lang: en\n# doc: a\nx\tO\n\ny\tB-SET\n\n# doc: b\nz\tB-DATE\n";
        let c = parse_labeled(text, "f").unwrap();
        let docs = c.gold_documents();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].id, "a");
        assert_eq!(docs[0].spans, vec![TimexSpan::new(1, 1, TimexType::Set)]);
        assert_eq!(docs[1].spans, vec![TimexSpan::new(0, 0, TimexType::Date)]);
    }

    #[test]
    fn duplicate_document_is_rejected() {
        let text = "# lang: en\n# doc: a\nx\tO\n\n# doc: b\ny\tO\n\n# doc: a\nz\tO\n";
        assert!(matches!(parse_labeled(text, "f"), Err(Error::Data(_))));
    }

    #[test]
    fn token_only_file_has_no_labels() {
        let c = parse_labeled("# lang: de\nam\nMontag\n", "f").unwrap();
        assert!(c.sentences[0].labels.is_none());
        assert!(!c.is_labeled());
    }

    #[test]
    fn serialization_round_trips() {
        let text = "# lang: en\n# doc: a\nx\tO\n\ny\tB-SET\n\n# doc: b\nz\tB-DATE\nw\tI-DATE\n";
        let c = parse_labeled(text, "f").unwrap();
        let again = parse_labeled(&c.to_column_string(), "g").unwrap();
        assert_eq!(c, again);
        let plain = parse_labeled(TWO, "f").unwrap();
        assert_eq!(parse_labeled(&plain.to_column_string(), "g").unwrap(), plain);
    }

    #[test]
    fn unlabeled_pool_skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.txt");
        fs::write(&p, "a b c\n\n  \nd e\nf\n").unwrap();
        let pool = load_unlabeled(&p, "xx").unwrap();
        assert_eq!(pool.len(), 3);
        let joined: String = pool.iter().map(|t| t.join(" ") + "\n").collect();
        fs::write(&p, joined).unwrap();
        assert_eq!(load_unlabeled(&p, "xx").unwrap(), pool);
    }
}
