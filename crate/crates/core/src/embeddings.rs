//! Per-language word vectors and the lookup E(x) feeding the feature extractor.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::linalg::orthogonality_error;
use crate::math::Tensor;
use crate::tagger::TaggerModel;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_FORM: &str = "<pad>";
const UNK_FORM: &str = "<unk>";

/// Surface forms with dense indices. Index 0 is padding and 1 is the unknown
/// word; lookups of forms not in the vocabulary resolve to UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    forms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self {
            forms: vec![PAD_FORM.to_string(), UNK_FORM.to_string()],
            index: HashMap::new(),
        }
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for w in words {
            v.push(w.into());
        }
        v
    }

    /// Appends a form; a repeated form keeps its first index.
    pub fn push(&mut self, form: String) -> usize {
        let idx = self.forms.len();
        self.index.entry(form.clone()).or_insert(idx);
        self.forms.push(form);
        idx
    }

    /// Total size including the two reserved entries.
    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.len() <= 2
    }

    /// Number of real words (excluding PAD and UNK).
    pub fn word_count(&self) -> usize {
        self.forms.len() - 2
    }

    /// Real words in index (frequency) order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.forms[2..].iter().map(String::as_str)
    }

    pub fn form(&self, idx: usize) -> &str {
        &self.forms[idx]
    }

    pub fn contains(&self, form: &str) -> bool {
        self.index.contains_key(form)
    }

    pub fn exact(&self, form: &str) -> Option<usize> {
        self.index.get(form).copied()
    }

    /// Exact form, then lowercased form, then UNK.
    pub fn lookup(&self, form: &str) -> usize {
        if let Some(i) = self.exact(form) {
            return i;
        }
        let lower = form.to_lowercase();
        if lower != form {
            if let Some(i) = self.exact(&lower) {
                return i;
            }
        }
        UNK
    }
}

/// Word vectors for one language, optionally mapped by an orthogonal matrix
/// into a shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub language: String,
    pub vocab: Vocabulary,
    vectors: Tensor,
    alignment: Option<Tensor>,
}

impl EmbeddingSpace {
    /// Builds a space from real words and their vectors; PAD is zero and UNK
    /// the mean of all rows.
    pub fn from_rows(language: impl Into<String>, words: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Data("embedding space needs at least one word".into()));
        }
        if words.len() != rows.len() {
            return Err(Error::Dimension(format!("{} words but {} vectors", words.len(), rows.len())));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("vectors must share one non-zero dimensionality".into()));
        }
        let n = rows.len();
        let mut data = vec![0.0; (n + 2) * dim];
        for (i, row) in rows.iter().enumerate() {
            data[(i + 2) * dim..(i + 3) * dim].copy_from_slice(row);
            for (m, v) in data[dim..2 * dim].iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut data[dim..2 * dim] {
            *m /= n as f64;
        }
        Ok(Self {
            language: language.into(),
            vocab: Vocabulary::from_words(words),
            vectors: Tensor::matrix(n + 2, dim, data),
            alignment: None,
        })
    }

    /// Reassembles a space from a full vector table (including PAD/UNK rows).
    pub(crate) fn from_parts(language: String, vocab: Vocabulary, vectors: Tensor, alignment: Option<Tensor>) -> Result<Self> {
        let (n, _) = vectors.dims2()?;
        if n != vocab.len() {
            return Err(Error::Dimension(format!("{} vocabulary entries but {n} vector rows", vocab.len())));
        }
        let mut space = Self {
            language,
            vocab,
            vectors,
            alignment: None,
        };
        if let Some(a) = alignment {
            space.set_alignment(a)?;
        }
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn alignment(&self) -> Option<&Tensor> {
        self.alignment.as_ref()
    }

    /// Installs an orthogonal `S×S` map applied at lookup (`A · v`).
    pub fn set_alignment(&mut self, a: Tensor) -> Result<()> {
        let s = self.dim();
        if a.shape() != [s, s] {
            return Err(Error::Config(format!(
                "alignment of shape {:?} does not fit dimensionality {s}",
                a.shape()
            )));
        }
        let err = orthogonality_error(&a)?;
        if err >= 1e-6 {
            return Err(Error::Config(format!("alignment matrix is not orthogonal (max |AᵀA−I| = {err:e})")));
        }
        self.alignment = Some(a);
        Ok(())
    }

    pub fn clear_alignment(&mut self) {
        self.alignment = None;
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.vocab.lookup(token)
    }

    pub fn raw_row(&self, idx: usize) -> &[f64] {
        self.vectors.row_slice(idx)
    }

    /// Vector at `idx` after the alignment map, if any.
    pub fn row(&self, idx: usize) -> Vec<f64> {
        let v = self.raw_row(idx);
        match &self.alignment {
            None => v.to_vec(),
            Some(a) => {
                let s = v.len();
                (0..s).map(|i| crate::math::dot(a.row_slice(i), v)).collect()
            }
        }
    }

    /// E(x): the (aligned) vector of a token; unknown tokens get the UNK row.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.row(self.index_of(token))
    }

    /// Fraction of tokens resolving to UNK.
    pub fn unk_rate<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> f64 {
        let (mut unk, mut total) = (0usize, 0usize);
        for t in tokens {
            total += 1;
            if self.index_of(t) == UNK {
                unk += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            unk as f64 / total as f64
        }
    }

    /// Writes the raw vectors (without PAD/UNK) in word-vector text format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.vocab.word_count(), self.dim());
        for (k, w) in self.vocab.words().enumerate() {
            out.push_str(w);
            for v in self.raw_row(k + 2) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Loads vectors in word-vector text format: optional `<count> <dim>` header,
/// then `word v1 ... vS` per line. Only the first `max_words` entries are kept.
pub fn load_vectors(path: impl AsRef<Path>, language: &str, max_words: Option<usize>) -> Result<EmbeddingSpace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(&text, &path.display().to_string(), language, max_words)
}

pub fn parse_vectors(text: &str, origin: &str, language: &str, max_words: Option<usize>) -> Result<EmbeddingSpace> {
    let mut words = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    let limit = max_words.unwrap_or(usize::MAX);
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        if i == 0 && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        if words.len() >= limit {
            break;
        }
        if fields.len() < 2 {
            return Err(Error::format(origin, lineno, "expected a word followed by its vector"));
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(origin, lineno, format!("bad number: {e}")))?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::format(
                origin,
                lineno,
                format!("vector has {} values, expected {expected}", values.len()),
            ));
        }
        words.push(fields[0].to_string());
        rows.push(values);
    }
    if words.is_empty() {
        return Err(Error::format(origin, 1, "no word vectors found"));
    }
    EmbeddingSpace::from_rows(language, words, rows)
}

/// The `k` most frequent words; vector files are ordered by frequency, so
/// these are the first `k` in file order.
pub fn top_k_vocabulary(space: &EmbeddingSpace, k: usize) -> Result<Vocabulary> {
    if k == 0 {
        return Err(Error::Parameter("top-k vocabulary needs k >= 1".into()));
    }
    let n = space.vocab.word_count();
    if k > n {
        log::warn!("requested top {k} words but '{}' has only {n}; using all", space.language);
    }
    Ok(Vocabulary::from_words(space.vocab.words().take(k)))
}

/// Writes the feature-extractor output F(x) of every token as TSV:
/// `lang  token  f0 .. f{S-1}`.
pub fn export_embeddings(model: &TaggerModel, sentences: &[AnnotatedSentence], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let s = model.embedding_dim();
    let mut header = String::from("lang\ttoken");
    for j in 0..s {
        let _ = write!(header, "\tf{j}");
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    let mut rows = 0;
    for sent in sentences {
        let feats = model.feature_extract(&sent.tokens, &sent.language)?;
        for (t, tok) in sent.tokens.iter().enumerate() {
            let mut line = format!("{}\t{}", sent.language, tok);
            for v in feats.row_slice(t) {
                let _ = write!(line, "\t{v}");
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(text: &str, max: Option<usize>) -> EmbeddingSpace {
        parse_vectors(text, "mem", "en", max).unwrap()
    }

    #[test]
    fn counts_include_reserved_rows() {
        let s = space("3 4\na 1 2 3 4\nb 0 0 0 0\nc 1 1 1 1\n", None);
        assert_eq!(s.len(), 5);
        assert_eq!(s.dim(), 4);
        assert_eq!(s.raw_row(PAD), &[0.0; 4]);
    }

    #[test]
    fn unk_is_mean_vector() {
        let s = space("x 1 1\ny 3 3\n", None);
        assert_eq!(s.raw_row(UNK), &[2.0, 2.0]);
        assert_eq!(s.lookup("never-seen"), vec![2.0, 2.0]);
    }

    #[test]
    fn max_words_truncates_in_file_order() {
        let s = space("x 1 1\ny 3 3\n", Some(1));
        assert_eq!(s.vocab.word_count(), 1);
        assert!(s.vocab.contains("x"));
        assert!(!s.vocab.contains("y"));
    }

    #[test]
    fn inconsistent_dimension_names_the_line() {
        let err = parse_vectors("x 1 1\ny 3 3 3\n", "v.txt", "en", None).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
        assert!(matches!(parse_vectors("", "v.txt", "en", None), Err(Error::Format { .. })));
    }

    #[test]
    fn lookup_falls_back_to_lowercase() {
        let s = space("march 1 0\nMay 0 1\n", None);
        assert_eq!(s.lookup("March"), vec![1.0, 0.0]);
        assert_eq!(s.lookup("May"), vec![0.0, 1.0]);
        assert_eq!(s.index_of("may"), UNK);
    }

    #[test]
    fn alignment_rotates_lookups() {
        let mut s = space("w 1 2\n", None);
        let (c, sn) = (0.6f64, 0.8f64);
        s.set_alignment(Tensor::matrix(2, 2, vec![c, -sn, sn, c])).unwrap();
        let got = s.lookup("w");
        let expected = [c * 1.0 - sn * 2.0, sn * 1.0 + c * 2.0];
        assert!((got[0] - expected[0]).abs() < 1e-15 && (got[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn identity_alignment_is_bit_identical() {
        let mut s = space("w 0.1 -0.7 3.25\nv 1e-3 2 2\n", None);
        let before: Vec<Vec<f64>> = (0..s.len()).map(|i| s.row(i)).collect();
        s.set_alignment(Tensor::identity(3)).unwrap();
        let after: Vec<Vec<f64>> = (0..s.len()).map(|i| s.row(i)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn non_orthogonal_alignment_is_rejected() {
        let mut s = space("w 1 2\n", None);
        assert!(s.set_alignment(Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn top_k_examples() {
        let s = space("a 1\nb 2\nc 3\nd 4\ne 5\n", None);
        let v = top_k_vocabulary(&s, 2).unwrap();
        assert_eq!(v.words().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(top_k_vocabulary(&s, 5000).unwrap().word_count(), 5);
        assert_eq!(top_k_vocabulary(&s, 5).unwrap(), s.vocab);
        assert!(top_k_vocabulary(&s, 0).is_err());
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vec");
        let s = space("a 0.123456789 -2\nb 3.5 1e-7\n", None);
        s.save(&p).unwrap();
        let again = load_vectors(&p, "en", None).unwrap();
        assert!(again.vectors().max_abs_diff(s.vectors()) < 1e-6);
        assert_eq!(again.vocab, s.vocab);
    }
}
