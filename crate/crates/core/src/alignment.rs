//! Dictionary-based orthogonal alignment of embedding spaces into a pivot space.
//!
//! Dictionaries come either from identical strings shared by two vocabularies
//! or from an external bilingual lexicon. Given dictionary pairs `(x_i, y_i)`
//! (length-normalized), the orthogonal `A` minimizing `Σ ‖A x_i − y_i‖²` is
//! `V Uᵀ` where `U Σ Vᵀ` is the SVD of `Xᵀ Y`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::embeddings::{parse_vectors, top_k_vocabulary, EmbeddingSpace, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::{orthogonality_error, svd};
use crate::math::{dot, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualDictionary {
    pub source: String,
    pub target: String,
    pairs: Vec<(String, String)>,
}

impl BilingualDictionary {
    /// Builds a dictionary, dropping repeated pairs while keeping first-seen order.
    pub fn new(source: impl Into<String>, target: impl Into<String>, pairs: Vec<(String, String)>) -> Self {
        let mut seen = HashSet::new();
        let pairs = pairs.into_iter().filter(|p| seen.insert(p.clone())).collect();
        Self {
            source: source.into(),
            target: target.into(),
            pairs,
        }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn mirrored(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            pairs: self.pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
        }
    }
}

/// Orthogonal map from `source` vectors into the `target` (pivot) space,
/// applied as `A · v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    pub matrix: Tensor,
    pub source: String,
    pub target: String,
}

impl AlignmentMatrix {
    pub fn new(matrix: Tensor, source: impl Into<String>, target: impl Into<String>) -> Result<Self> {
        let (r, c) = matrix.dims2()?;
        if r != c {
            return Err(Error::Dimension(format!("alignment must be square, got {r}x{c}")));
        }
        let err = orthogonality_error(&matrix)?;
        if err >= 1e-6 {
            return Err(Error::Numeric(format!("alignment matrix is not orthogonal (max |AᵀA−I| = {err:e})")));
        }
        Ok(Self {
            matrix,
            source: source.into(),
            target: target.into(),
        })
    }

    pub fn identity(dim: usize, language: &str) -> Self {
        Self {
            matrix: Tensor::identity(dim),
            source: language.into(),
            target: language.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[0]
    }

    /// Word-vector text format with the row index as the word.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = self.dim();
        let mut out = format!("{s} {s}\n");
        for i in 0..s {
            let _ = write!(out, "{i}");
            for v in self.matrix.row_slice(i) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, source: &str, target: &str) -> Result<Self> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let space = parse_vectors(&text, &origin, source, None)?;
        let s = space.dim();
        if space.vocab.word_count() != s {
            return Err(Error::format(&origin, 1, format!("expected {s} rows, found {}", space.vocab.word_count())));
        }
        let mut data = vec![0.0; s * s];
        for (k, w) in space.vocab.words().enumerate() {
            let row: usize = w
                .parse()
                .ok()
                .filter(|&r: &usize| r < s)
                .ok_or_else(|| Error::format(&origin, k + 2, format!("row label '{w}' is not an index below {s}")))?;
            data[row * s..(row + 1) * s].copy_from_slice(space.raw_row(k + 2));
        }
        Self::new(Tensor::matrix(s, s, data), source, target)
    }
}

/// Pairs `(w, w)` for every `w` among the top-`k` words of both vocabularies,
/// in source order.
pub fn build_dictionary_string_match(
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    k: usize,
) -> Result<BilingualDictionary> {
    let sv = top_k_vocabulary(src, k)?;
    let tv = top_k_vocabulary(tgt, k)?;
    let pairs: Vec<(String, String)> = sv
        .words()
        .filter(|w| tv.contains(w))
        .map(|w| (w.to_string(), w.to_string()))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDictionary(format!(
            "no shared strings between the top-{k} vocabularies of '{}' and '{}'",
            src.language, tgt.language
        )));
    }
    Ok(BilingualDictionary::new(&src.language, &tgt.language, pairs))
}

/// Result of reading a lexicon file against two vocabularies.
#[derive(Debug, Clone)]
pub struct LoadedDictionary {
    pub dictionary: BilingualDictionary,
    /// Pairs discarded because a side was out of vocabulary.
    pub dropped: usize,
}

/// Reads a two-column TSV lexicon, keeping pairs whose both sides are in
/// vocabulary. `#` lines are comments.
pub fn load_dictionary(
    path: impl AsRef<Path>,
    source: &str,
    target: &str,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<LoadedDictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text, &path.display().to_string(), source, target, src_vocab, tgt_vocab)
}

pub fn parse_dictionary(
    text: &str,
    origin: &str,
    source: &str,
    target: &str,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<LoadedDictionary> {
    let mut pairs = Vec::new();
    let mut dropped = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 || cols[0].trim().is_empty() || cols[1].trim().is_empty() {
            return Err(Error::format(origin, i + 1, format!("expected two tab-separated columns, found {}", cols.len())));
        }
        let (s, t) = (cols[0].trim(), cols[1].trim());
        if src_vocab.contains(s) && tgt_vocab.contains(t) {
            pairs.push((s.to_string(), t.to_string()));
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::info!("{origin}: {dropped} dropped (out of vocabulary)");
    }
    let dictionary = BilingualDictionary::new(source, target, pairs);
    if dictionary.is_empty() {
        return Err(Error::EmptyDictionary(format!("{origin}: no in-vocabulary pairs")));
    }
    Ok(LoadedDictionary { dictionary, dropped })
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Length-normalized raw vectors of the dictionary pairs as `(X, Y)` row lists.
fn pair_rows(src: &EmbeddingSpace, tgt: &EmbeddingSpace, dict: &BilingualDictionary) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut xs = Vec::with_capacity(dict.len());
    let mut ys = Vec::with_capacity(dict.len());
    for (s, t) in dict.pairs() {
        let (Some(i), Some(j)) = (src.vocab.exact(s), tgt.vocab.exact(t)) else {
            return Err(Error::Data(format!("dictionary pair ({s}, {t}) is out of vocabulary")));
        };
        xs.push(normalized(src.raw_row(i)));
        ys.push(normalized(tgt.raw_row(j)));
    }
    Ok((xs, ys))
}

/// Closed-form orthogonal Procrustes solution mapping `src` onto `tgt`.
pub fn procrustes_align(src: &EmbeddingSpace, tgt: &EmbeddingSpace, dict: &BilingualDictionary) -> Result<AlignmentMatrix> {
    if dict.is_empty() {
        return Err(Error::EmptyDictionary("procrustes alignment needs at least one pair".into()));
    }
    let s = src.dim();
    if tgt.dim() != s {
        return Err(Error::Config(format!("dimensionality differs: {s} vs {}", tgt.dim())));
    }
    if dict.len() < s {
        log::warn!("dictionary has {} pairs for dimensionality {s}; the fit is underdetermined", dict.len());
    }
    let (xs, ys) = pair_rows(src, tgt, dict)?;
    // M = Xᵀ Y
    let mut m = vec![0.0; s * s];
    for (x, y) in xs.iter().zip(&ys) {
        for a in 0..s {
            let xa = x[a];
            for (o, yb) in m[a * s..(a + 1) * s].iter_mut().zip(y) {
                *o += xa * yb;
            }
        }
    }
    let dec = svd(&Tensor::matrix(s, s, m))?;
    // Row form: x·(U Vᵀ) ≈ y, so the column-form map is (U Vᵀ)ᵀ = V Uᵀ.
    let mut a = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            a[i * s + j] = (0..s).map(|k| dec.vt.get2(k, i) * dec.u.get2(j, k)).sum();
        }
    }
    AlignmentMatrix::new(Tensor::matrix(s, s, a), &src.language, &tgt.language)
}

/// `sqrt(Σ ‖A x_i − y_i‖²)` over the normalized dictionary pairs.
pub fn alignment_residual(
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    dict: &BilingualDictionary,
    a: &AlignmentMatrix,
) -> Result<f64> {
    let (xs, ys) = pair_rows(src, tgt, dict)?;
    let s = a.dim();
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        for i in 0..s {
            let d = dot(a.matrix.row_slice(i), x) - y[i];
            total += d * d;
        }
    }
    Ok(total.sqrt())
}

/// Mean cosine similarity between mapped source vectors and their translations.
pub fn mean_pair_cosine(
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    dict: &BilingualDictionary,
    a: &AlignmentMatrix,
) -> Result<f64> {
    let (xs, ys) = pair_rows(src, tgt, dict)?;
    let s = a.dim();
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let ax: Vec<f64> = (0..s).map(|i| dot(a.matrix.row_slice(i), x)).collect();
        sum += dot(&ax, y) / (dot(&ax, &ax).sqrt() * dot(y, y).sqrt()).max(f64::MIN_POSITIVE);
    }
    Ok(sum / xs.len() as f64)
}

/// Returns `space` with `a` installed as its lookup map. The pivot language
/// (the matrix target) always keeps the identity.
pub fn apply_alignment(space: &EmbeddingSpace, a: &AlignmentMatrix) -> Result<EmbeddingSpace> {
    if space.language == a.target {
        return Err(Error::Config(format!(
            "'{}' is the pivot language and keeps the identity map",
            space.language
        )));
    }
    if space.language != a.source {
        return Err(Error::Config(format!(
            "alignment maps '{}' but the space is '{}'",
            a.source, space.language
        )));
    }
    if space.dim() != a.dim() {
        return Err(Error::Config(format!(
            "alignment is {0}x{0} but vectors have dimensionality {1}",
            a.dim(),
            space.dim()
        )));
    }
    let mut out = space.clone();
    out.set_alignment(a.matrix.clone())?;
    Ok(out)
}
