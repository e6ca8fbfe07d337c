//! Artificial languages sharing one temporal-expression grammar.
//!
//! Every language draws its own surface forms (so vocabularies are disjoint)
//! for a common set of latent word concepts. A word's vector is its concept
//! vector plus a language-wide offset plus small noise, so the languages
//! share structure but are not aligned out of the box.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{AnnotatedSentence, Corpus, Split};
use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::tagger::{Label, TimexType};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub languages: Vec<String>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unlabeled: usize,
    pub dim: usize,
    /// Standard deviation of the class centroid components.
    pub centroid_scale: f64,
    /// Standard deviation of each language's offset vector components.
    pub offset_scale: f64,
    /// Spread of words around their class centroid in the latent space.
    pub word_spread: f64,
    /// Per-language noise on each word vector.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            languages: vec!["aa".into(), "bb".into()],
            train: 500,
            dev: 100,
            test: 100,
            unlabeled: 500,
            dim: 20,
            centroid_scale: 2.0,
            offset_scale: 1.0,
            word_spread: 0.35,
            noise: 0.1,
            seed: 7,
        }
    }
}

/// Word classes of the latent grammar and their sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Month,
    Weekday,
    DayNum,
    Year,
    RelDay,
    Clock,
    AmPm,
    Count,
    Unit,
    Every,
    Freq,
    Filler,
}

const CLASSES: [(Class, usize); 12] = [
    (Class::Month, 12),
    (Class::Weekday, 7),
    (Class::DayNum, 28),
    (Class::Year, 15),
    (Class::RelDay, 3),
    (Class::Clock, 12),
    (Class::AmPm, 2),
    (Class::Count, 10),
    (Class::Unit, 6),
    (Class::Every, 2),
    (Class::Freq, 3),
    (Class::Filler, 160),
];

/// Expression patterns: the classes of their tokens and their type.
const PATTERNS: [(&[Class], TimexType); 10] = [
    (&[Class::Month, Class::DayNum], TimexType::Date),
    (&[Class::Weekday], TimexType::Date),
    (&[Class::Year], TimexType::Date),
    (&[Class::Month, Class::Year], TimexType::Date),
    (&[Class::RelDay], TimexType::Date),
    (&[Class::Clock, Class::AmPm], TimexType::Time),
    (&[Class::Clock], TimexType::Time),
    (&[Class::Count, Class::Unit], TimexType::Duration),
    (&[Class::Every, Class::Unit], TimexType::Set),
    (&[Class::Freq], TimexType::Set),
];

/// Ground-truth sizes of one generated split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub sentences: usize,
    pub expressions: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    pub language: String,
    pub space: EmbeddingSpace,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub unlabeled: Vec<Vec<String>>,
    /// Counts recorded while generating, per split.
    pub counts: BTreeMap<Split, SplitCounts>,
}

/// Concept index ranges per class.
struct Lexicon {
    ranges: BTreeMap<Class, (usize, usize)>,
    total: usize,
}

impl Lexicon {
    fn new() -> Self {
        let mut ranges = BTreeMap::new();
        let mut off = 0;
        for (c, n) in CLASSES {
            ranges.insert(c, (off, n));
            off += n;
        }
        Self { ranges, total: off }
    }

    fn pick(&self, class: Class, rng: &mut ChaCha8Rng) -> usize {
        let (off, n) = self.ranges[&class];
        off + rng.random_range(0..n)
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "y"];

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Builds one labeled sentence and the number of expressions in it.
fn sentence(lex: &Lexicon, forms: &[String], rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<Label>, usize) {
    let fillers = rng.random_range(5..=12);
    let n_expr = rng.random_range(0..=2usize).min(fillers / 3);
    // Expressions go after distinct filler positions, never adjacent to each other.
    let mut slots: Vec<usize> = (0..fillers).collect();
    let mut chosen = Vec::new();
    while chosen.len() < n_expr {
        let k = rng.random_range(0..slots.len());
        let s = slots[k];
        if chosen.iter().all(|&c: &usize| c.abs_diff(s) >= 2) {
            chosen.push(s);
        }
        slots.remove(k);
        if slots.is_empty() {
            break;
        }
    }
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut count = 0;
    for pos in 0..fillers {
        tokens.push(forms[lex.pick(Class::Filler, rng)].clone());
        labels.push(Label::O);
        if chosen.contains(&pos) {
            let (classes, kind) = PATTERNS[rng.random_range(0..PATTERNS.len())];
            for (i, &c) in classes.iter().enumerate() {
                tokens.push(forms[lex.pick(c, rng)].clone());
                labels.push(if i == 0 { Label::B(kind) } else { Label::I(kind) });
            }
            count += 1;
        }
    }
    (tokens, labels, count)
}

/// Generates every language of the configuration.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<SyntheticLanguage>> {
    if config.languages.is_empty() || config.dim == 0 {
        return Err(Error::Config("synthetic data needs languages and a positive dimension".into()));
    }
    let lex = Lexicon::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centroids: BTreeMap<Class, Vec<f64>> = CLASSES
        .iter()
        .map(|&(c, _)| (c, normal_vec(&mut rng, config.dim, config.centroid_scale)))
        .collect();
    let mut concepts = Vec::with_capacity(lex.total);
    for (c, n) in CLASSES {
        for _ in 0..n {
            let v: Vec<f64> = centroids[&c]
                .iter()
                .zip(normal_vec(&mut rng, config.dim, config.word_spread))
                .map(|(a, b)| a + b)
                .collect();
            concepts.push(v);
        }
    }

    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(config.languages.len());
    for lang in &config.languages {
        let forms: Vec<String> = (0..lex.total).map(|_| pseudo_word(&mut rng, &mut used)).collect();
        let offset = normal_vec(&mut rng, config.dim, config.offset_scale);
        let rows: Vec<Vec<f64>> = concepts
            .iter()
            .map(|c| {
                let noise = normal_vec(&mut rng, config.dim, config.noise);
                c.iter().zip(&offset).zip(noise).map(|((a, b), n)| a + b + n).collect()
            })
            .collect();
        let space = EmbeddingSpace::from_rows(lang.clone(), forms.clone(), rows)?;

        let mut counts = BTreeMap::new();
        let mut make = |split: Split, n: usize, rng: &mut ChaCha8Rng| {
            let mut sentences = Vec::with_capacity(n);
            let mut expressions = 0;
            for i in 0..n {
                let (tokens, labels, c) = sentence(&lex, &forms, rng);
                expressions += c;
                sentences.push(AnnotatedSentence {
                    language: lang.clone(),
                    tokens,
                    labels: Some(labels),
                    doc_id: format!("s{i}"),
                });
            }
            counts.insert(split, SplitCounts { sentences: n, expressions });
            Corpus::new(lang.clone(), sentences).with_split(split)
        };
        let train = make(Split::Train, config.train, &mut rng);
        let dev = make(Split::Dev, config.dev, &mut rng);
        let test = make(Split::Test, config.test, &mut rng);
        let unlabeled = (0..config.unlabeled).map(|_| sentence(&lex, &forms, &mut rng).0).collect();
        out.push(SyntheticLanguage {
            language: lang.clone(),
            space,
            train,
            dev,
            test,
            unlabeled,
            counts,
        });
    }
    Ok(out)
}

/// Paths written by [`write_dataset`] for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageFiles {
    pub vectors: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub unlabeled: PathBuf,
}

/// Writes vectors, corpora and unlabeled pools as `<lang>.{vec,train,dev,test,unlabeled}.txt`.
pub fn write_dataset(langs: &[SyntheticLanguage], dir: impl AsRef<Path>) -> Result<BTreeMap<String, LanguageFiles>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for l in langs {
        let p = |suffix: &str| dir.join(format!("{}.{suffix}.txt", l.language));
        let files = LanguageFiles {
            vectors: p("vec"),
            train: p("train"),
            dev: p("dev"),
            test: p("test"),
            unlabeled: p("unlabeled"),
        };
        l.space.save(&files.vectors)?;
        l.train.write(&files.train)?;
        l.dev.write(&files.dev)?;
        l.test.write(&files.test)?;
        let mut text = String::new();
        for s in &l.unlabeled {
            let _ = writeln!(text, "{}", s.join(" "));
        }
        fs::write(&files.unlabeled, text).map_err(|e| Error::io(&files.unlabeled, e))?;
        out.insert(l.language.clone(), files);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::corpus_stats;
    use crate::tagger::LabelScheme;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            train: 40,
            dev: 10,
            test: 10,
            unlabeled: 5,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn vocabularies_are_disjoint() {
        let langs = generate(&small()).unwrap();
        let a: HashSet<&str> = langs[0].space.vocab.words().collect();
        assert!(langs[1].space.vocab.words().all(|w| !a.contains(w)));
        assert_eq!(langs[0].space.dim(), 20);
    }

    #[test]
    fn labels_are_valid_and_counts_match() {
        for l in generate(&small()).unwrap() {
            for s in &l.train.sentences {
                assert!(LabelScheme.is_valid_sequence(s.labels.as_ref().unwrap()));
            }
            let gt = l.counts[&Split::Train];
            let st = corpus_stats(&l.train);
            assert_eq!((st.sentences, st.expressions), (gt.sentences, gt.expressions));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a[1].train, b[1].train);
        assert_eq!(a[1].space, b[1].space);
    }
}
