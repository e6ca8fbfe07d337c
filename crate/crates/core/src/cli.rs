//! The `tempalign` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numeric failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::alignment::{
    alignment_residual, build_dictionary_string_match, load_dictionary, procrustes_align, BilingualDictionary,
};
use crate::corpus::{group_documents, load_labeled, validate_config, Corpus};
use crate::embeddings::{export_embeddings, load_vectors};
use crate::error::{Error, Result};
use crate::evaluation::{corpus_stats, paired_permutation_test, per_document_f1, score, DocumentSpans, Metric, ScoreReport, TimexSpan};
use crate::tagger::{checkpoint, ModelConfig, TaggerModel};
use crate::training::{predict_corpus, select_median, train, TrainConfig, TrainingData};
use crate::evaluation::iob2_to_spans;

/// Significance level of the `significance` verdict.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "tempalign", version, about = "Multilingual temporal expression tagging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignMethod {
    /// Identical strings among the most frequent words.
    StringMatch,
    /// Pairs from a bilingual lexicon file.
    Dictionary,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an orthogonal map from one embedding space into another.
    Align {
        #[arg(long, value_enum)]
        method: AlignMethod,
        #[arg(long)]
        src: String,
        #[arg(long, default_value = "en")]
        tgt: String,
        /// Word vectors of the source language.
        #[arg(long)]
        src_vectors: PathBuf,
        /// Word vectors of the target (pivot) language.
        #[arg(long)]
        tgt_vectors: PathBuf,
        /// Two-column lexicon, required by `--method dictionary`.
        #[arg(long)]
        dict: Option<PathBuf>,
        /// Vocabulary size considered by string matching.
        #[arg(long, default_value_t = 5000)]
        top_k: usize,
        #[arg(long)]
        max_words: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed and mark the median run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; defaults to the configured seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict temporal expressions for a corpus.
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Language of the input; defaults to its `# lang:` header.
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted spans against a gold corpus.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        json: bool,
        /// Also report relaxed F1 times type accuracy.
        #[arg(long)]
        tempeval_type: bool,
    },
    /// Paired permutation test between two systems.
    Significance {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long = "pred-a", alias = "predA")]
        pred_a: PathBuf,
        #[arg(long = "pred-b", alias = "predB")]
        pred_b: PathBuf,
        #[arg(long, default_value = "relaxed")]
        metric: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
    },
    /// Write feature-extractor outputs per token as TSV.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sentence and temporal expression counts per corpus.
    Stats {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// Spans of one tagged sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub doc: String,
    pub index: usize,
    pub tokens: Vec<String>,
    pub spans: Vec<TimexSpan>,
}

/// The JSON document written by `tag` and read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedCorpus {
    pub lang: String,
    pub sentences: Vec<TaggedSentence>,
}

impl TaggedCorpus {
    pub fn documents(&self) -> Vec<DocumentSpans> {
        group_documents(
            self.sentences
                .iter()
                .map(|s| (s.doc.as_str(), s.tokens.len(), s.spans.clone())),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display(), e.line(), e.to_string()))
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command, writing its report to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Align {
            method,
            src,
            tgt,
            src_vectors,
            tgt_vectors,
            dict,
            top_k,
            max_words,
            out: path,
        } => {
            let s = load_vectors(require_file("--src-vectors", &src_vectors)?, &src, max_words)?;
            let t = load_vectors(require_file("--tgt-vectors", &tgt_vectors)?, &tgt, max_words)?;
            let (dictionary, dropped): (BilingualDictionary, usize) = match method {
                AlignMethod::StringMatch => (build_dictionary_string_match(&s, &t, top_k)?, 0),
                AlignMethod::Dictionary => {
                    let d = dict
                        .as_deref()
                        .ok_or_else(|| Error::Config("--dict is required with --method dictionary".into()))?;
                    let loaded = load_dictionary(require_file("--dict", d)?, &src, &tgt, &s.vocab, &t.vocab)?;
                    (loaded.dictionary, loaded.dropped)
                }
            };
            let a = procrustes_align(&s, &t, &dictionary)?;
            let residual = alignment_residual(&s, &t, &dictionary, &a)?;
            a.save(&path)?;
            say(out, format!("dictionary pairs: {} (dropped {dropped})", dictionary.len()))?;
            say(out, format!("residual: {residual:.6}"))?;
            say(out, format!("wrote {}", path.display()))
        }
        Command::Train { config, seeds, out: dir } => run_train(&config, &seeds, dir, out),
        Command::Tag { model, input, lang, out: path } => {
            let m = checkpoint::load(require_file("--model", &model)?)?;
            let corpus = load_corpus("--input", &input, lang.as_deref())?;
            let tagged = tag_corpus(&m, &corpus)?;
            write_json(&path, &tagged)?;
            let spans: usize = tagged.sentences.iter().map(|s| s.spans.len()).sum();
            say(out, format!("tagged {} sentences, {spans} expressions", tagged.sentences.len()))
        }
        Command::Evaluate {
            gold,
            pred,
            json,
            tempeval_type,
        } => {
            let g = load_corpus("--gold", &gold, None)?;
            let p = TaggedCorpus::load(require_file("--pred", &pred)?)?;
            let report = score(&g.gold_documents(), &p.documents())?;
            if json {
                let v = EvaluationJson {
                    report,
                    type_tempeval: tempeval_type.then(|| report.type_f1_tempeval()),
                };
                say(out, serde_json::to_string_pretty(&v).expect("serializable report"))
            } else {
                say(out, report.to_string())?;
                if tempeval_type {
                    say(out, format!("type (relaxed F1 x attribute accuracy): {:.4}", report.type_f1_tempeval()))?;
                }
                Ok(())
            }
        }
        Command::Significance {
            gold,
            pred_a,
            pred_b,
            metric,
            seed,
            iterations,
        } => {
            let metric: Metric = metric.parse()?;
            let g = load_corpus("--gold", &gold, None)?.gold_documents();
            let a = TaggedCorpus::load(require_file("--pred-a", &pred_a)?)?;
            let b = TaggedCorpus::load(require_file("--pred-b", &pred_b)?)?;
            let fa = per_document_f1(&g, &a.documents(), metric)?;
            let fb = per_document_f1(&g, &b.documents(), metric)?;
            let p = paired_permutation_test(&fa, &fb, iterations, seed)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            say(out, format!("documents: {}", fa.len()))?;
            say(out, format!("mean {metric:?} F1: A {:.4}  B {:.4}", mean(&fa), mean(&fb)).to_lowercase())?;
            say(out, format!("p = {p:.4}"))?;
            say(out, verdict(p).to_string())
        }
        Command::ExportEmbeddings { model, input, out: path } => {
            let m = checkpoint::load(require_file("--model", &model)?)?;
            let corpus = load_corpus("--input", &input, None)?;
            let rows = export_embeddings(&m, &corpus.sentences, &path)?;
            say(out, format!("wrote {rows} token rows to {}", path.display()))
        }
        Command::Stats { inputs, json } => {
            let mut rows = Vec::new();
            for path in &inputs {
                let corpus = load_corpus("inputs", path, None)?;
                let stats = corpus_stats(&corpus);
                rows.push(StatsRow {
                    file: path.display().to_string(),
                    lang: corpus.language.clone(),
                    sentences: stats.sentences,
                    expressions: stats.expressions,
                    table: stats.to_string(),
                });
            }
            if json {
                say(out, serde_json::to_string_pretty(&rows).expect("serializable stats"))
            } else {
                say(out, "file\tlang\tsentences / temporal expressions".to_string())?;
                for r in rows {
                    say(out, format!("{}\t{}\t{}", r.file, r.lang, r.table))?;
                }
                Ok(())
            }
        }
    }
}

/// The verdict line of the significance test at [`ALPHA`].
pub fn verdict(p: f64) -> &'static str {
    if p < ALPHA {
        "significant at alpha = 0.05"
    } else {
        "not significant at alpha = 0.05"
    }
}

#[derive(Serialize)]
struct EvaluationJson {
    #[serde(flatten)]
    report: ScoreReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    type_tempeval: Option<f64>,
}

#[derive(Serialize)]
struct StatsRow {
    file: String,
    lang: String,
    sentences: usize,
    expressions: usize,
    table: String,
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    best_epoch: usize,
    best_dev_relaxed_f1: Option<f64>,
    epochs: usize,
    stopped_early: bool,
    checkpoint: String,
    log: String,
}

#[derive(Serialize)]
struct TrainSummary {
    median_seed: u64,
    runs: Vec<SeedSummary>,
}

fn run_train(config: &Path, seeds: &[u64], dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let cfg = validate_config(require_file("--config", config)?)?;
    let dir = dir
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let (spaces, data) = TrainingData::load(&cfg)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let seed_dir = dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;
        let log_path = seed_dir.join("train.jsonl");
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(file);
        let model = TaggerModel::new(spaces.clone(), ModelConfig::from(&run_cfg))?;
        let outcome = train(model, &run_cfg, &data, Some(&mut log))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let ckpt = seed_dir.join("model.ckpt");
        checkpoint::save(&outcome.model, &ckpt)?;
        say(
            out,
            format!(
                "seed {seed}: best epoch {} dev relaxed F1 {}",
                outcome.best_epoch,
                outcome.best_dev.map_or("n/a".to_string(), |f| format!("{f:.4}"))
            ),
        )?;
        runs.push(SeedSummary {
            seed,
            best_epoch: outcome.best_epoch,
            best_dev_relaxed_f1: outcome.best_dev,
            epochs: outcome.log.len(),
            stopped_early: outcome.stopped_early,
            checkpoint: ckpt.display().to_string(),
            log: log_path.display().to_string(),
        });
    }
    let scores: Vec<f64> = runs.iter().map(|r| r.best_dev_relaxed_f1.unwrap_or(0.0)).collect();
    let median_seed = runs[select_median(&scores).expect("at least one seed")].seed;
    write_json(&dir.join("summary.json"), &TrainSummary { median_seed, runs })?;
    say(out, format!("median seed: {median_seed}"))
}

/// Tags every sentence of `corpus`.
pub fn tag_corpus(model: &TaggerModel, corpus: &Corpus) -> Result<TaggedCorpus> {
    let labels = predict_corpus(model, corpus)?;
    let sentences = corpus
        .sentences
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(index, (s, l))| TaggedSentence {
            doc: s.doc_id.clone(),
            index,
            tokens: s.tokens.clone(),
            spans: iob2_to_spans(&l),
        })
        .collect();
    Ok(TaggedCorpus {
        lang: corpus.language.clone(),
        sentences,
    })
}

fn load_corpus(flag: &str, path: &Path, lang: Option<&str>) -> Result<Corpus> {
    let mut corpus = load_labeled(require_file(flag, path)?)?;
    if let Some(lang) = lang {
        if lang != corpus.language {
            log::warn!("{}: header says '{}', tagging as '{lang}'", path.display(), corpus.language);
            corpus.language = lang.to_string();
            for s in &mut corpus.sentences {
                s.language = lang.to_string();
            }
        }
    }
    Ok(corpus)
}

/// A missing input named by a flag is a usage error, not a data error.
fn require_file<'a>(flag: &str, path: &'a Path) -> Result<&'a Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{flag}: file not found: {}", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_threshold() {
        assert_eq!(verdict(1.0), "not significant at alpha = 0.05");
        assert_eq!(verdict(0.05), "not significant at alpha = 0.05");
        assert_eq!(verdict(0.01), "significant at alpha = 0.05");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["tempalign", "frobnicate"]), 1);
        assert_eq!(run(["tempalign", "stats"]), 1);
        assert_eq!(run(["tempalign", "--help"]), 0);
    }

    #[test]
    fn missing_flagged_file_is_a_usage_error() {
        let err = execute(
            Command::Stats {
                inputs: vec!["/no/such/corpus.txt".into()],
                json: false,
            },
            &mut Vec::new(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn tagged_corpus_groups_documents() {
        let tc = TaggedCorpus {
            lang: "en".into(),
            sentences: vec![
                TaggedSentence {
                    doc: "d".into(),
                    index: 0,
                    tokens: vec!["a".into(), "b".into()],
                    spans: vec![],
                },
                TaggedSentence {
                    doc: "d".into(),
                    index: 1,
                    tokens: vec!["c".into()],
                    spans: vec![TimexSpan::new(0, 0, crate::tagger::TimexType::Date)],
                },
            ],
        };
        let docs = tc.documents();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].spans[0].start, 2);
    }
}
