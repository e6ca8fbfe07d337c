//! Alternating multi-task training: tagger steps on labeled batches and,
//! after every `disc_interval` of them, one discriminator step whose
//! gradient reaches the feature extractor through gradient reversal.

mod config;
mod plan;

pub use config::{LanguageInputs, OptimizerKind, TrainConfig};
pub use plan::{stream_rng, Batch, BatchPlan, EarlyStopper, Observation, Stream};

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::{apply_alignment, AlignmentMatrix};
use crate::corpus::{load_labeled, load_unlabeled, AnnotatedSentence, Corpus, Split};
use crate::embeddings::{load_vectors, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::evaluation::{iob2_to_spans, score, DocumentSpans, MatchCounts, ScoreReport};
use crate::math::{clip_grad_norm, AdamWState, Optimizer, ParamId, Tape, Tensor};
use crate::tagger::{EncodedSentence, Label, ModelConfig, TaggerModel};

impl From<&TrainConfig> for ModelConfig {
    fn from(c: &TrainConfig) -> Self {
        ModelConfig {
            lstm_hidden: c.lstm_hidden,
            disc_hidden: c.disc_hidden,
            train_embeddings: c.train_embeddings,
            iob2_constraints: c.iob2_constraints,
            seed: c.seed,
        }
    }
}

/// Per-step settings shared by both step kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dropout: f64,
    pub lambda: f64,
    pub clip_norm: Option<f64>,
}

impl From<&TrainConfig> for StepConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            dropout: c.dropout,
            lambda: c.lambda,
            clip_norm: c.clip_norm,
        }
    }
}

pub fn make_optimizer(config: &TrainConfig) -> Optimizer {
    match config.optimizer {
        OptimizerKind::AdamW => Optimizer::AdamW(AdamWState::new(config.adamw())),
        OptimizerKind::PlainSgd => Optimizer::PlainSgd {
            learning_rate: config.learning_rate,
        },
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, p: f64, n: usize) -> Option<Vec<bool>> {
    (p > 0.0).then(|| (0..n).map(|_| rng.random::<f64>() >= p).collect())
}

fn apply_update(model: &mut TaggerModel, opt: &mut Optimizer, grads: &crate::math::Gradients, group: &[ParamId], clip: Option<f64>) -> Result<()> {
    model.store.zero_grad();
    model.store.accumulate(grads);
    if let Some(max) = clip {
        clip_grad_norm(&mut model.store, group, max);
    }
    opt.step(&mut model.store, group)?;
    model.store.zero_grad();
    Ok(())
}

/// One descent step on the CRF loss (mean over the batch), updating the
/// tagger and the feature extractor. Returns the loss before the update.
pub fn tagger_step(
    model: &mut TaggerModel,
    opt: &mut Optimizer,
    batch: &[&EncodedSentence],
    step: &StepConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let total: usize = batch.iter().map(|s| s.len()).sum();
    let keep = dropout_mask(rng, step.dropout, total * model.embedding_dim());
    let (loss, grads) = {
        let mut tape = Tape::new();
        let f = model.features_on_tape(&mut tape, batch, step.dropout, keep.as_deref())?;
        let lengths: Vec<usize> = batch.iter().map(|s| s.len()).collect();
        let h = model.encode_on_tape(&mut tape, f, &lengths)?;
        let e = model.emissions_on_tape(&mut tape, h)?;
        let loss = model.crf_loss_on_tape(&mut tape, e, batch, 1.0 / batch.len() as f64)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("tagger loss is {value}")));
        }
        (value, tape.backward(loss)?)
    };
    let mut group = model.tagger_params();
    group.extend(model.feature_params());
    apply_update(model, opt, &grads, &group, step.clip_norm)?;
    Ok(loss)
}

/// Loss and token accuracy of one discriminator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscStats {
    pub loss: f64,
    pub correct: usize,
    pub tokens: usize,
}

/// One descent step on the discriminator loss. θ_D gets the plain gradient;
/// θ_F gets the reversed one, and is left untouched when `lambda` is 0.
pub fn discriminator_step(
    model: &mut TaggerModel,
    opt: &mut Optimizer,
    batch: &[&EncodedSentence],
    step: &StepConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DiscStats> {
    if let Some(s) = batch.iter().find(|s| s.language >= model.num_languages()) {
        return Err(Error::Config(format!(
            "language index {} is outside the model inventory of {}",
            s.language,
            model.num_languages()
        )));
    }
    let total: usize = batch.iter().map(|s| s.len()).sum();
    let keep = dropout_mask(rng, step.dropout, total * model.embedding_dim());
    let (stats, grads) = {
        let mut tape = Tape::new();
        let f = model.features_on_tape(&mut tape, batch, step.dropout, keep.as_deref())?;
        let z = model.discriminator_logits_on_tape(&mut tape, f, step.lambda)?;
        let (loss, correct) = model.discriminator_loss_on_tape(&mut tape, z, batch)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("discriminator loss is {value}")));
        }
        let stats = DiscStats {
            loss: value,
            correct,
            tokens: total,
        };
        (stats, tape.backward(loss)?)
    };
    let mut group = model.discriminator_params();
    if step.lambda > 0.0 {
        group.extend(model.feature_params());
    }
    apply_update(model, opt, &grads, &group, step.clip_norm)?;
    Ok(stats)
}

/// Evaluation parallelism: `TEMPALIGN_THREADS` if set, else the core count.
pub fn eval_threads() -> usize {
    std::env::var("TEMPALIGN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

const EVAL_BATCH: usize = 64;

fn predict_chunk(model: &TaggerModel, sentences: &[EncodedSentence]) -> Result<Vec<Vec<Label>>> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(EVAL_BATCH) {
        let refs: Vec<&EncodedSentence> = chunk.iter().collect();
        out.extend(model.predict(&refs)?);
    }
    Ok(out)
}

/// Predicted labels for encoded sentences, fanned out over threads and
/// returned in input order.
pub fn predict_encoded(model: &TaggerModel, sentences: &[EncodedSentence]) -> Result<Vec<Vec<Label>>> {
    let threads = eval_threads().min(sentences.len().div_ceil(EVAL_BATCH)).max(1);
    if threads == 1 {
        return predict_chunk(model, sentences);
    }
    let per = sentences.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Vec<Label>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sentences
            .chunks(per)
            .map(|c| scope.spawn(move || predict_chunk(model, c)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(sentences.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn encode_sentences(model: &TaggerModel, sentences: &[AnnotatedSentence], with_labels: bool) -> Result<Vec<EncodedSentence>> {
    sentences
        .iter()
        .map(|s| {
            let labels = if with_labels { s.labels.as_deref() } else { None };
            model.encode_sentence(&s.language, &s.tokens, labels)
        })
        .collect()
}

/// Predicted labels for every sentence of a corpus.
pub fn predict_corpus(model: &TaggerModel, corpus: &Corpus) -> Result<Vec<Vec<Label>>> {
    predict_encoded(model, &encode_sentences(model, &corpus.sentences, false)?)
}

/// Predicted spans grouped into the corpus' evaluation documents.
pub fn predicted_documents(model: &TaggerModel, corpus: &Corpus) -> Result<Vec<DocumentSpans>> {
    let labels = predict_corpus(model, corpus)?;
    Ok(crate::corpus::group_documents(
        corpus
            .sentences
            .iter()
            .zip(&labels)
            .map(|(s, l)| (s.doc_id.as_str(), s.len(), iob2_to_spans(l))),
    ))
}

/// Strict, relaxed and type F1 of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Triple {
    pub strict: f64,
    pub relaxed: f64,
    #[serde(rename = "type")]
    pub typed: f64,
}

impl From<&ScoreReport> for F1Triple {
    fn from(r: &ScoreReport) -> Self {
        Self {
            strict: r.strict.f1,
            relaxed: r.relaxed.f1,
            typed: r.typed.f1,
        }
    }
}

/// Dev scores per language plus their micro-average over all documents.
#[derive(Debug, Clone, PartialEq)]
pub struct DevReport {
    pub per_language: BTreeMap<String, ScoreReport>,
    pub combined: ScoreReport,
}

pub fn evaluate_dev(model: &TaggerModel, dev: &[Corpus]) -> Result<DevReport> {
    let mut per_language: BTreeMap<String, ScoreReport> = BTreeMap::new();
    let mut counts: BTreeMap<String, MatchCounts> = BTreeMap::new();
    let mut all = MatchCounts::default();
    for corpus in dev {
        let gold = corpus.gold_documents();
        let pred = predicted_documents(model, corpus)?;
        let report = score(&gold, &pred)?;
        *counts.entry(corpus.language.clone()).or_default() += report.counts;
        all += report.counts;
    }
    for (lang, c) in counts {
        per_language.insert(lang, ScoreReport::from_counts(c));
    }
    Ok(DevReport {
        per_language,
        combined: ScoreReport::from_counts(all),
    })
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_c: f64,
    pub loss_d: Option<f64>,
    pub disc_acc: Option<f64>,
    pub dev: BTreeMap<String, F1Triple>,
    pub combined: Option<F1Triple>,
}

/// Everything the training loop consumes besides the model.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub train: Vec<Corpus>,
    pub dev: Vec<Corpus>,
    /// Unlabeled sentences per language, used only by discriminator batches.
    pub unlabeled: BTreeMap<String, Vec<Vec<String>>>,
}

impl TrainingData {
    /// Loads every corpus and embedding space named in `config`. Returns the
    /// spaces of all active languages, with alignments installed.
    pub fn load(config: &TrainConfig) -> Result<(Vec<EmbeddingSpace>, TrainingData)> {
        config.check_inputs()?;
        let mut spaces = Vec::new();
        let mut data = TrainingData::default();
        for lang in config.active_languages() {
            let inputs = &config.languages[&lang];
            let vectors = inputs.vectors.as_ref().expect("checked by check_inputs");
            let mut space = load_vectors(vectors, &lang, config.max_words)?;
            if let Some(path) = &inputs.alignment {
                let a = AlignmentMatrix::load(path, &lang, &config.pivot)?;
                space = apply_alignment(&space, &a)?;
            }
            spaces.push(space);
            for (path, split, into) in [
                (&inputs.train, Split::Train, &mut data.train),
                (&inputs.dev, Split::Dev, &mut data.dev),
            ] {
                if let Some(path) = path {
                    let corpus = load_labeled(path)?;
                    if corpus.language != lang {
                        return Err(Error::Data(format!(
                            "{}: corpus language '{}' does not match key '{split}.{lang}'",
                            path.display(),
                            corpus.language
                        )));
                    }
                    into.push(corpus.with_split(split));
                }
            }
            if let Some(path) = &inputs.unlabeled {
                data.unlabeled.insert(lang.clone(), load_unlabeled(path, &lang)?);
            }
        }
        Ok((spaces, data))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch (the last epoch without dev data).
    pub model: TaggerModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Combined dev relaxed F1 of the best epoch.
    pub best_dev: Option<f64>,
    pub stopped_early: bool,
}

/// Sentence pools for discriminator batches, one per language that has
/// text: the unlabeled pool when given, else the labeled training tokens.
fn discriminator_pools(model: &TaggerModel, data: &TrainingData) -> Result<Vec<Vec<EncodedSentence>>> {
    let mut pools = Vec::new();
    for lang in model.languages() {
        let pool: Vec<EncodedSentence> = match data.unlabeled.get(lang) {
            Some(u) if !u.is_empty() => u
                .iter()
                .filter(|t| !t.is_empty())
                .map(|t| model.encode_sentence(lang, t, None))
                .collect::<Result<_>>()?,
            _ => data
                .train
                .iter()
                .filter(|c| c.language == lang)
                .flat_map(|c| c.sentences.iter())
                .map(|s| model.encode_sentence(lang, &s.tokens, None))
                .collect::<Result<_>>()?,
        };
        if !pool.is_empty() {
            pools.push(pool);
        }
    }
    Ok(pools)
}

/// A mixed-language batch: languages in rotation, sentences drawn uniformly.
pub fn sample_mixed_batch<'p>(pools: &'p [Vec<EncodedSentence>], size: usize, offset: usize, rng: &mut ChaCha8Rng) -> Vec<&'p EncodedSentence> {
    (0..size)
        .map(|j| {
            let pool = &pools[(j + offset) % pools.len()];
            &pool[rng.random_range(0..pool.len())]
        })
        .collect()
}

/// Runs the alternating schedule and returns the best-dev parameters.
/// The emission bias is first reset to the label prior of the training data.
/// When `log` is given, one JSON record per epoch is written to it.
pub fn train(mut model: TaggerModel, config: &TrainConfig, data: &TrainingData, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    config.check()?;
    let labeled: Vec<&Corpus> = data.train.iter().filter(|c| !c.is_empty()).collect();
    if labeled.is_empty() {
        return Err(Error::Config("no labeled training data".into()));
    }
    let train_sets: Vec<Vec<EncodedSentence>> = labeled
        .iter()
        .map(|c| {
            if !c.is_labeled() {
                return Err(Error::Data(format!("training corpus '{}' has unlabeled sentences", c.language)));
            }
            encode_sentences(&model, &c.sentences, true)
        })
        .collect::<Result<_>>()?;
    let all: Vec<&EncodedSentence> = train_sets.iter().flatten().collect();
    model.init_label_prior(&all);
    let pools = discriminator_pools(&model, data)?;
    let adversarial = pools.len() >= 2;
    if !adversarial {
        log::info!("fewer than two languages with text; discriminator steps are skipped");
    }
    let dev: Vec<Corpus> = data.dev.iter().filter(|c| !c.is_empty()).cloned().collect();

    let step = StepConfig::from(config);
    let mut opt = make_optimizer(config);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_store = model.store.clone();
    let mut best_epoch = 0;
    let mut records = Vec::new();
    let mut stopped_early = false;
    let sizes: Vec<usize> = train_sets.iter().map(Vec::len).collect();
    let interval = config.disc_interval.max(1);

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let e = epoch as u64;
        let plan = BatchPlan::new(&sizes, config.batch_size, config.seed, e);
        let (mut loss_c, mut loss_d) = (0.0, 0.0);
        let (mut d_steps, mut d_correct, mut d_tokens) = (0usize, 0usize, 0usize);
        for (k, b) in plan.batches.iter().enumerate() {
            let batch: Vec<&EncodedSentence> = b.indices.iter().map(|&i| &train_sets[b.corpus][i]).collect();
            let mut rng = stream_rng(config.seed, Stream::TaggerDropout, e, k as u64);
            loss_c += tagger_step(&mut model, &mut opt, &batch, &step, &mut rng)
                .map_err(|err| at(err, epoch, k + 1, "tagger"))?;
            if adversarial && (k + 1) % interval == 0 {
                let mut srng = stream_rng(config.seed, Stream::DiscSample, e, d_steps as u64);
                let dbatch = sample_mixed_batch(&pools, config.batch_size, d_steps, &mut srng);
                let mut drng = stream_rng(config.seed, Stream::DiscDropout, e, d_steps as u64);
                let st = discriminator_step(&mut model, &mut opt, &dbatch, &step, &mut drng)
                    .map_err(|err| at(err, epoch, k + 1, "discriminator"))?;
                loss_d += st.loss;
                d_correct += st.correct;
                d_tokens += st.tokens;
                d_steps += 1;
            }
        }
        let (dev_scores, combined) = if dev.is_empty() {
            (BTreeMap::new(), None)
        } else {
            let r = evaluate_dev(&model, &dev)?;
            let per = r.per_language.iter().map(|(l, s)| (l.clone(), F1Triple::from(s))).collect();
            (per, Some(F1Triple::from(&r.combined)))
        };
        let record = EpochRecord {
            epoch,
            loss_c: loss_c / plan.len().max(1) as f64,
            loss_d: (d_steps > 0).then(|| loss_d / d_steps as f64),
            disc_acc: (d_tokens > 0).then(|| d_correct as f64 / d_tokens as f64),
            dev: dev_scores,
            combined,
        };
        log::info!(
            "epoch {epoch}: loss_c {:.4} dev {:?} ({:.1}s)",
            record.loss_c,
            combined.map(|c| c.relaxed),
            started.elapsed().as_secs_f64()
        );
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("serializable record");
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        records.push(record);
        match combined {
            Some(c) => {
                let obs = stopper.observe(epoch, c.relaxed);
                if obs.improved {
                    best_store = model.store.clone();
                    best_epoch = epoch;
                }
                if obs.stop {
                    stopped_early = true;
                    break;
                }
            }
            None => {
                best_store = model.store.clone();
                best_epoch = epoch;
            }
        }
    }
    model.store = best_store;
    Ok(TrainOutcome {
        model,
        log: records,
        best_epoch,
        best_dev: stopper.best(),
        stopped_early,
    })
}

fn at(err: Error, epoch: usize, batch: usize, kind: &str) -> Error {
    match err {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch} ({kind} step): {msg}")),
        other => other,
    }
}

/// Index of the median score; with an even count the lower median. Ties keep
/// input order.
pub fn select_median(scores: &[f64]) -> Option<usize> {
    if scores.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    Some(order[(scores.len() - 1) / 2])
}

#[derive(Debug, Clone)]
pub struct MultiSeedOutcome {
    pub seeds: Vec<u64>,
    pub runs: Vec<TrainOutcome>,
    /// Index into `runs` of the median-dev run.
    pub selected: usize,
}

/// Trains one model per seed from the same spaces and data and marks the run
/// whose best combined dev relaxed F1 is the median.
pub fn multi_seed_run(spaces: &[EmbeddingSpace], config: &TrainConfig, data: &TrainingData, seeds: &[u64]) -> Result<MultiSeedOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..config.clone() };
        let model = TaggerModel::new(spaces.to_vec(), ModelConfig::from(&cfg))?;
        runs.push(train(model, &cfg, data, None)?);
    }
    let scores: Vec<f64> = runs.iter().map(|r| r.best_dev.unwrap_or(0.0)).collect();
    let selected = select_median(&scores).expect("non-empty");
    Ok(MultiSeedOutcome {
        seeds: seeds.to_vec(),
        runs,
        selected,
    })
}

/// Token-level accuracy of the model's own discriminator.
pub fn discriminator_accuracy(model: &TaggerModel, sentences: &[EncodedSentence]) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for chunk in sentences.chunks(EVAL_BATCH) {
        let refs: Vec<&EncodedSentence> = chunk.iter().collect();
        let mut tape = Tape::new();
        let f = model.features_on_tape(&mut tape, &refs, 0.0, None)?;
        let z = model.discriminator_logits_on_tape(&mut tape, f, 0.0)?;
        let (_, c) = model.discriminator_loss_on_tape(&mut tape, z, &refs)?;
        correct += c;
        total += refs.iter().map(|s| s.len()).sum::<usize>();
    }
    if total == 0 {
        return Err(Error::Contract("discriminator accuracy over zero tokens".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Settings for fitting a fresh discriminator on frozen features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Re-initializes the discriminator and trains it alone on the model's
/// frozen features; returns the probed copy of the model.
pub fn fit_probe(model: &TaggerModel, pools: &[Vec<EncodedSentence>], probe: &ProbeConfig) -> Result<TaggerModel> {
    if pools.len() < 2 || pools.iter().any(Vec::is_empty) {
        return Err(Error::Config("a probe needs sentences from at least two languages".into()));
    }
    let mut m = model.clone();
    let mut rng = stream_rng(probe.seed, Stream::Probe, 0, 0);
    for id in m.discriminator_params() {
        let t = m.store.get(id);
        let (r, c) = t.dims2()?;
        let limit = (6.0 / (r + c) as f64).sqrt();
        let data = (0..r * c).map(|_| rng.random_range(-limit..=limit)).collect();
        *m.store.get_mut(id) = Tensor::matrix(r, c, data).with_requires_grad(true);
    }
    let mut opt = Optimizer::AdamW(AdamWState::new(crate::math::AdamWConfig {
        learning_rate: probe.learning_rate,
        ..Default::default()
    }));
    let step = StepConfig {
        dropout: 0.0,
        lambda: 0.0,
        clip_norm: None,
    };
    for k in 0..probe.steps {
        let mut srng = stream_rng(probe.seed, Stream::Probe, 1, k as u64);
        let batch = sample_mixed_batch(pools, probe.batch_size, k, &mut srng);
        discriminator_step(&mut m, &mut opt, &batch, &step, &mut srng)?;
    }
    Ok(m)
}
