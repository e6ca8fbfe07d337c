//! The tagger: shared feature extractor, BiLSTM encoder, CRF output layer and
//! language discriminator, all parameters held in one [`ParamStore`].
//!
//! Matrices are row-form: a sentence is an `n×S` matrix of embeddings `E`,
//! features are `tanh(E·W)`, which is `tanh(Wᵀ e)` applied row by row.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::crf::{self, CrfScores, DecodeMask};
use super::labels::{Label, LabelScheme};
use super::lstm::lstm_on_tape;
use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::evaluation::{iob2_to_spans, TimexSpan};
use crate::linalg::random_orthogonal;
use crate::math::{ParamId, ParamStore, Tape, Tensor, Var};

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub lstm_hidden: usize,
    pub disc_hidden: usize,
    /// Whether the embedding tables are parameters of the feature extractor.
    pub train_embeddings: bool,
    /// Forbid IOB2-invalid transitions when decoding.
    pub iob2_constraints: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lstm_hidden: 128,
            disc_hidden: 100,
            train_embeddings: false,
            iob2_constraints: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

/// Handles of every parameter, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIds {
    pub w: ParamId,
    /// Per language, present when embeddings are trainable.
    pub tables: Vec<Option<ParamId>>,
    pub forward: LstmIds,
    pub backward: LstmIds,
    pub proj: ParamId,
    pub proj_bias: ParamId,
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
    pub disc_v: ParamId,
    pub disc_t: ParamId,
}

/// A sentence mapped to vocabulary indices of its language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub language: usize,
    pub tokens: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub store: ParamStore,
    pub ids: ParamIds,
    pub config: ModelConfig,
    spaces: Vec<EmbeddingSpace>,
    /// Aligned lookup tables used when embeddings are frozen.
    tables: Vec<Tensor>,
    dim: usize,
}

// At the default step size each weight moves by about 1e-5 per step, so
// training speed comes from the initial scales: large emission weights turn
// small LSTM updates into large emission changes, small input weights keep
// the LSTM gates out of saturation, and a sharpened label prior keeps the
// untrained tagger from emitting random spans.
const INPUT_INIT: f64 = 0.25;
const EMISSION_INIT: f64 = 3.0;
const PRIOR_SCALE: f64 = 3.0;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect())
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

fn aligned_table(space: &EmbeddingSpace) -> Tensor {
    let (n, s) = (space.len(), space.dim());
    let mut data = Vec::with_capacity(n * s);
    for i in 0..n {
        data.extend(space.row(i));
    }
    Tensor::matrix(n, s, data)
}

impl TaggerModel {
    /// Builds a freshly initialized model over the given embedding spaces.
    /// The language inventory is sorted by code; its order fixes the
    /// discriminator's output classes.
    pub fn new(mut spaces: Vec<EmbeddingSpace>, config: ModelConfig) -> Result<Self> {
        if spaces.is_empty() {
            return Err(Error::Config("the model needs at least one embedding space".into()));
        }
        if config.lstm_hidden == 0 || config.disc_hidden == 0 {
            return Err(Error::Config("hidden sizes must be >= 1".into()));
        }
        spaces.sort_by(|a, b| a.language.cmp(&b.language));
        for w in spaces.windows(2) {
            if w[0].language == w[1].language {
                return Err(Error::Config(format!("language '{}' given twice", w[0].language)));
            }
        }
        let s = spaces[0].dim();
        if let Some(bad) = spaces.iter().find(|sp| sp.dim() != s) {
            return Err(Error::Config(format!(
                "'{}' vectors have dimensionality {} but '{}' has {s}",
                bad.language,
                bad.dim(),
                spaces[0].language
            )));
        }
        let (h, dh, o) = (config.lstm_hidden, config.disc_hidden, spaces.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let tables: Vec<Tensor> = spaces.iter().map(aligned_table).collect();

        let w = store.add("feature.w", Tensor::identity(s));
        let table_ids = spaces
            .iter()
            .zip(&tables)
            .map(|(sp, t)| {
                config
                    .train_embeddings
                    .then(|| store.add(format!("embedding.{}", sp.language), t.clone()))
            })
            .collect();
        let lstm = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| {
            let wx = uniform(rng, s, 4 * h, INPUT_INIT);
            let mut wh = vec![0.0; h * 4 * h];
            for gate in 0..4 {
                let q = random_orthogonal(h, rng);
                for r in 0..h {
                    wh[r * 4 * h + gate * h..r * 4 * h + (gate + 1) * h].copy_from_slice(q.row_slice(r));
                }
            }
            let mut b = vec![0.0; 4 * h];
            b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            LstmIds {
                wx: store.add(format!("{name}.wx"), wx),
                wh: store.add(format!("{name}.wh"), Tensor::matrix(h, 4 * h, wh)),
                b: store.add(format!("{name}.b"), Tensor::matrix(1, 4 * h, b)),
            }
        };
        let forward = lstm(&mut store, &mut rng, "lstm.forward");
        let backward = lstm(&mut store, &mut rng, "lstm.backward");
        let l = Label::COUNT;
        let proj = store.add("crf.proj", uniform(&mut rng, 2 * h, l, EMISSION_INIT));
        let proj_bias = store.add("crf.proj_bias", Tensor::zeros(&[1, l]));
        let transitions = store.add("crf.transitions", Tensor::zeros(&[l, l]));
        let start = store.add("crf.start", Tensor::zeros(&[1, l]));
        let end = store.add("crf.end", Tensor::zeros(&[1, l]));
        let disc_v = store.add("disc.v", glorot(&mut rng, s, dh));
        let disc_t = store.add("disc.t", glorot(&mut rng, dh, o));

        Ok(Self {
            store,
            ids: ParamIds {
                w,
                tables: table_ids,
                forward,
                backward,
                proj,
                proj_bias,
                transitions,
                start,
                end,
                disc_v,
                disc_t,
            },
            config,
            spaces,
            tables,
            dim: s,
        })
    }

    /// Reassembles a model from checkpointed parts.
    pub(crate) fn from_parts(spaces: Vec<EmbeddingSpace>, config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(spaces, config)?;
        if store.len() != model.store.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, the architecture needs {}",
                store.len(),
                model.store.len()
            )));
        }
        for ((_, fresh), (_, saved)) in model.store.iter().zip(store.iter()) {
            if fresh.name != saved.name || fresh.tensor.shape() != saved.tensor.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    saved.name,
                    saved.tensor.shape(),
                    fresh.name,
                    fresh.tensor.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn lstm_hidden(&self) -> usize {
        self.config.lstm_hidden
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.spaces.iter().map(|s| s.language.as_str())
    }

    pub fn num_languages(&self) -> usize {
        self.spaces.len()
    }

    pub fn spaces(&self) -> &[EmbeddingSpace] {
        &self.spaces
    }

    pub fn language_index(&self, language: &str) -> Result<usize> {
        self.spaces
            .iter()
            .position(|s| s.language == language)
            .ok_or_else(|| {
                Error::Config(format!(
                    "language '{language}' has no embedding space in this model (known: {})",
                    self.languages().collect::<Vec<_>>().join(", ")
                ))
            })
    }

    /// Maps tokens (and optional gold labels) to indices.
    pub fn encode_sentence(&self, language: &str, tokens: &[String], labels: Option<&[Label]>) -> Result<EncodedSentence> {
        let li = self.language_index(language)?;
        if tokens.is_empty() {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let vocab = &self.spaces[li].vocab;
        Ok(EncodedSentence {
            language: li,
            tokens: tokens.iter().map(|t| vocab.lookup(t)).collect(),
            labels: labels.map(|ls| ls.iter().map(|l| l.index()).collect()),
        })
    }

    /// Parameters of the shared feature extractor (θ_F).
    pub fn feature_params(&self) -> Vec<ParamId> {
        let mut v = vec![self.ids.w];
        v.extend(self.ids.tables.iter().flatten());
        v
    }

    /// Parameters of the BiLSTM-CRF tagger (θ_C).
    pub fn tagger_params(&self) -> Vec<ParamId> {
        let (f, b) = (self.ids.forward, self.ids.backward);
        vec![
            f.wx,
            f.wh,
            f.b,
            b.wx,
            b.wh,
            b.b,
            self.ids.proj,
            self.ids.proj_bias,
            self.ids.transitions,
            self.ids.start,
            self.ids.end,
        ]
    }

    /// Parameters of the language discriminator (θ_D).
    pub fn discriminator_params(&self) -> Vec<ParamId> {
        vec![self.ids.disc_v, self.ids.disc_t]
    }

    /// Sets the emission bias to a scaled smoothed log frequency of each label
    /// in `sentences`, so an untrained tagger predicts (almost) only `O`.
    pub fn init_label_prior(&mut self, sentences: &[&EncodedSentence]) {
        let mut counts = [1.0f64; Label::COUNT];
        for s in sentences {
            for &y in s.labels.iter().flatten() {
                counts[y] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let bias = self.store.get_mut(self.ids.proj_bias).data_mut();
        for (b, c) in bias.iter_mut().zip(counts) {
            *b = PRIOR_SCALE * (c / total).ln();
        }
    }

    /// Stacked embeddings of a batch, `N×S`.
    fn embed<'a>(&'a self, tape: &mut Tape<'a>, batch: &[&EncodedSentence]) -> Result<Var> {
        if batch.is_empty() || batch.iter().any(|s| s.is_empty()) {
            return Err(Error::Contract("batch must hold non-empty sentences".into()));
        }
        if self.config.train_embeddings {
            let mut parts = Vec::with_capacity(batch.len());
            for s in batch {
                let id = self.ids.tables[s.language].expect("trainable table");
                let table = tape.param(&self.store, id);
                parts.push(tape.gather_rows(table, &s.tokens)?);
            }
            if parts.len() == 1 {
                return Ok(parts[0]);
            }
            tape.concat(&parts, 0)
        } else {
            let total: usize = batch.iter().map(|s| s.len()).sum();
            let mut data = Vec::with_capacity(total * self.dim);
            for s in batch {
                let table = &self.tables[s.language];
                for &t in &s.tokens {
                    data.extend_from_slice(table.row_slice(t));
                }
            }
            Ok(tape.constant(Tensor::matrix(total, self.dim, data)))
        }
    }

    /// F for a batch: `tanh(dropout(E)·W)`. `keep` is the dropout mask over
    /// the `N×S` embedding matrix; `None` is evaluation mode.
    pub fn features_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &[&EncodedSentence],
        dropout: f64,
        keep: Option<&[bool]>,
    ) -> Result<Var> {
        let e = self.embed(tape, batch)?;
        let e = tape.dropout(e, dropout, keep)?;
        let w = tape.param(&self.store, self.ids.w);
        let z = tape.matmul(e, w)?;
        Ok(tape.tanh(z))
    }

    /// BiLSTM states `N×2h` for stacked features.
    pub fn encode_on_tape<'a>(&'a self, tape: &mut Tape<'a>, features: Var, lengths: &[usize]) -> Result<Var> {
        let run = |tape: &mut Tape<'a>, ids: LstmIds, reverse: bool| {
            let (wx, wh, b) = (
                tape.param(&self.store, ids.wx),
                tape.param(&self.store, ids.wh),
                tape.param(&self.store, ids.b),
            );
            lstm_on_tape(tape, features, wx, wh, b, lengths, reverse)
        };
        let f = run(tape, self.ids.forward, false)?;
        let b = run(tape, self.ids.backward, true)?;
        tape.concat(&[f, b], 1)
    }

    pub fn emissions_on_tape<'a>(&'a self, tape: &mut Tape<'a>, encoded: Var) -> Result<Var> {
        let p = tape.param(&self.store, self.ids.proj);
        let pb = tape.param(&self.store, self.ids.proj_bias);
        let z = tape.matmul(encoded, p)?;
        tape.add(z, pb)
    }

    /// CRF negative log-likelihood of the batch, each sentence weighted by `weight`.
    pub fn crf_loss_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        emissions: Var,
        batch: &[&EncodedSentence],
        weight: f64,
    ) -> Result<Var> {
        let mut gold = Vec::new();
        for (k, s) in batch.iter().enumerate() {
            let labels = s
                .labels
                .as_deref()
                .ok_or_else(|| Error::Data(format!("sentence {k} of the batch has no gold labels")))?;
            check_gold(labels, &format!("batch sentence {k}"))?;
            gold.extend_from_slice(labels);
        }
        let lengths: Vec<usize> = batch.iter().map(|s| s.len()).collect();
        let weights = vec![weight; batch.len()];
        let tr = tape.param(&self.store, self.ids.transitions);
        let st = tape.param(&self.store, self.ids.start);
        let en = tape.param(&self.store, self.ids.end);
        crf::nll_on_tape(tape, emissions, tr, st, en, &lengths, &gold, &weights)
    }

    /// Discriminator logits `N×O`; features pass through gradient reversal
    /// with weight `lambda` first.
    pub fn discriminator_logits_on_tape<'a>(&'a self, tape: &mut Tape<'a>, features: Var, lambda: f64) -> Result<Var> {
        if self.num_languages() < 2 {
            return Err(Error::Config(format!(
                "discrimination needs at least 2 languages, the model has {}",
                self.num_languages()
            )));
        }
        let r = tape.grad_reverse(features, lambda)?;
        let v = tape.param(&self.store, self.ids.disc_v);
        let t = tape.param(&self.store, self.ids.disc_t);
        let hdn = tape.matmul(r, v)?;
        let hdn = tape.relu(hdn);
        tape.matmul(hdn, t)
    }

    /// Token cross-entropy of the discriminator, averaged per sentence and
    /// then over the batch. Also returns the number of correct argmax predictions.
    pub fn discriminator_loss_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        logits: Var,
        batch: &[&EncodedSentence],
    ) -> Result<(Var, usize)> {
        let targets: Vec<usize> = batch.iter().flat_map(|s| std::iter::repeat_n(s.language, s.len())).collect();
        let weights: Vec<f64> = batch
            .iter()
            .flat_map(|s| std::iter::repeat_n(1.0 / (s.len() * batch.len()) as f64, s.len()))
            .collect();
        let correct = count_correct(tape.value(logits), &targets);
        let lse = tape.log_sum_exp(logits, 1)?;
        let picked = tape.pick(logits, &targets)?;
        let neg = tape.scale(picked, -1.0);
        let ce = tape.add(lse, neg)?;
        let n = weights.len();
        let w = tape.constant(Tensor::matrix(n, 1, weights));
        let weighted = tape.mul(ce, w)?;
        Ok((tape.sum(weighted), correct))
    }

    pub fn crf_scores(&self) -> CrfScores<'_> {
        CrfScores {
            transitions: self.store.get(self.ids.transitions).data(),
            start: self.store.get(self.ids.start).data(),
            end: self.store.get(self.ids.end).data(),
        }
    }

    fn decode_mask(&self) -> Option<DecodeMask> {
        self.config.iob2_constraints.then(|| DecodeMask {
            transitions: LabelScheme.transition_mask(),
            start: LabelScheme.labels().map(|l| l.may_follow(None)).collect(),
        })
    }

    /// F(x) for one sentence in evaluation mode, `n×S`.
    pub fn feature_extract(&self, tokens: &[String], language: &str) -> Result<Tensor> {
        let s = self.encode_sentence(language, tokens, None)?;
        let mut tape = Tape::new();
        let f = self.features_on_tape(&mut tape, &[&s], 0.0, None)?;
        Ok(tape.value(f).clone())
    }

    /// BiLSTM states `n×2h` for one sentence's features.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let (n, s) = features.dims2()?;
        if n == 0 {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        if s != self.dim {
            return Err(Error::Dimension(format!("features have width {s}, expected {}", self.dim)));
        }
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let h = self.encode_on_tape(&mut tape, f, &[n])?;
        Ok(tape.value(h).clone())
    }

    /// Emission scores `n×9` from BiLSTM states.
    pub fn emissions(&self, encoded: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let h = tape.constant(encoded.clone());
        let e = self.emissions_on_tape(&mut tape, h)?;
        Ok(tape.value(e).clone())
    }

    /// Language distribution per token, `n×O`.
    pub fn discriminate(&self, features: &Tensor, lambda: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let z = self.discriminator_logits_on_tape(&mut tape, f, lambda)?;
        let p = tape.softmax(z, 1)?;
        Ok(tape.value(p).clone())
    }

    /// CRF negative log-likelihood of a gold sequence under given emissions.
    pub fn crf_log_likelihood(&self, emissions: &Tensor, gold: &[Label], sentence: &str) -> Result<f64> {
        if !LabelScheme.is_valid_sequence(gold) {
            return Err(Error::Data(format!("{sentence}: gold labels are not valid IOB2")));
        }
        let idx: Vec<usize> = gold.iter().map(|l| l.index()).collect();
        crf::negative_log_likelihood(emissions.data(), &self.crf_scores(), &idx)
    }

    /// Viterbi labels for one sentence's emissions.
    pub fn decode(&self, emissions: &Tensor) -> Result<Vec<Label>> {
        let mask = self.decode_mask();
        let (path, _) = crf::viterbi(emissions.data(), &self.crf_scores(), mask.as_ref())?;
        Ok(path.into_iter().map(|i| Label::from_index(i).expect("label index")).collect())
    }

    /// Predicted labels for a batch of encoded sentences (evaluation mode).
    pub fn predict(&self, batch: &[&EncodedSentence]) -> Result<Vec<Vec<Label>>> {
        let mut tape = Tape::new();
        let f = self.features_on_tape(&mut tape, batch, 0.0, None)?;
        let lengths: Vec<usize> = batch.iter().map(|s| s.len()).collect();
        let h = self.encode_on_tape(&mut tape, f, &lengths)?;
        let e = self.emissions_on_tape(&mut tape, h)?;
        let e = tape.value(e);
        let l = Label::COUNT;
        let mask = self.decode_mask();
        let scores = self.crf_scores();
        let mut off = 0;
        let mut out = Vec::with_capacity(batch.len());
        for &n in &lengths {
            let (path, _) = crf::viterbi(&e.data()[off * l..(off + n) * l], &scores, mask.as_ref())?;
            out.push(path.into_iter().map(|i| Label::from_index(i).expect("label index")).collect());
            off += n;
        }
        Ok(out)
    }

    pub fn tag_labels(&self, tokens: &[String], language: &str) -> Result<Vec<Label>> {
        let s = self.encode_sentence(language, tokens, None)?;
        Ok(self.predict(&[&s])?.remove(0))
    }

    /// feature_extract → encode → emissions → Viterbi → spans.
    pub fn tag_sentence(&self, tokens: &[String], language: &str) -> Result<Vec<TimexSpan>> {
        Ok(iob2_to_spans(&self.tag_labels(tokens, language)?))
    }
}

fn check_gold(labels: &[usize], name: &str) -> Result<()> {
    let parsed: Option<Vec<Label>> = labels.iter().map(|&i| Label::from_index(i)).collect();
    match parsed {
        Some(ls) if LabelScheme.is_valid_sequence(&ls) => Ok(()),
        _ => Err(Error::Data(format!("{name}: gold labels are not valid IOB2"))),
    }
}

fn count_correct(logits: &Tensor, targets: &[usize]) -> usize {
    let (n, o) = logits.dims2().expect("matrix logits");
    (0..n)
        .filter(|&i| {
            let row = &logits.data()[i * o..(i + 1) * o];
            let mut best = 0;
            for j in 1..o {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == targets[i]
        })
        .count()
}
