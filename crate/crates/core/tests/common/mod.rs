#![allow(dead_code)]

pub mod criteria;
pub mod transfer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempalign::embeddings::EmbeddingSpace;
use tempalign::math::{Gradients, ParamId, Tape};
use tempalign::tagger::{EncodedSentence, Label, ModelConfig, TaggerModel};

pub const FD_STEP: f64 = 1e-5;

/// Two languages, six words each, 4-dim vectors, tiny hidden sizes and
/// every parameter redrawn from N(0, 0.5²).
pub fn tiny_model(seed: u64) -> TaggerModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spaces = ["aa", "bb"]
        .iter()
        .map(|lang| {
            let words = (0..6).map(|i| format!("{lang}{i}")).collect();
            let rows = (0..6).map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
            EmbeddingSpace::from_rows(*lang, words, rows).unwrap()
        })
        .collect();
    let config = ModelConfig {
        lstm_hidden: 3,
        disc_hidden: 5,
        seed,
        ..ModelConfig::default()
    };
    let mut model = TaggerModel::new(spaces, config).unwrap();
    let ids: Vec<ParamId> = model.store.ids().collect();
    for id in ids {
        for v in model.store.get_mut(id).data_mut() {
            *v = 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    model
}

/// A random labeled sentence of `n` tokens with a valid IOB2 sequence.
pub fn random_sentence(model: &TaggerModel, lang: &str, n: usize, rng: &mut ChaCha8Rng) -> EncodedSentence {
    let tokens: Vec<String> = (0..n).map(|_| format!("{lang}{}", rng.random_range(0..6))).collect();
    let mut labels = Vec::with_capacity(n);
    let mut prev: Option<Label> = None;
    for _ in 0..n {
        let options: Vec<Label> = (0..Label::COUNT).filter_map(Label::from_index).filter(|l| l.may_follow(prev)).collect();
        let l = options[rng.random_range(0..options.len())];
        labels.push(l);
        prev = Some(l);
    }
    model.encode_sentence(lang, &tokens, Some(&labels)).unwrap()
}

/// Gradient of a scalar tape computation with respect to `id`, zeros when unreached.
pub fn grad_of(grads: &Gradients, model: &TaggerModel, id: ParamId) -> Vec<f64> {
    grads
        .param(id)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; model.store.get(id).len()])
}

/// Largest norm-wise relative error between autodiff and central differences
/// over the parameters `ids` of a scalar function of the model.
pub fn max_relative_error(
    model: &TaggerModel,
    ids: &[ParamId],
    f: &dyn for<'a> Fn(&'a TaggerModel, &mut Tape<'a>) -> tempalign::math::Var,
) -> f64 {
    max_relative_error_scaled(model, ids, f, 1.0)
}

/// As [`max_relative_error`], expecting autodiff to equal `scale` times the
/// numeric derivative (gradient reversal makes the scale `-λ`).
pub fn max_relative_error_scaled(
    model: &TaggerModel,
    ids: &[ParamId],
    f: &dyn for<'a> Fn(&'a TaggerModel, &mut Tape<'a>) -> tempalign::math::Var,
    scale: f64,
) -> f64 {
    let value = |m: &TaggerModel| {
        let mut tape = Tape::new();
        let out = f(m, &mut tape);
        tape.value(out).data()[0]
    };
    let grads = {
        let mut tape = Tape::new();
        let out = f(model, &mut tape);
        tape.backward(out).unwrap()
    };
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = grad_of(&grads, model, id);
        let mut numeric = vec![0.0; analytic.len()];
        let mut m = model.clone();
        for k in 0..analytic.len() {
            let orig = m.store.get(id).data()[k];
            m.store.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = value(&m);
            m.store.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = value(&m);
            m.store.get_mut(id).data_mut()[k] = orig;
            numeric[k] = scale * (up - down) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-12);
        assert!(norm(&numeric) > 1e-9, "parameter {} has no gradient signal", model.store.name(id));
        worst = worst.max(diff / scale);
    }
    worst
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
