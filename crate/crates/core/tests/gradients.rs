//! Autodiff against central finite differences for each model component.

mod common;

use common::{max_relative_error, max_relative_error_scaled, random_sentence, tiny_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempalign::math::{Tape, Tensor, Var};
use tempalign::tagger::{EncodedSentence, TaggerModel};

const TOL: f64 = 1e-4;

fn batch(model: &TaggerModel, seed: u64) -> Vec<EncodedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        random_sentence(model, "aa", 3, &mut rng),
        random_sentence(model, "bb", 3, &mut rng),
    ]
}

/// `sum(x ⊙ R)` for a fixed random `R`, so every output entry matters.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let r = tape.constant(r);
    let y = tape.mul(x, r).unwrap();
    tape.sum(y)
}

fn disc_loss<'a>(m: &'a TaggerModel, tape: &mut Tape<'a>, sents: &[EncodedSentence], lambda: f64) -> Var {
    let refs: Vec<&EncodedSentence> = sents.iter().collect();
    let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
    let z = m.discriminator_logits_on_tape(tape, f, lambda).unwrap();
    m.discriminator_loss_on_tape(tape, z, &refs).unwrap().0
}

#[test]
fn feature_extractor() {
    for seed in 0..3 {
        let model = tiny_model(seed);
        let sents = batch(&model, seed);
        let err = max_relative_error(&model, &model.feature_params(), &|m, tape| {
            let refs: Vec<&EncodedSentence> = sents.iter().collect();
            let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
            project(tape, f, 99)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn bilstm() {
    for seed in 0..3 {
        let model = tiny_model(seed);
        let sents = batch(&model, seed);
        let ids = [model.ids.forward, model.ids.backward]
            .iter()
            .flat_map(|l| [l.wx, l.wh, l.b])
            .chain(model.feature_params())
            .collect::<Vec<_>>();
        let err = max_relative_error(&model, &ids, &|m, tape| {
            let refs: Vec<&EncodedSentence> = sents.iter().collect();
            let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
            let h = m.encode_on_tape(tape, f, &[3, 3]).unwrap();
            project(tape, h, 7)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn crf_loss() {
    for seed in 0..3 {
        let model = tiny_model(seed);
        let sents = batch(&model, seed);
        let err = max_relative_error(&model, &model.tagger_params(), &|m, tape| {
            let refs: Vec<&EncodedSentence> = sents.iter().collect();
            let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
            let h = m.encode_on_tape(tape, f, &[3, 3]).unwrap();
            let e = m.emissions_on_tape(tape, h).unwrap();
            m.crf_loss_on_tape(tape, e, &refs, 0.5).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn discriminator_with_reversal() {
    for seed in 0..3 {
        let model = tiny_model(seed);
        let sents = batch(&model, seed);
        let err = max_relative_error(&model, &model.discriminator_params(), &|m, tape| disc_loss(m, tape, &sents, 0.3));
        assert!(err < TOL, "seed {seed}: {err}");
        // The reversal layer hands the features -λ times the true gradient.
        let err = max_relative_error_scaled(&model, &model.feature_params(), &|m, tape| disc_loss(m, tape, &sents, 0.3), -0.3);
        assert!(err < TOL, "seed {seed}: {err}");
    }
}
