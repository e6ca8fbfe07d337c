//! Measurements behind the acceptance criteria. Each function returns the
//! measured quantities; callers compare them with the thresholds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempalign::alignment::{mean_pair_cosine, procrustes_align, BilingualDictionary};
use tempalign::embeddings::EmbeddingSpace;
use tempalign::evaluation::{paired_permutation_test, score, DocumentSpans, TimexSpan};
use tempalign::linalg::orthogonality_error;
use tempalign::math::{Optimizer, Tape, Tensor};
use tempalign::tagger::crf::{log_partition, viterbi, CrfScores};
use tempalign::tagger::{EncodedSentence, TaggerModel, TimexType};
use tempalign::training::{discriminator_step, tagger_step, StepConfig};

use super::{grad_of, random_sentence, tiny_model};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Outcome of comparing the CRF against exhaustive enumeration.
pub struct CrfOracle {
    pub instances: usize,
    pub max_log_z_error: f64,
    pub viterbi_mismatches: usize,
}

/// Random CRFs with n ≤ 4 tokens and ≤ 4 labels, all scores N(0, 1).
pub fn crf_oracle(instances: usize, seed: u64) -> CrfOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..instances {
        let n: usize = rng.random_range(1..=4);
        let l: usize = rng.random_range(1..=4);
        let em: Vec<f64> = (0..n * l).map(|_| normal(&mut rng)).collect();
        let tr: Vec<f64> = (0..l * l).map(|_| normal(&mut rng)).collect();
        let st: Vec<f64> = (0..l).map(|_| normal(&mut rng)).collect();
        let en: Vec<f64> = (0..l).map(|_| normal(&mut rng)).collect();

        // Enumerate all l^n paths, scoring each from scratch.
        let mut scores = Vec::new();
        let mut paths = Vec::new();
        for code in 0..l.pow(n as u32) {
            let path: Vec<usize> = (0..n).map(|i| (code / l.pow(i as u32)) % l).collect();
            let mut s = st[path[0]] + en[path[n - 1]];
            for i in 0..n {
                s += em[i * l + path[i]];
                if i > 0 {
                    s += tr[path[i - 1] * l + path[i]];
                }
            }
            scores.push(s);
            paths.push(path);
        }
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        let best = (0..scores.len()).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });

        let crf = CrfScores::new(&tr, &st, &en).unwrap();
        max_err = max_err.max((log_partition(&em, &crf).unwrap() - log_z).abs());
        let (path, _) = viterbi(&em, &crf, None).unwrap();
        if path != paths[best] {
            mismatches += 1;
        }
    }
    CrfOracle {
        instances,
        max_log_z_error: max_err,
        viterbi_mismatches: mismatches,
    }
}

/// How far the applied feature-extractor update is from
/// `-η(∂L_C/∂θ_F − λ·∂L_D/∂θ_F)`, and whether the discriminator step left
/// θ_F bitwise unchanged.
pub struct UpdateRule {
    pub max_deviation: f64,
    pub discriminator_moved_features: bool,
}

pub fn update_rule(lambda: f64, seed: u64) -> UpdateRule {
    let eta = 0.1;
    let model = tiny_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sents: Vec<EncodedSentence> = vec![
        random_sentence(&model, "aa", 3, &mut rng),
        random_sentence(&model, "bb", 3, &mut rng),
        random_sentence(&model, "aa", 2, &mut rng),
    ];
    let refs: Vec<&EncodedSentence> = sents.iter().collect();
    let lengths: Vec<usize> = sents.iter().map(EncodedSentence::len).collect();
    let features = model.feature_params();

    // Reference gradients, the discriminator one without any reversal layer.
    let g_c = {
        let mut tape = Tape::new();
        let f = model.features_on_tape(&mut tape, &refs, 0.0, None).unwrap();
        let h = model.encode_on_tape(&mut tape, f, &lengths).unwrap();
        let e = model.emissions_on_tape(&mut tape, h).unwrap();
        let loss = model.crf_loss_on_tape(&mut tape, e, &refs, 1.0 / refs.len() as f64).unwrap();
        let g = tape.backward(loss).unwrap();
        features.iter().map(|&id| grad_of(&g, &model, id)).collect::<Vec<_>>()
    };
    let g_d = {
        let mut tape = Tape::new();
        let f = model.features_on_tape(&mut tape, &refs, 0.0, None).unwrap();
        let v = tape.param(&model.store, model.ids.disc_v);
        let t = tape.param(&model.store, model.ids.disc_t);
        let z = tape.matmul(f, v).unwrap();
        let z = tape.relu(z);
        let z = tape.matmul(z, t).unwrap();
        let (loss, _) = model.discriminator_loss_on_tape(&mut tape, z, &refs).unwrap();
        let g = tape.backward(loss).unwrap();
        features.iter().map(|&id| grad_of(&g, &model, id)).collect::<Vec<_>>()
    };

    let step = StepConfig {
        dropout: 0.0,
        lambda,
        clip_norm: None,
    };
    let run = |tagger: bool| -> TaggerModel {
        let mut m = model.clone();
        let mut opt = Optimizer::PlainSgd { learning_rate: eta };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        if tagger {
            tagger_step(&mut m, &mut opt, &refs, &step, &mut r).unwrap();
        } else {
            discriminator_step(&mut m, &mut opt, &refs, &step, &mut r).unwrap();
        }
        m
    };
    let after_c = run(true);
    let after_d = run(false);

    let mut worst: f64 = 0.0;
    let mut moved = false;
    for (k, &id) in features.iter().enumerate() {
        let w0 = model.store.get(id).data();
        let wc = after_c.store.get(id).data();
        let wd = after_d.store.get(id).data();
        for j in 0..w0.len() {
            let applied = (wc[j] - w0[j]) + (wd[j] - w0[j]);
            let expected = -eta * (g_c[k][j] - lambda * g_d[k][j]);
            worst = worst.max((applied - expected).abs());
            moved |= wd[j].to_bits() != w0[j].to_bits();
        }
    }
    UpdateRule {
        max_deviation: worst,
        discriminator_moved_features: moved,
    }
}

/// Random orthogonal matrix by Gram-Schmidt QR of a Gaussian matrix.
pub fn qr_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for _ in 0..2 {
            for u in &q {
                let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

pub struct ProcrustesRecovery {
    /// ‖A − R‖_F with A in row form (`x·A ≈ y`).
    pub distance: f64,
    pub orthogonality: f64,
    /// Mean dictionary cosine after aligning with σ = 0.01 noise on the target.
    pub noisy_cosine: f64,
}

/// S = 10, 200 dictionary pairs, target = source rotated by a random R.
pub fn procrustes_recovery(seed: u64) -> ProcrustesRecovery {
    let (s, pairs) = (10, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = qr_orthogonal(s, &mut rng);
    let x: Vec<Vec<f64>> = (0..pairs).map(|_| (0..s).map(|_| normal(&mut rng)).collect()).collect();
    let rotate = |row: &Vec<f64>| -> Vec<f64> { (0..s).map(|j| (0..s).map(|i| row[i] * r[i][j]).sum()).collect() };
    let words: Vec<String> = (0..pairs).map(|i| format!("w{i}")).collect();
    let dict = BilingualDictionary::new("xx", "en", words.iter().map(|w| (w.clone(), w.clone())).collect());
    let src = EmbeddingSpace::from_rows("xx", words.clone(), x.clone()).unwrap();

    let clean = EmbeddingSpace::from_rows("en", words.clone(), x.iter().map(rotate).collect()).unwrap();
    let a = procrustes_align(&src, &clean, &dict).unwrap();
    // The library stores the column-form map (y = A·x), the transpose of the row form.
    let row_form = a.matrix.transpose().unwrap();
    let distance = (0..s)
        .flat_map(|i| (0..s).map(move |j| (i, j)))
        .map(|(i, j)| (row_form.get2(i, j) - r[i][j]).powi(2))
        .sum::<f64>()
        .sqrt();
    let orthogonality = orthogonality_error(&a.matrix).unwrap();

    let noisy_rows: Vec<Vec<f64>> = x
        .iter()
        .map(|row| rotate(row).into_iter().map(|v| v + 0.01 * normal(&mut rng)).collect())
        .collect();
    let noisy = EmbeddingSpace::from_rows("en", words, noisy_rows).unwrap();
    let an = procrustes_align(&src, &noisy, &dict).unwrap();
    let noisy_cosine = mean_pair_cosine(&src, &noisy, &dict, &an).unwrap();
    ProcrustesRecovery {
        distance,
        orthogonality,
        noisy_cosine,
    }
}

/// Hand-computed scorer cases; returns the names of the failing ones.
pub fn scorer_examples() -> Vec<&'static str> {
    use TimexType::*;
    let sp = TimexSpan::new;
    let doc = |spans: Vec<TimexSpan>| vec![DocumentSpans::new("d", spans)];
    let mut failures = Vec::new();
    let mut check = |name, gold: Vec<TimexSpan>, pred: Vec<TimexSpan>, expect: (f64, f64, f64)| {
        let r = score(&doc(gold), &doc(pred)).unwrap();
        if (r.strict.f1, r.relaxed.f1, r.typed.f1) != expect {
            failures.push(name);
        }
    };
    check("identical", vec![sp(0, 1, Date), sp(4, 4, Time)], vec![sp(0, 1, Date), sp(4, 4, Time)], (1.0, 1.0, 1.0));
    check("partial overlap", vec![sp(3, 4, Date)], vec![sp(2, 4, Date)], (0.0, 1.0, 1.0));
    check("wrong type", vec![sp(3, 4, Date)], vec![sp(3, 4, Duration)], (1.0, 1.0, 0.0));
    check("disjoint", vec![sp(0, 0, Date)], vec![sp(2, 2, Date)], (0.0, 0.0, 0.0));
    check("nothing predicted", vec![sp(0, 0, Date)], vec![], (0.0, 0.0, 0.0));
    // One exact match out of two gold, two predicted: P = R = 1/2.
    check("half", vec![sp(0, 0, Set), sp(5, 6, Date)], vec![sp(0, 0, Set), sp(9, 9, Date)], (0.5, 0.5, 0.5));
    // Gold (1,3) is hit by two predictions; matching is one-to-one, so P = 1/2, R = 1.
    check(
        "one to one",
        vec![sp(1, 3, Date)],
        vec![sp(1, 1, Date), sp(3, 3, Date)],
        (0.0, 2.0 / 3.0, 2.0 / 3.0),
    );
    failures
}

fn random_spans(rng: &mut ChaCha8Rng, len: usize) -> Vec<TimexSpan> {
    let types = [TimexType::Date, TimexType::Time, TimexType::Duration, TimexType::Set];
    let mut spans = Vec::new();
    let mut i = 0;
    while i < len {
        if rng.random_bool(0.25) {
            let end = (i + rng.random_range(0..3)).min(len - 1);
            spans.push(TimexSpan::new(i, end, types[rng.random_range(0..4)]));
            i = end + 2;
        } else {
            i += 1;
        }
    }
    spans
}

/// Counts of violated scorer properties over random span sets:
/// strict ≤ relaxed and invariance of F1 under swapping gold and prediction.
pub fn scorer_properties(cases: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut order, mut symmetry) = (0, 0);
    for _ in 0..cases {
        let docs = rng.random_range(1..4);
        let gold: Vec<DocumentSpans> = (0..docs).map(|d| DocumentSpans::new(format!("d{d}"), random_spans(&mut rng, 15))).collect();
        let pred: Vec<DocumentSpans> = (0..docs).map(|d| DocumentSpans::new(format!("d{d}"), random_spans(&mut rng, 15))).collect();
        let ab = score(&gold, &pred).unwrap();
        let ba = score(&pred, &gold).unwrap();
        if ab.strict.f1 > ab.relaxed.f1 || ab.strict.precision > ab.relaxed.precision {
            order += 1;
        }
        let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
        if !(close(ab.strict.f1, ba.strict.f1) && close(ab.relaxed.f1, ba.relaxed.f1) && close(ab.typed.f1, ba.typed.f1)) {
            symmetry += 1;
        }
    }
    (order, symmetry)
}

/// p-value of identical inputs and the gap between the Monte-Carlo estimate
/// (10k iterations) and the exact sign-flip enumeration for n = 10.
pub fn permutation_check(seed: u64) -> (f64, f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..10).map(|_| rng.random_range(0.3..1.0)).collect();
    let b: Vec<f64> = a.iter().map(|x| (x - rng.random_range(-0.15..0.3)).clamp(0.0, 1.0)).collect();
    let identical = paired_permutation_test(&a, &a, 10_000, seed).unwrap();

    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let observed = (d.iter().sum::<f64>() / 10.0).abs();
    let mut hits = 0;
    for mask in 0u32..1024 {
        let s: f64 = d
            .iter()
            .enumerate()
            .map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v })
            .sum();
        if (s / 10.0).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    let exact = hits as f64 / 1024.0;
    let mc = paired_permutation_test(&a, &b, 10_000, seed).unwrap();
    (identical, exact, mc, (exact - mc).abs())
}

/// Bitwise equality of two tensors' data.
pub fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    a.data().len() == b.data().len() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}
