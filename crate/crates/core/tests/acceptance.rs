//! Acceptance run: every criterion prints one PASS/FAIL line, the process
//! fails if any criterion does.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::criteria::{crf_oracle, permutation_check, procrustes_recovery, scorer_examples, scorer_properties, update_rule};
use common::transfer::{transfer_corpora, transfer_experiment, TransferSummary};
use tempalign::cli::{execute, Command};
use tempalign::corpus::Split;
use tempalign::evaluation::CorpusStats;
use tempalign::synthetic::{generate, write_dataset, SyntheticConfig, SyntheticLanguage};
use tempalign::tagger::{checkpoint, ModelConfig, TaggerModel};
use tempalign::training::{evaluate_dev, train, TrainConfig, TrainingData};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn crf() -> Verdict {
    let started = Instant::now();
    let r = crf_oracle(200, 17);
    let secs = started.elapsed().as_secs_f64();
    verdict(
        r.max_log_z_error < 1e-9 && r.viterbi_mismatches == 0 && secs < 5.0,
        format!(
            "{} instances, max |logZ error| {:.2e}, Viterbi mismatches {}, {secs:.2}s",
            r.instances, r.max_log_z_error, r.viterbi_mismatches
        ),
    )
}

fn gradients() -> Verdict {
    use common::{max_relative_error, max_relative_error_scaled, random_sentence, tiny_model};
    use rand::SeedableRng;
    use tempalign::math::{Tape, Var};
    use tempalign::tagger::EncodedSentence;

    fn project<'a>(tape: &mut Tape<'a>, x: Var) -> Var {
        let n = tape.value(x).len();
        let shape = tape.value(x).shape().to_vec();
        let r: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let r = tape.constant(tempalign::math::Tensor::new(shape, r).unwrap());
        let y = tape.mul(x, r).unwrap();
        tape.sum(y)
    }
    fn disc<'a>(m: &'a TaggerModel, tape: &mut Tape<'a>, s: &[EncodedSentence]) -> Var {
        let refs: Vec<&EncodedSentence> = s.iter().collect();
        let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
        let z = m.discriminator_logits_on_tape(tape, f, 0.3).unwrap();
        m.discriminator_loss_on_tape(tape, z, &refs).unwrap().0
    }

    let started = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..3 {
        let model = tiny_model(seed);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = vec![
            random_sentence(&model, "aa", 3, &mut rng),
            random_sentence(&model, "bb", 3, &mut rng),
        ];
        let lstm: Vec<_> = [model.ids.forward, model.ids.backward]
            .iter()
            .flat_map(|l| [l.wx, l.wh, l.b])
            .collect();
        let checks = [
            (
                "feature extractor",
                max_relative_error(&model, &model.feature_params(), &|m, tape| {
                    let refs: Vec<&EncodedSentence> = s.iter().collect();
                    let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
                    project(tape, f)
                }),
            ),
            (
                "BiLSTM",
                max_relative_error(&model, &lstm, &|m, tape| {
                    let refs: Vec<&EncodedSentence> = s.iter().collect();
                    let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
                    let h = m.encode_on_tape(tape, f, &[3, 3]).unwrap();
                    project(tape, h)
                }),
            ),
            (
                "CRF loss",
                max_relative_error(&model, &model.tagger_params(), &|m, tape| {
                    let refs: Vec<&EncodedSentence> = s.iter().collect();
                    let f = m.features_on_tape(tape, &refs, 0.0, None).unwrap();
                    let h = m.encode_on_tape(tape, f, &[3, 3]).unwrap();
                    let e = m.emissions_on_tape(tape, h).unwrap();
                    m.crf_loss_on_tape(tape, e, &refs, 0.5).unwrap()
                }),
            ),
            (
                "discriminator",
                max_relative_error(&model, &model.discriminator_params(), &|m, tape| disc(m, tape, &s)).max(
                    max_relative_error_scaled(&model, &model.feature_params(), &|m, tape| disc(m, tape, &s), -0.3),
                ),
            ),
        ];
        for (name, err) in checks {
            let e = worst.entry(name).or_insert(0.0);
            *e = e.max(err);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst.values().all(|&e| e < 1e-4) && secs < 30.0;
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, format!("max relative error: {detail}; {secs:.2}s"))
}

fn update() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.0, 0.001, 0.5] {
        let r = update_rule(lambda, 3);
        pass &= r.max_deviation < 1e-10 && r.discriminator_moved_features == (lambda > 0.0);
        parts.push(format!("lambda {lambda}: {:.1e}", r.max_deviation));
        if lambda == 0.0 {
            parts.push(format!("discriminator step left features unchanged: {}", !r.discriminator_moved_features));
        }
    }
    verdict(pass, parts.join(", "))
}

fn procrustes() -> Verdict {
    let r = procrustes_recovery(4);
    verdict(
        r.distance < 1e-4 && r.orthogonality < 1e-8 && r.noisy_cosine > 0.95,
        format!(
            "|A - R|_F {:.2e}, max |A'A - I| {:.2e}, noisy mean cosine {:.4}",
            r.distance, r.orthogonality, r.noisy_cosine
        ),
    )
}

fn scorer() -> Verdict {
    let failures = scorer_examples();
    let (order, symmetry) = scorer_properties(1000, 5);
    verdict(
        failures.is_empty() && order == 0 && symmetry == 0,
        format!("hand cases failing {failures:?}, strict > relaxed {order}/1000, asymmetric {symmetry}/1000"),
    )
}

fn permutation() -> Verdict {
    let (identical, exact, mc, gap) = permutation_check(2);
    verdict(
        identical == 1.0 && gap < 0.02,
        format!("identical p {identical}, exact p {exact:.4}, Monte-Carlo p {mc:.4}, gap {gap:.4}"),
    )
}

/// One joint training run on the synthetic corpora with the default settings.
struct JointRun {
    dev_strict: f64,
    seconds: f64,
    best_epoch: usize,
    epochs: usize,
    checkpoint: Vec<u8>,
    log: Vec<u8>,
}

fn joint_run(langs: &[SyntheticLanguage]) -> JointRun {
    let config = TrainConfig::default();
    let data = TrainingData {
        train: langs.iter().map(|l| l.train.clone()).collect(),
        dev: langs.iter().map(|l| l.dev.clone()).collect(),
        unlabeled: Default::default(),
    };
    let spaces = langs.iter().map(|l| l.space.clone()).collect();
    let started = Instant::now();
    let model = TaggerModel::new(spaces, ModelConfig::from(&config)).unwrap();
    let mut log = Vec::new();
    let outcome = train(model, &config, &data, Some(&mut log)).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let dev = evaluate_dev(&outcome.model, &data.dev).unwrap();
    JointRun {
        dev_strict: dev.combined.strict.f1,
        seconds,
        best_epoch: outcome.best_epoch,
        epochs: outcome.log.len(),
        checkpoint: checkpoint::to_bytes(&outcome.model),
        log,
    }
}

fn end_to_end(run: &JointRun) -> Verdict {
    verdict(
        run.dev_strict >= 0.9 && run.seconds < 300.0,
        format!(
            "combined dev strict F1 {:.4} (best epoch {} of {}), {:.1}s",
            run.dev_strict, run.best_epoch, run.epochs, run.seconds
        ),
    )
}

fn transfer(summary: &TransferSummary) -> Verdict {
    verdict(
        summary.aligned_f1 > summary.baseline_f1,
        format!(
            "median relaxed F1 on the target language: adversarial {:.4} vs unaligned {:.4} (per seed {} vs {})",
            summary.aligned_f1,
            summary.baseline_f1,
            rounded(&summary.aligned_runs),
            rounded(&summary.baseline_runs)
        ),
    )
}

fn rounded(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

fn collapse(summary: &TransferSummary) -> Verdict {
    let adv = (summary.adversarial_disc_acc - 0.5).abs();
    let probe = (summary.probe_acc - 0.5).abs();
    verdict(
        adv < probe,
        format!(
            "held-out accuracy: adversarial discriminator {:.4}, probe on unaligned features {:.4}",
            summary.adversarial_disc_acc, summary.probe_acc
        ),
    )
}

fn determinism(a: &JointRun, b: &JointRun) -> Verdict {
    verdict(
        a.checkpoint == b.checkpoint && a.log == b.log,
        format!(
            "checkpoints identical: {} ({} bytes), logs identical: {} ({} bytes)",
            a.checkpoint == b.checkpoint,
            a.checkpoint.len(),
            a.log == b.log,
            a.log.len()
        ),
    )
}

fn stats(langs: &[SyntheticLanguage]) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let files = write_dataset(langs, dir.path()).unwrap();
    let mut inputs = Vec::new();
    let mut expected = BTreeMap::new();
    for l in langs {
        let f = &files[&l.language];
        for (split, path) in [(Split::Train, &f.train), (Split::Dev, &f.dev), (Split::Test, &f.test)] {
            let c = l.counts[&split];
            let table = CorpusStats {
                sentences: c.sentences,
                expressions: c.expressions,
            }
            .to_string();
            expected.insert(path.display().to_string(), (l.language.clone(), table));
            inputs.push(path.clone());
        }
    }
    let mut out = Vec::new();
    execute(Command::Stats { inputs, json: false }, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut matched = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if let [file, lang, table] = cols[..] {
            if expected.get(file) == Some(&(lang.to_string(), table.to_string())) {
                matched += 1;
            }
        }
    }
    verdict(
        matched == expected.len() && text.lines().count() == expected.len() + 1,
        format!("{matched}/{} corpora match the generator counts", expected.len()),
    )
}

fn main() {
    let langs = generate(&SyntheticConfig::default()).unwrap();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!("criterion {n:>2} {name:<28} {}  {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };

    report(1, "CRF oracle", crf());
    report(2, "gradient integrity", gradients());
    report(3, "update rule", update());
    report(4, "Procrustes recovery", procrustes());
    report(5, "scorer", scorer());
    report(6, "permutation test", permutation());
    let first = joint_run(&langs);
    report(7, "synthetic multilingual", end_to_end(&first));
    let summary = transfer_experiment(&transfer_corpora());
    report(8, "cross-lingual transfer", transfer(&summary));
    report(9, "discriminator collapse", collapse(&summary));
    let second = joint_run(&langs);
    report(10, "determinism", determinism(&first, &second));
    report(11, "corpus stats", stats(&langs));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", results.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
