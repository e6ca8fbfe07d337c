//! Zero-shot transfer on the synthetic corpora: labels in the first
//! language, unlabeled text in the second.

use tempalign::synthetic::{generate, SyntheticConfig, SyntheticLanguage};
use tempalign::tagger::{EncodedSentence, ModelConfig, TaggerModel};
use tempalign::training::{discriminator_accuracy, evaluate_dev, fit_probe, train, ProbeConfig, TrainConfig, TrainingData};

pub const SEEDS: [u64; 3] = [1, 2, 3];
pub const LAMBDA: f64 = 1.0;

/// With the default language offset an unaligned tagger already transfers
/// almost perfectly, so these corpora push the languages further apart.
pub fn transfer_corpora() -> Vec<SyntheticLanguage> {
    generate(&SyntheticConfig {
        offset_scale: 2.0,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

pub fn transfer_config(lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 15,
        disc_interval: 1,
        lambda,
        seed,
        ..TrainConfig::default()
    }
}

pub const PROBE: ProbeConfig = ProbeConfig {
    steps: 300,
    batch_size: 32,
    learning_rate: 1e-3,
    seed: 11,
};

#[derive(Debug, Clone)]
pub struct TransferSummary {
    pub aligned_runs: Vec<f64>,
    pub baseline_runs: Vec<f64>,
    /// Medians over seeds.
    pub aligned_f1: f64,
    pub baseline_f1: f64,
    /// Held-out accuracy of the adversarial model's own discriminator.
    pub adversarial_disc_acc: f64,
    /// Held-out accuracy of a probe fitted on the unaligned model's features.
    pub probe_acc: f64,
}

struct Run {
    target_f1: f64,
    own_disc: f64,
    probe: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn encode(model: &TaggerModel, langs: &[SyntheticLanguage], unlabeled: bool) -> Vec<Vec<EncodedSentence>> {
    langs
        .iter()
        .map(|l| {
            let tokens: Vec<&Vec<String>> = if unlabeled {
                l.unlabeled.iter().collect()
            } else {
                l.test.sentences.iter().map(|s| &s.tokens).collect()
            };
            tokens
                .into_iter()
                .map(|t| model.encode_sentence(&l.language, t, None).unwrap())
                .collect()
        })
        .collect()
}

fn run(langs: &[SyntheticLanguage], lambda: f64, seed: u64, probe: bool) -> Run {
    let (src, tgt) = (&langs[0], &langs[1]);
    let data = TrainingData {
        train: vec![src.train.clone()],
        dev: vec![src.dev.clone()],
        unlabeled: [(tgt.language.clone(), tgt.unlabeled.clone())].into(),
    };
    let config = transfer_config(lambda, seed);
    let spaces = langs.iter().map(|l| l.space.clone()).collect();
    let model = TaggerModel::new(spaces, ModelConfig::from(&config)).unwrap();
    let m = train(model, &config, &data, None).unwrap().model;
    let target_f1 = evaluate_dev(&m, std::slice::from_ref(&tgt.test)).unwrap().combined.relaxed.f1;
    let held_out: Vec<EncodedSentence> = encode(&m, langs, false).into_iter().flatten().collect();
    let own_disc = discriminator_accuracy(&m, &held_out).unwrap();
    let probe = if probe {
        let fitted = fit_probe(&m, &encode(&m, langs, true), &PROBE).unwrap();
        discriminator_accuracy(&fitted, &held_out).unwrap()
    } else {
        f64::NAN
    };
    Run {
        target_f1,
        own_disc,
        probe,
    }
}

pub fn transfer_experiment(langs: &[SyntheticLanguage]) -> TransferSummary {
    let aligned: Vec<Run> = SEEDS.iter().map(|&s| run(langs, LAMBDA, s, false)).collect();
    let baseline: Vec<Run> = SEEDS.iter().map(|&s| run(langs, 0.0, s, true)).collect();
    let aligned_runs: Vec<f64> = aligned.iter().map(|r| r.target_f1).collect();
    let baseline_runs: Vec<f64> = baseline.iter().map(|r| r.target_f1).collect();
    TransferSummary {
        aligned_f1: median(aligned_runs.clone()),
        baseline_f1: median(baseline_runs.clone()),
        aligned_runs,
        baseline_runs,
        adversarial_disc_acc: median(aligned.iter().map(|r| r.own_disc).collect()),
        probe_acc: median(baseline.iter().map(|r| r.probe).collect()),
    }
}
