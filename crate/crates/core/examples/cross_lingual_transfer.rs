//! Zero-shot transfer: labels only in language `aa`, unlabeled text in `bb`.
//!
//! Compares adversarial alignment against the unaligned baseline on `bb` and
//! shows how much language identity is left in the features.

use tempalign::synthetic::{generate, SyntheticConfig, SyntheticLanguage};
use tempalign::tagger::{EncodedSentence, ModelConfig, TaggerModel};
use tempalign::training::{
    discriminator_accuracy, evaluate_dev, fit_probe, train, ProbeConfig, TrainConfig, TrainingData,
};

fn encode(model: &TaggerModel, langs: &[SyntheticLanguage], pick: impl Fn(&SyntheticLanguage) -> Vec<Vec<String>>) -> tempalign::Result<Vec<Vec<EncodedSentence>>> {
    langs
        .iter()
        .map(|l| pick(l).iter().map(|t| model.encode_sentence(&l.language, t, None)).collect())
        .collect()
}

fn main() -> tempalign::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // A wider language offset than the default, so the unaligned baseline
    // does not transfer perfectly.
    let langs = generate(&SyntheticConfig {
        offset_scale: 2.0,
        ..SyntheticConfig::default()
    })?;
    let (src, tgt) = (&langs[0], &langs[1]);
    let data = TrainingData {
        train: vec![src.train.clone()],
        dev: vec![src.dev.clone()],
        unlabeled: [(tgt.language.clone(), tgt.unlabeled.clone())].into(),
    };
    let spaces: Vec<_> = langs.iter().map(|l| l.space.clone()).collect();
    let base = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 15,
        disc_interval: 1,
        ..TrainConfig::default()
    };

    for lambda in [0.0, 1.0] {
        let config = TrainConfig { lambda, ..base.clone() };
        let model = TaggerModel::new(spaces.clone(), ModelConfig::from(&config))?;
        let outcome = train(model, &config, &data, None)?;
        let m = &outcome.model;
        let report = evaluate_dev(m, std::slice::from_ref(&tgt.test))?;

        let held_out: Vec<EncodedSentence> = encode(m, &langs, |l| l.test.sentences.iter().map(|s| s.tokens.clone()).collect())?
            .into_iter()
            .flatten()
            .collect();
        let pools = encode(m, &langs, |l| l.unlabeled.clone())?;
        let probe = fit_probe(
            m,
            &pools,
            &ProbeConfig {
                steps: 300,
                batch_size: 32,
                learning_rate: 3e-3,
                seed: 11,
            },
        )?;
        println!(
            "lambda {lambda}: {} relaxed F1 {:.3}  own discriminator {:.3}  fresh probe {:.3}",
            tgt.language,
            report.combined.relaxed.f1,
            discriminator_accuracy(m, &held_out)?,
            discriminator_accuracy(&probe, &held_out)?
        );
    }
    Ok(())
}
