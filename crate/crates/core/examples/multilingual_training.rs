//! Joint training on two synthetic languages with the default hyperparameters.
//!
//! Run with `RUST_LOG=info cargo run --release --example multilingual_training`.

use std::time::Instant;

use tempalign::synthetic::{generate, SyntheticConfig};
use tempalign::tagger::{ModelConfig, TaggerModel};
use tempalign::training::{evaluate_dev, train, TrainConfig, TrainingData};

fn main() -> tempalign::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let langs = generate(&SyntheticConfig::default())?;
    let config = TrainConfig::default();
    let data = TrainingData {
        train: langs.iter().map(|l| l.train.clone()).collect(),
        dev: langs.iter().map(|l| l.dev.clone()).collect(),
        unlabeled: Default::default(),
    };
    let spaces = langs.iter().map(|l| l.space.clone()).collect();
    let model = TaggerModel::new(spaces, ModelConfig::from(&config))?;

    let started = Instant::now();
    let outcome = train(model, &config, &data, None)?;
    println!(
        "best epoch {} of {} in {:.1}s",
        outcome.best_epoch,
        outcome.log.len(),
        started.elapsed().as_secs_f64()
    );
    let dev = evaluate_dev(&outcome.model, &data.dev)?;
    println!("combined dev strict F1 {:.3}", dev.combined.strict.f1);
    let tests: Vec<_> = langs.iter().map(|l| l.test.clone()).collect();
    let report = evaluate_dev(&outcome.model, &tests)?;
    for (lang, r) in &report.per_language {
        println!("{lang} test: strict {:.3} relaxed {:.3} type {:.3}", r.strict.f1, r.relaxed.f1, r.typed.f1);
    }
    println!("combined test strict F1 {:.3}", report.combined.strict.f1);
    Ok(())
}
