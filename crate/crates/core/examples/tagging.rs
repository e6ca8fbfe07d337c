//! Trains a small tagger, saves it, reloads the checkpoint and tags text.

use tempalign::synthetic::{generate, SyntheticConfig};
use tempalign::tagger::{checkpoint, ModelConfig, TaggerModel};
use tempalign::training::{train, TrainConfig, TrainingData};

fn main() -> tempalign::Result<()> {
    let langs = generate(&SyntheticConfig::default())?;
    // A larger step size than the default keeps the example quick.
    let config = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 5,
        lstm_hidden: 32,
        ..TrainConfig::default()
    };
    let data = TrainingData {
        train: langs.iter().map(|l| l.train.clone()).collect(),
        dev: langs.iter().map(|l| l.dev.clone()).collect(),
        unlabeled: Default::default(),
    };
    let spaces = langs.iter().map(|l| l.space.clone()).collect();
    let outcome = train(TaggerModel::new(spaces, ModelConfig::from(&config))?, &config, &data, None)?;

    let path = std::env::temp_dir().join("tempalign-example.ckpt");
    checkpoint::save(&outcome.model, &path)?;
    let model = checkpoint::load(&path)?;
    println!("{}", checkpoint::manifest(&model));

    for l in &langs {
        let sentence = &l.test.sentences[0];
        let spans = model.tag_sentence(&sentence.tokens, &l.language)?;
        println!("[{}] {}", l.language, sentence.tokens.join(" "));
        for s in spans {
            println!("    {:?} {}", s.kind, sentence.tokens[s.start..=s.end].join(" "));
        }
    }
    Ok(())
}
