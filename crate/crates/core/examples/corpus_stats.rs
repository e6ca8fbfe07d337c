//! Writes a synthetic dataset to disk, reloads it and counts sentences and
//! temporal expressions per split.

use tempalign::corpus::{load_labeled, Split};
use tempalign::evaluation::corpus_stats;
use tempalign::synthetic::{generate, write_dataset, SyntheticConfig};

fn main() -> tempalign::Result<()> {
    let langs = generate(&SyntheticConfig::default())?;
    let dir = std::env::temp_dir().join("tempalign-stats-example");
    let files = write_dataset(&langs, &dir)?;
    println!("{:<6}{:<8}{:>22}{:>10}", "lang", "split", "sentences / TIMEX", "expected");
    for l in &langs {
        let f = &files[&l.language];
        for (split, path) in [(Split::Train, &f.train), (Split::Dev, &f.dev), (Split::Test, &f.test)] {
            let stats = corpus_stats(&load_labeled(path)?);
            let truth = l.counts[&split];
            println!(
                "{:<6}{:<8}{:>22}{:>10}",
                l.language,
                split.to_string(),
                stats.to_string(),
                format!("{}/{}", truth.sentences, truth.expressions)
            );
        }
    }
    Ok(())
}
