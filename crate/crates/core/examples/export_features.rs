//! Exports feature-extractor outputs of two languages for external projection.

use tempalign::embeddings::export_embeddings;
use tempalign::synthetic::{generate, SyntheticConfig};
use tempalign::tagger::{ModelConfig, TaggerModel};

fn main() -> tempalign::Result<()> {
    let langs = generate(&SyntheticConfig {
        dev: 20,
        ..SyntheticConfig::default()
    })?;
    let spaces = langs.iter().map(|l| l.space.clone()).collect();
    let model = TaggerModel::new(spaces, ModelConfig::default())?;
    let sentences: Vec<_> = langs.iter().flat_map(|l| l.dev.sentences.iter().cloned()).collect();
    let path = std::env::temp_dir().join("tempalign-features.tsv");
    let rows = export_embeddings(&model, &sentences, &path)?;
    println!("wrote {rows} rows to {}", path.display());
    Ok(())
}
