//! Recovers a hidden rotation between two embedding spaces from a dictionary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempalign::alignment::{alignment_residual, apply_alignment, mean_pair_cosine, procrustes_align, BilingualDictionary};
use tempalign::embeddings::EmbeddingSpace;
use tempalign::linalg::{matmul, orthogonality_error, random_orthogonal};
use tempalign::synthetic::{generate, SyntheticConfig};

fn main() -> tempalign::Result<()> {
    let langs = generate(&SyntheticConfig::default())?;
    let src = &langs[0].space;

    // A pivot language that is the source rotated by a random orthogonal R.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_orthogonal(src.dim(), &mut rng);
    let words: Vec<String> = src.vocab.words().map(str::to_string).collect();
    let rows: Vec<Vec<f64>> = (0..words.len())
        .map(|k| {
            let x = src.raw_row(k + 2);
            (0..src.dim()).map(|j| (0..src.dim()).map(|i| x[i] * r.get2(i, j)).sum()).collect()
        })
        .collect();
    let pivot = EmbeddingSpace::from_rows("en", words.clone(), rows)?;

    let pairs = words.iter().take(200).map(|w| (w.clone(), w.clone())).collect();
    let dict = BilingualDictionary::new(&src.language, "en", pairs);
    let a = procrustes_align(src, &pivot, &dict)?;

    // The map is column-form (y = A x), so it should equal Rᵀ.
    let rt = matmul(&r, &a.matrix)?;
    let err: f64 = (0..src.dim())
        .flat_map(|i| (0..src.dim()).map(move |j| (i, j)))
        .map(|(i, j)| (rt.get2(i, j) - if i == j { 1.0 } else { 0.0 }).powi(2))
        .sum::<f64>()
        .sqrt();
    println!("dictionary pairs      {}", dict.len());
    println!("orthogonality error   {:.2e}", orthogonality_error(&a.matrix)?);
    println!("distance to rotation  {err:.2e}");
    println!("residual              {:.2e}", alignment_residual(src, &pivot, &dict, &a)?);
    println!("mean pair cosine      {:.6}", mean_pair_cosine(src, &pivot, &dict, &a)?);

    let aligned = apply_alignment(src, &a)?;
    println!("aligned '{}' has {} words", aligned.language, aligned.vocab.word_count());
    Ok(())
}
