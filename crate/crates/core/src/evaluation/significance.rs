use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Two-sided paired permutation (sign-flip) test on per-document scores.
///
/// Each iteration flips the sign of every paired difference with probability
/// 1/2 and compares the absolute mean against the observed one. The estimate
/// `(hits + 1) / (iterations + 1)` lies in (0, 1].
pub fn paired_permutation_test(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "paired lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Contract("permutation test needs at least one pair".into()));
    }
    if iterations == 0 {
        return Err(Error::Parameter("permutation test needs at least one iteration".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    let tol = 1e-12 * (1.0 + observed);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..iterations {
        let s: f64 = diffs
            .iter()
            .map(|&d| if rng.random::<bool>() { d } else { -d })
            .sum();
        if (s / n).abs() >= observed - tol {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}
