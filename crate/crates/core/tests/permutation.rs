mod common;

use common::criteria::permutation_check;

#[test]
fn monte_carlo_matches_exact_enumeration() {
    for seed in 0..5 {
        let (identical, exact, mc, gap) = permutation_check(seed);
        assert_eq!(identical, 1.0);
        assert!(gap < 0.02, "seed {seed}: exact {exact} mc {mc}");
    }
}
