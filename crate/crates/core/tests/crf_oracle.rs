mod common;

use common::criteria::crf_oracle;

#[test]
fn forward_and_viterbi_match_enumeration() {
    let r = crf_oracle(200, 17);
    assert!(r.max_log_z_error < 1e-9, "{}", r.max_log_z_error);
    assert_eq!(r.viterbi_mismatches, 0);
}
