//! Inside and Viterbi scores against brute-force enumeration.

mod oracle;

#[test]
fn inside_and_viterbi_match_enumeration() {
    let mut parsed = 0;
    for seed in 0..120 {
        match oracle::parser::check(seed) {
            Ok(p) => parsed += usize::from(p),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(parsed >= 50, "only {parsed} parsable instances");
}
