//! Differential test: the ladder-based book against the brute-force matcher
//! in `support/oracle.rs`.

use std::time::Instant;

#[path = "support/oracle.rs"]
mod oracle;

use oracle::run_sequence;

#[test]
fn ten_thousand_local_sequences_match_oracle() {
    let start = Instant::now();
    let reports: usize = (0..10_000u64).map(|seed| run_sequence(seed, 200, false).unwrap()).sum();
    let elapsed = start.elapsed();
    assert!(reports > 1_000_000, "sequences too quiet: {reports} reports");
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
}

#[test]
fn sequences_with_global_quotes_match_oracle() {
    for seed in 0..3_000u64 {
        run_sequence(1_000_000 + seed, 200, true).unwrap();
    }
}
