//! Metrics, retrieval, statistics and baseline checked against reference
//! computations.

mod common;

use common::checks;

#[test]
fn stats_table_matches_published_counters() {
    checks::stats_arithmetic().unwrap();
}

#[test]
fn ndcg_matches_brute_force() {
    checks::ndcg_oracle(1000).unwrap();
}

#[test]
fn bm25_matches_reference() {
    checks::bm25_oracle(100).unwrap();
}

#[test]
fn filter_and_dedup_properties() {
    checks::filter_dedup_properties(1000).unwrap();
}

#[test]
fn iterative_arity() {
    checks::iterative_arity().unwrap();
}

#[test]
fn baseline_gradient_fit_and_ranking() {
    println!("{}", checks::baseline().unwrap());
}
