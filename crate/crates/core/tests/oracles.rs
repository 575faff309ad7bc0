mod common;

use common::oracles::*;
use dams::corpus::SynthSpec;

#[test]
fn rouge_matches_brute_force_counting() {
    let r = rouge_against_oracle(200, 42);
    assert!(r.max_deviation <= 1e-12, "{r:?}");
    assert!(r.hand_examples_exact);
}

#[test]
fn brute_force_oracles_agree_with_hand_counts() {
    assert_eq!(brute_lcs(&["a", "b", "c", "b"], &["b", "c", "b", "a"]), 3);
    assert!((brute_rouge_n(&["the", "cat", "sat"], &["the", "cat"], 2) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn noise_rates_match_the_configuration() {
    let r = noise_statistics(&SynthSpec::default(), 1);
    assert!(r.noised_tokens >= 10_000 && r.units >= 5_000, "{r:?}");
    assert!((0.14..=0.16).contains(&r.mask_fraction()), "{r:?}");
    assert!((0.18..=0.22).contains(&r.untouched_fraction()), "{r:?}");
}

#[test]
fn sources_are_mixed_one_to_one_to_one() {
    let c = source_counts([2000, 1700, 900], 4, 3000, 1);
    assert_eq!(c, [12_000; 3]);
}

#[test]
fn logged_total_is_the_component_sum() {
    let bench = small_bench();
    assert!(total_arithmetic_gap(&bench, 30, 0.1) <= 1e-9);
    assert!(total_arithmetic_gap(&bench, 10, 0.0) <= 1e-9);
}

#[test]
fn alpha_zero_leaves_task_gradients_unchanged() {
    assert!(alpha_zero_gradient_gap(&small_bench()) <= 1e-9);
}

#[test]
fn resume_is_bit_exact() {
    let (a, b) = resume_states(&small_bench(), 12, 5);
    assert!(a == b);
}
