mod common;

use common::gradcheck::{check_full_loss, check_primitives, TOLERANCE};

#[test]
fn every_primitive_matches_finite_differences() {
    let results = check_primitives();
    assert!(results.len() >= 20);
    for r in &results {
        assert!(r.passed(), "{}: relative error {:.3e} over {} coordinates", r.name, r.error, r.coordinates);
    }
}

#[test]
fn combined_pretraining_loss_matches_finite_differences() {
    let results = check_full_loss(4);
    let worst = results.iter().max_by(|a, b| a.error.total_cmp(&b.error)).unwrap();
    println!("{} tensors, worst {} at {:.3e}", results.len(), worst.name, worst.error);
    for r in &results {
        assert!(r.error <= TOLERANCE, "{}: relative error {:.3e}", r.name, r.error);
    }
    assert!(results.iter().any(|r| r.name.contains("critic")));
}
