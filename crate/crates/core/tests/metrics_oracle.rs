//! Brute-force equivalence oracle for the multi-label metrics.

mod common;

use common::metrics_exhaustive as m;

#[test]
fn exhaustive_up_to_three_samples_three_classes() {
    m::exhaustive_up_to_three_samples_three_classes();
}

#[test]
fn hand_case_is_exactly_two_thirds() {
    m::hand_case_is_exactly_two_thirds();
}
