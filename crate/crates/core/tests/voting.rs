mod common;

use tuni::ensemble::decide;
use tuni::Decision;

#[test]
fn three_of_four_marks_five_patterns_member() {
    assert_eq!(common::count_member_patterns(4, 3), 5);
}

#[test]
fn four_of_five_marks_six_patterns_member() {
    assert_eq!(common::count_member_patterns(5, 4), 6);
}

#[test]
fn threshold_boundary_counts_as_member() {
    assert_eq!(decide(&[true, true, true, false], 3), (3, Decision::Member));
    assert_eq!(
        decide(&[true, true, false, false], 3),
        (2, Decision::NonMember)
    );
    assert_eq!(
        decide(&[true, true, true, true, false], 4),
        (4, Decision::Member)
    );
    assert_eq!(
        decide(&[true, true, true, false, false], 4),
        (3, Decision::NonMember)
    );
}
