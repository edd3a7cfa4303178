mod common;

use common::*;

fn assert_passes(o: OracleOutcome) {
    assert!(
        o.passed(),
        "{}: {:?}",
        o.name,
        &o.mismatches[..o.mismatches.len().min(5)]
    );
}

#[test]
fn knn_matches_full_sort() {
    assert_passes(check_knn(11));
}

#[test]
fn reciprocal_sets_match_membership_matrix() {
    assert_passes(check_reciprocal(12));
}

#[test]
fn triplets_satisfy_brute_force_predicate() {
    assert_passes(check_triplets(13));
}

#[test]
fn dasgupta_matches_enumeration_of_all_binary_trees() {
    assert_passes(check_dasgupta(14));
}

#[test]
fn extracted_parents_match_argmin() {
    assert_passes(check_extract(15));
}

#[test]
fn recall_matches_exhaustive_ranking() {
    assert_passes(check_recall(16));
}

#[test]
fn binary_tree_counts() {
    // (2n - 3)!! rooted binary trees on n labeled leaves
    let counts: Vec<usize> = (1..=6)
        .map(|n| all_binary_trees(&(0..n).collect::<Vec<_>>()).len())
        .collect();
    assert_eq!(counts, vec![1, 1, 3, 15, 105, 945]);
}

#[test]
fn dasgupta_reference_trees() {
    // ((a, b), (c, d))
    let t = to_induced(
        &Bin::Join(
            Box::new(Bin::Join(Box::new(Bin::Leaf(0)), Box::new(Bin::Leaf(1)))),
            Box::new(Bin::Join(Box::new(Bin::Leaf(2)), Box::new(Bin::Leaf(3)))),
        ),
        4,
    );
    let only_ab = |i: usize, j: usize| if (i, j) == (0, 1) { 1.0 } else { 0.0 };
    assert_eq!(hier::eval::dasgupta_cost(&t, only_ab).unwrap(), 2.0);
    let ab_ac = |i: usize, j: usize| {
        if (i, j) == (0, 1) || (i, j) == (0, 2) {
            1.0
        } else {
            0.0
        }
    };
    assert_eq!(hier::eval::dasgupta_cost(&t, ab_ac).unwrap(), 6.0);
    assert_eq!(hier::eval::dasgupta_cost(&t, |_, _| 0.0).unwrap(), 0.0);
}

#[test]
fn configured_recall_instance() {
    // 4 points on a line, classes {0, 2} and {1, 3}
    let pts: Vec<f64> = [0.0, 0.3, 0.7, 1.5]
        .iter()
        .flat_map(|&x| hier::geometry::exp_map_0_slice(&[x, 0.0], C))
        .collect();
    let labels = [0, 1, 0, 1];
    let got = hier::eval::recall_at_k(
        &hier::mining::DistanceMatrix::hyperbolic(&pts, 2, C),
        &labels,
        &[1, 2, 3],
    )
    .unwrap();
    let want: Vec<f64> = [1, 2, 3]
        .iter()
        .map(|&k| oracle_recall(&pts, 2, &labels, k))
        .collect();
    assert_eq!(got, want);
    // along a diameter d_H is twice the pre-image gap
    assert_eq!(got, vec![0.0, 0.75, 1.0]);
}
