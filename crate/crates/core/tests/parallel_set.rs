//! The adaptive parallel set against exhaustive subset search.

use dico_core::conquer::adaptive_parallel_set;
use proptest::prelude::*;

fn feasible(set: &[(usize, f64)]) -> bool {
    let k = set.len() as f64;
    set.iter().all(|&(_, c)| (k + 1.0) * (1.0 - c) < 1.0)
}

/// Largest feasible subset; among those, the largest confidence sum.
fn exhaustive(list: &[(usize, f64)]) -> (usize, f64) {
    let mut best = (0usize, 0.0f64);
    for mask in 0u32..(1 << list.len()) {
        let subset: Vec<(usize, f64)> = (0..list.len())
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| list[i])
            .collect();
        if !feasible(&subset) {
            continue;
        }
        let sum: f64 = subset.iter().map(|s| s.1).sum();
        if subset.len() > best.0 || (subset.len() == best.0 && sum > best.1) {
            best = (subset.len(), sum);
        }
    }
    best
}

fn check(list: &[(usize, f64)]) {
    let got = adaptive_parallel_set(list);
    let chosen: Vec<(usize, f64)> = got
        .iter()
        .map(|p| *list.iter().find(|e| e.0 == *p).unwrap())
        .collect();
    let (size, sum) = exhaustive(list);
    assert!(feasible(&chosen), "{list:?} -> {got:?}");
    assert_eq!(chosen.len(), size, "{list:?} -> {got:?}");
    let got_sum: f64 = chosen.iter().map(|s| s.1).sum();
    assert!((got_sum - sum).abs() < 1e-12);
    assert!(got.windows(2).all(|w| w[0] < w[1]));
}

/// Confidences that often sit on the `1 - 1/(k+1)` cut points.
fn confidence() -> impl Strategy<Value = f64> {
    prop_oneof![
        0.0..=1.0f64,
        (1usize..13).prop_map(|k| 1.0 - 1.0 / (k as f64 + 1.0)),
        Just(1.0),
        Just(0.5),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn matches_exhaustive_search(values in prop::collection::vec(confidence(), 0..=12)) {
        let list: Vec<(usize, f64)> = values.into_iter().enumerate().map(|(p, c)| (3 * p + 1, c)).collect();
        check(&list);
    }

    #[test]
    fn non_empty_when_something_exceeds_half(values in prop::collection::vec(0.6..=1.0f64, 1..=12)) {
        let list: Vec<(usize, f64)> = values.into_iter().enumerate().collect();
        prop_assert!(!adaptive_parallel_set(&list).is_empty());
    }
}

#[test]
fn worked_example() {
    let list = [(0, 0.9), (1, 0.8), (2, 0.6)];
    check(&list);
    assert_eq!(adaptive_parallel_set(&list), vec![0, 1]);
}

#[test]
fn ties_at_the_cut_prefer_smaller_positions() {
    let list = [(7, 0.7), (3, 0.7), (5, 0.7), (1, 0.7)];
    assert_eq!(adaptive_parallel_set(&list), vec![1, 3]);
}
