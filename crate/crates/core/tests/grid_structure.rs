mod common;

use gridshield::grid::{
    parse_case, GridCase, MeasurementIndexSet, MeasurementTag, ObservationMatrix, IEEE118_CASE, IEEE14_CASE,
};
use gridshield::seed;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;

fn ieee14() -> (GridCase, ObservationMatrix) {
    let case = parse_case(IEEE14_CASE).unwrap();
    let h = ObservationMatrix::build(&case).unwrap();
    (case, h)
}

/// `H` rebuilt from the branch list in exact arithmetic, so that structural
/// dependencies (e.g. an injection equal to the sum of its flows) survive.
fn exact_h(case: &GridCase) -> Vec<Vec<BigRational>> {
    let n = case.n_buses();
    let ref_idx = case.bus_index(case.slack_bus).unwrap();
    let col = |i: usize| if i < ref_idx { Some(i) } else if i > ref_idx { Some(i - 1) } else { None };
    let branches: Vec<_> = case.in_service_branches().collect();
    let mut h = vec![vec![BigRational::zero(); n - 1]; n + branches.len()];
    for (k, (_, br)) in branches.iter().enumerate() {
        let b = common::rational(br.b);
        let (f, t) = (case.bus_index(br.from).unwrap(), case.bus_index(br.to).unwrap());
        // Row of the flow b (theta_f - theta_t) and its two injection terms.
        for (bus, sign) in [(f, 1), (t, -1)] {
            if let Some(c) = col(bus) {
                let v = if sign > 0 { b.clone() } else { -b.clone() };
                h[n + k][c] += v.clone();
                h[f][c] += v.clone();
                h[t][c] -= v;
            }
        }
    }
    h
}

fn exact_rank_without(case: &GridCase, removed: &MeasurementIndexSet) -> usize {
    let rows: Vec<Vec<BigRational>> =
        exact_h(case).into_iter().enumerate().filter(|(r, _)| !removed.contains(*r)).map(|(_, row)| row).collect();
    common::exact_rank(rows)
}

#[test]
fn ieee118_counts() {
    let case = parse_case(IEEE118_CASE).unwrap();
    assert_eq!(case.n_buses(), 118);
    assert_eq!(case.branches.len(), 186);
    assert_eq!(case.generators.len(), 54);
    assert_eq!(case.load_buses().len(), 99);
    assert_eq!(case.slack_bus, 69);
    let h = ObservationMatrix::build(&case).unwrap();
    assert_eq!((h.m(), h.n_states()), (304, 117));
}

#[test]
fn ieee118_bus_degrees() {
    let case = parse_case(IEEE118_CASE).unwrap();
    let h = ObservationMatrix::build(&case).unwrap();
    let threes: Vec<usize> =
        case.buses.iter().map(|b| b.id).filter(|&b| b != 69 && h.bus_degree(b).unwrap() == 3).collect();
    assert_eq!(threes, vec![10, 73, 87, 111, 112, 116, 117]);
    assert_eq!(h.bus_degree(49).unwrap(), 22);
    let max = case.buses.iter().filter(|b| b.id != 69).map(|b| h.bus_degree(b.id).unwrap()).max();
    assert_eq!(max, Some(22));
}

#[test]
fn ieee14_branch_list_matches_published_case() {
    let (case, h) = ieee14();
    let pairs: Vec<(usize, usize)> = case.branches.iter().map(|b| (b.from, b.to)).collect();
    let expected = vec![
        (1, 2), (1, 5), (2, 3), (2, 4), (2, 5), (3, 4), (4, 5), (4, 7), (4, 9), (5, 6),
        (6, 11), (6, 12), (6, 13), (7, 8), (7, 9), (9, 10), (9, 14), (10, 11), (12, 13), (13, 14),
    ];
    assert_eq!(pairs, expected);
    assert_eq!(case.n_buses(), 14);
    assert_eq!((h.m(), h.n_states()), (34, 13));
    assert_eq!(case.generators.iter().map(|g| g.bus).collect::<Vec<_>>(), vec![1, 2, 3, 6, 8]);
}

#[test]
fn ieee14_has_no_critical_measurement() {
    let (case, h) = ieee14();
    for k in 0..h.m() {
        let removed: MeasurementIndexSet = std::iter::once(k).collect();
        assert_eq!(exact_rank_without(&case, &removed), 13, "row {k}");
        assert!(!h.is_critical(k));
    }
    assert!(h.critical_set().is_empty());
}

/// Full B row of bus `i` with the reference column restored from the zero
/// row-sum property.
fn full_b_row(case: &GridCase, h: &ObservationMatrix, bus: usize) -> Vec<f64> {
    let r = h.injection_row(bus).unwrap();
    let mut row = vec![0.0; case.n_buses()];
    let mut sum = 0.0;
    for (c, b) in h.state_buses().iter().enumerate() {
        let v = h.matrix()[(r, c)];
        row[case.bus_index(*b).unwrap()] = v;
        sum += v;
    }
    // Round-off in the sum stands in for an exact zero.
    let scale: f64 = row.iter().map(|v| v.abs()).sum();
    row[case.bus_index(h.reference_bus()).unwrap()] = if sum.abs() <= 1e-12 * scale { 0.0 } else { -sum };
    row
}

#[test]
fn injection_rows_follow_the_b_matrix() {
    for text in [IEEE14_CASE, IEEE118_CASE] {
        let case = parse_case(text).unwrap();
        let h = ObservationMatrix::build(&case).unwrap();
        for bus in &case.buses {
            let i = case.bus_index(bus.id).unwrap();
            let incident: f64 = case
                .in_service_branches()
                .filter(|(_, br)| br.from == bus.id || br.to == bus.id)
                .map(|(_, br)| br.b)
                .sum();
            let row = full_b_row(&case, &h, bus.id);
            assert!((row[i] - incident).abs() <= 1e-9 * incident.abs(), "bus {}", bus.id);
            let off: f64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
            assert!((off + incident).abs() <= 1e-9 * incident.abs(), "bus {}", bus.id);
        }
    }
}

#[test]
fn ieee14_degrees_from_topology() {
    let (case, h) = ieee14();
    for bus in case.buses.iter().map(|b| b.id) {
        let neighbors = case.neighbors(bus).unwrap();
        let row = full_b_row(&case, &h, bus);
        assert_eq!(row.iter().filter(|v| **v != 0.0).count(), neighbors.len() + 1, "bus {bus}");
        if bus == h.reference_bus() {
            continue;
        }
        // Own injection, incident flows and neighbouring injections.
        let delta = h.bus_degree(bus).unwrap();
        assert_eq!(delta, 2 * neighbors.len() + 1, "bus {bus}");
        assert!(delta >= 3);
    }
}

fn random_tree_case(seed: u64, n: usize) -> String {
    let mut rng = seed::rng(seed, "tree", 0);
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(&mut rng);
    let branches: Vec<String> = (1..n)
        .map(|k| {
            let parent = order[rng.random_range(0..k)];
            let b = rng.random_range(1.0..20.0);
            format!(r#"{{"from":{parent},"to":{},"b":{b}}}"#, order[k])
        })
        .collect();
    let buses: Vec<String> = (1..=n).map(|i| format!(r#"{{"id":{i},"pd":0.1}}"#)).collect();
    format!(
        r#"{{"slack_bus":1,"buses":[{}],"branches":[{}],"generators":[{{"bus":1,"pmax":10.0}}]}}"#,
        buses.join(","),
        branches.join(",")
    )
}

#[test]
fn spanning_tree_flows_are_two_terminal_and_critical() {
    for seed in 0..20 {
        let case = parse_case(&random_tree_case(seed, 5)).unwrap();
        let h = ObservationMatrix::build(&case).unwrap();
        let injections: MeasurementIndexSet = (0..case.n_buses()).collect();
        for (r, tag) in h.tags().iter().enumerate() {
            let MeasurementTag::Flow { from, to, .. } = *tag else { continue };
            let nnz = h.matrix().row(r).iter().filter(|v| **v != 0.0).count();
            let touches_ref = from == h.reference_bus() || to == h.reference_bus();
            // The reference angle has no column, so its entry is dropped.
            assert_eq!(nnz, if touches_ref { 1 } else { 2 });
            let mut removed = injections.clone();
            removed.insert(r);
            assert!(!h.observable_after_mask(&removed), "tree edge {r} must be critical");
        }
        assert!(h.observable_after_mask(&injections));
    }
}

#[test]
fn mask_observability_matches_exact_rank() {
    let (case, h) = ieee14();
    let mut unobservable = 0;
    for s in 0..100u64 {
        let mut rng = seed::rng(s, "mask-oracle", 0);
        // Half the draws are the nominal 10% masks, half are heavy masks that
        // can break observability.
        let ratio = if s % 2 == 0 { 0.1 } else { rng.random_range(0.5..0.75) };
        let count = (ratio * h.m() as f64).round() as usize;
        let mut rows: Vec<usize> = (0..h.m()).collect();
        rows.shuffle(&mut rng);
        let mask: MeasurementIndexSet = rows[..count].iter().cloned().collect();
        let oracle = exact_rank_without(&case, &mask) == h.n_states();
        assert_eq!(h.observable_after_mask(&mask), oracle, "seed {s}");
        unobservable += usize::from(!oracle);
    }
    assert!(unobservable > 0, "heavy masks should produce some unobservable cases");
}

#[test]
fn trivial_masks() {
    let (_, h) = ieee14();
    assert!(h.observable_after_mask(&MeasurementIndexSet::new()));
    assert!(!h.observable_after_mask(&(0..h.m()).collect()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unobservability_is_monotone(base in proptest::collection::btree_set(0usize..34, 0..28),
                                   extra in proptest::collection::btree_set(0usize..34, 0..10)) {
        let (_, h) = ieee14();
        let d: MeasurementIndexSet = base.iter().cloned().collect();
        let superset: BTreeSet<usize> = base.union(&extra).cloned().collect();
        let d2: MeasurementIndexSet = superset.into_iter().collect();
        if !h.observable_after_mask(&d) {
            prop_assert!(!h.observable_after_mask(&d2));
        }
    }
}
