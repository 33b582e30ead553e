mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{arb_bag, names, schema};
use fairrepair_core::dataset::{Bag, KeyedSet, Mvd, Relation, Row, KEY_ATTRIBUTE};
use fairrepair_core::independence::{holds_ci, CiStatement};
use fairrepair_core::maxsat::{
    candidate_universe, plan_ci_repair, plan_mvd_repair, repair_ci, repair_mvd, solve_stratum, Budget, RepairOptions,
    SolverChoice,
};
use fairrepair_core::rational;
use proptest::prelude::*;

fn exact() -> RepairOptions {
    RepairOptions { budget: Budget { max_nodes: 0 }, ..RepairOptions::default() }
}

fn arb_relation(max_domain: usize) -> impl Strategy<Value = Relation> {
    prop::collection::vec(2..=max_domain, 3).prop_flat_map(|sizes| {
        let cells: usize = sizes.iter().product();
        prop::collection::vec(prop::bool::weighted(0.4), cells).prop_map(move |keep| {
            let rows = common::assignments(&sizes).into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r);
            Relation::from_rows(schema(&sizes), rows).unwrap()
        })
    })
}

type Parts = (Vec<usize>, Vec<usize>, Vec<usize>);

fn parts(rel: &Relation, x: &[usize], z: &[usize]) -> Parts {
    let n = rel.schema().len();
    let y = (0..n).filter(|i| !x.contains(i) && !z.contains(i)).collect();
    (x.to_vec(), y, z.to_vec())
}

fn proj(r: &[u32], idx: &[usize]) -> Row {
    idx.iter().map(|&i| r[i]).collect()
}

/// Per `z`, every observed x-part paired with every observed y-part.
fn oracle_universe(rows: &BTreeSet<Row>, (x, y, z): &Parts, arity: usize) -> BTreeSet<Row> {
    let mut by_z: BTreeMap<Row, (BTreeSet<Row>, BTreeSet<Row>)> = BTreeMap::new();
    for r in rows {
        let e = by_z.entry(proj(r, z)).or_default();
        e.0.insert(proj(r, x));
        e.1.insert(proj(r, y));
    }
    let mut out = BTreeSet::new();
    for (zv, (xs, ys)) in by_z {
        for xv in &xs {
            for yv in &ys {
                let mut row = vec![0; arity];
                for (k, &i) in x.iter().enumerate() {
                    row[i] = xv[k];
                }
                for (k, &i) in y.iter().enumerate() {
                    row[i] = yv[k];
                }
                for (k, &i) in z.iter().enumerate() {
                    row[i] = zv[k];
                }
                out.insert(row);
            }
        }
    }
    out
}

fn oracle_mvd(rows: &BTreeSet<Row>, p: &Parts, arity: usize) -> bool {
    oracle_universe(rows, p, arity).len() == rows.len()
}

/// Smallest `cost(subset)` over subsets of `universe` that satisfy the MVD.
fn exhaustive_min(universe: &[Row], p: &Parts, arity: usize, cost: impl Fn(&BTreeSet<Row>) -> u64) -> u64 {
    let mut best = u64::MAX;
    for mask in 0u32..(1 << universe.len()) {
        let subset: BTreeSet<Row> = universe.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| r.clone()).collect();
        if oracle_mvd(&subset, p, arity) {
            best = best.min(cost(&subset));
        }
    }
    best
}

fn roles_to_sets(roles: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let x = (0..3).filter(|&i| roles[i] == 1).collect();
    let z = (0..3).filter(|&i| roles[i] == 2).collect();
    (x, z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn universe_contains_relation_and_satisfies_mvd(rel in arb_relation(3), roles in prop::collection::vec(0u8..3, 3)) {
        let (x, z) = roles_to_sets(&roles);
        let mvd = Mvd::with_complement(rel.schema(), &names(&z), &names(&x));
        let dstar = candidate_universe(&rel, &mvd).unwrap();
        prop_assert!(rel.is_subset(&dstar));
        prop_assert!(dstar.satisfies_mvd(&mvd).unwrap());
        let p = parts(&rel, &x, &z);
        prop_assert_eq!(dstar.rows(), &oracle_universe(rel.rows(), &p, 3));
    }

    #[test]
    fn mvd_repair_is_minimal(rel in arb_relation(3), roles in prop::collection::vec(0u8..3, 3)) {
        let (x, z) = roles_to_sets(&roles);
        let mvd = Mvd::with_complement(rel.schema(), &names(&z), &names(&x));
        let p = parts(&rel, &x, &z);
        let universe: Vec<Row> = oracle_universe(rel.rows(), &p, 3).into_iter().collect();
        prop_assume!(universe.len() <= 16);
        let result = repair_mvd(&rel, &mvd, &exact()).unwrap();
        prop_assert!(result.optimal);
        let repaired: BTreeSet<Row> = result.repaired.iter().map(|(r, _)| r.clone()).collect();
        prop_assert!(oracle_mvd(&repaired, &p, 3));
        let best = exhaustive_min(&universe, &p, 3, |s| s.symmetric_difference(rel.rows()).count() as u64);
        prop_assert_eq!(result.delta, best);
    }

    #[test]
    fn solvers_agree(rel in arb_relation(4), roles in prop::collection::vec(0u8..3, 3), forbid in any::<bool>()) {
        let (x, z) = roles_to_sets(&roles);
        let mvd = Mvd::with_complement(rel.schema(), &names(&z), &names(&x));
        let rect = RepairOptions { solver: SolverChoice::Rectangle, forbid_insertions: forbid, ..exact() };
        let bnb = RepairOptions { solver: SolverChoice::BranchAndBound, forbid_insertions: forbid, ..exact() };
        let a = repair_mvd(&rel, &mvd, &rect).unwrap();
        let b = repair_mvd(&rel, &mvd, &bnb).unwrap();
        prop_assert_eq!(a.delta, b.delta);
        prop_assert!(a.optimal && b.optimal);
        if forbid {
            prop_assert_eq!(a.inserted.total(), 0);
        }
    }

    #[test]
    fn stratum_order_does_not_matter(bag in arb_bag(3, 3, 3, 2)) {
        let ci = CiStatement::new(&["A"], &["B"], &["C"]);
        let plan = plan_ci_repair(&bag, &ci).unwrap();
        let opts = exact();
        let forward = plan.solve_sequential(&opts, &|| false).unwrap();
        let n = plan.plan.strata.len();
        let mut backward: Vec<_> = (0..n).rev().map(|k| solve_stratum(&plan.plan, k, &opts, &|| false).unwrap()).collect();
        backward.reverse();
        prop_assert_eq!(plan.assemble(&backward).unwrap(), forward);
    }
}

/// Keyed set with one fresh key per tuple instead of per-row counters.
fn distinct_keys(bag: &Bag) -> KeyedSet {
    let mut k = 0;
    let mut pairs = Vec::new();
    for (row, n) in bag.iter() {
        for _ in 0..n {
            k += 1;
            pairs.push((k, row.clone()));
        }
    }
    KeyedSet::from_pairs(bag.schema().clone(), pairs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ci_repair_matches_keyed_exhaustive_search(bag in arb_bag(3, 3, 2, 2)) {
        let ci = CiStatement::new(&["A"], &["B"], &["C"]);
        let keyed = KeyedSet::from_bag(&bag).to_relation();
        // Key and X on one side, Y on the other, given Z.
        let p: Parts = (vec![0, 1], vec![2], vec![3]);
        let universe: Vec<Row> = oracle_universe(keyed.rows(), &p, 4).into_iter().collect();
        prop_assume!(universe.len() <= 16);
        let result = repair_ci(&bag, &ci, &exact()).unwrap();
        prop_assert!(result.optimal);
        prop_assert!(holds_ci(&result.repaired, &ci, &rational::zero()).unwrap());
        let best = exhaustive_min(&universe, &p, 4, |s| {
            let rel = Relation::from_rows(keyed.schema().clone(), s.iter().cloned()).unwrap();
            KeyedSet::from_relation(&rel).unwrap().to_bag().symmetric_difference_size(&bag)
        });
        prop_assert_eq!(result.delta, best);
    }

    #[test]
    fn distinct_keys_never_beat_minimal_keys(bag in arb_bag(3, 3, 2, 3)) {
        let ci = CiStatement::new(&["A"], &["B"], &["C"]);
        let minimal = repair_ci(&bag, &ci, &exact()).unwrap();
        let rel = distinct_keys(&bag).to_relation();
        let mvd = Mvd::new(&["C"], &[KEY_ATTRIBUTE, "A"], &["B"]);
        let wide = repair_mvd(&rel, &mvd, &exact()).unwrap();
        let repaired = KeyedSet::from_relation(&Relation::from_rows(rel.schema().clone(), wide.repaired.iter().map(|(r, _)| r.clone())).unwrap()).unwrap().to_bag();
        prop_assert!(holds_ci(&repaired, &ci, &rational::zero()).unwrap());
        prop_assert!(repaired.symmetric_difference_size(&bag) >= minimal.delta);
    }
}

#[test]
fn distinct_keys_lose_where_one_insertion_suffices() {
    // Stratum counts [[2, 2], [2, 1]]: with per-tuple counters the second
    // copy of (b, a) only lacks a partner (b, b), so one insertion repairs it.
    let s = schema(&[2, 2, 2]);
    let bag = Bag::from_counts(s, [(vec![0, 0, 0], 2), (vec![0, 1, 0], 2), (vec![1, 0, 0], 2), (vec![1, 1, 0], 1)]).unwrap();
    let ci = CiStatement::new(&["A"], &["B"], &["C"]);
    let minimal = repair_ci(&bag, &ci, &exact()).unwrap();
    assert_eq!(minimal.delta, 1);
    let rel = distinct_keys(&bag).to_relation();
    let mvd = Mvd::new(&["C"], &[KEY_ATTRIBUTE, "A"], &["B"]);
    let wide = repair_mvd(&rel, &mvd, &exact()).unwrap();
    // Every fresh key carries a single y: drop the three y = b rows.
    assert_eq!(wide.delta, 3);
}

#[test]
fn four_row_example_beats_the_illustrated_repair() {
    let s = schema(&[2, 2, 2]);
    let bag = Bag::from_counts(s.clone(), [(vec![0, 0, 0], 3), (vec![0, 1, 0], 2), (vec![1, 0, 0], 2), (vec![1, 1, 1], 1)]).unwrap();
    let ci = CiStatement::new(&["A"], &["B"], &["C"]);
    let minimal = repair_ci(&bag, &ci, &exact()).unwrap();
    assert_eq!(minimal.delta, 2);
    // The illustrated repair (2, 2, 1, 1 in stratum c) is consistent but
    // changes three tuples.
    let shown = Bag::from_counts(s, [(vec![0, 0, 0], 2), (vec![0, 1, 0], 2), (vec![1, 0, 0], 1), (vec![1, 1, 0], 1), (vec![1, 1, 1], 1)]).unwrap();
    assert!(holds_ci(&shown, &ci, &rational::zero()).unwrap());
    assert_eq!(shown.symmetric_difference_size(&bag), 3);
}

#[test]
fn plan_of_relation_round_trips_through_assembly() {
    let s = schema(&[2, 2, 2]);
    let rel = Relation::from_rows(s, [vec![0, 0, 0], vec![0, 1, 0], vec![1, 0, 0], vec![1, 1, 1]]).unwrap();
    let plan = plan_mvd_repair(&rel, &Mvd::new(&["C"], &["A"], &["B"])).unwrap();
    let r = plan.solve_sequential(&exact(), &|| false).unwrap();
    assert_eq!(r.delta, 1);
}
