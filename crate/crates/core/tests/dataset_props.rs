mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{arb_bag, names, schema, NAMES};
use fairrepair_core::dataset::{from_keyed_set, to_keyed_set, KeyedSet, Mvd, Relation, Row};
use fairrepair_core::rational;
use proptest::prelude::*;

fn arb_relation() -> impl Strategy<Value = Relation> {
    prop::collection::vec(2..=3usize, 3..=4).prop_flat_map(|sizes| {
        let cells: usize = sizes.iter().product();
        prop::collection::vec(any::<bool>(), cells).prop_map(move |keep| {
            let rows = common::assignments(&sizes).into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r);
            Relation::from_rows(schema(&sizes), rows).unwrap()
        })
    })
}

/// Per `z`, the observed `(x, y)` pairs must form a full product.
fn mvd_oracle(rel: &Relation, x: &[usize], z: &[usize]) -> bool {
    let n = rel.schema().len();
    let y: Vec<usize> = (0..n).filter(|i| !x.contains(i) && !z.contains(i)).collect();
    let mut by_z: BTreeMap<Row, BTreeSet<(Row, Row)>> = BTreeMap::new();
    for r in rel.rows() {
        let p = |idx: &[usize]| idx.iter().map(|&i| r[i]).collect::<Row>();
        by_z.entry(p(z)).or_default().insert((p(x), p(&y)));
    }
    by_z.values().all(|pairs| {
        let xs: BTreeSet<&Row> = pairs.iter().map(|p| &p.0).collect();
        let ys: BTreeSet<&Row> = pairs.iter().map(|p| &p.1).collect();
        pairs.len() == xs.len() * ys.len()
    })
}

proptest! {
    #[test]
    fn keyed_round_trip(bag in arb_bag(1, 3, 3, 4)) {
        let keyed = to_keyed_set(&bag);
        prop_assert_eq!(keyed.len() as u64, bag.total());
        prop_assert_eq!(from_keyed_set(&keyed), bag.clone());
        let rel = keyed.to_relation();
        prop_assert_eq!(KeyedSet::from_relation(&rel).unwrap(), keyed);
    }

    #[test]
    fn mvd_matches_join_and_oracle(rel in arb_relation(), roles in prop::collection::vec(0u8..3, 4)) {
        let n = rel.schema().len();
        let x: Vec<usize> = (0..n).filter(|&i| roles[i] == 1).collect();
        let z: Vec<usize> = (0..n).filter(|&i| roles[i] == 2).collect();
        let mvd = Mvd::with_complement(rel.schema(), &names(&z), &names(&x));
        let holds = rel.satisfies_mvd(&mvd).unwrap();
        prop_assert_eq!(holds, mvd_oracle(&rel, &x, &z));
        // R equals the join of its two projections exactly when the MVD holds.
        let y: Vec<usize> = (0..n).filter(|i| !x.contains(i) && !z.contains(i)).collect();
        let left = rel.project(&names(&[x.clone(), z.clone()].concat())).unwrap();
        let right = rel.project(&names(&[z.clone(), y.clone()].concat())).unwrap();
        let joined = left.natural_join(&right).unwrap();
        prop_assert_eq!(joined.len() == rel.len(), holds);
        prop_assert!(rel.len() <= joined.len());
    }

    #[test]
    fn probabilities_sum_to_one(bag in arb_bag(1, 3, 3, 5)) {
        prop_assume!(bag.total() > 0);
        let sum = bag.distribution().into_iter().fold(rational::zero(), |a, (_, p)| a + p);
        prop_assert_eq!(sum, rational::one());
    }

    #[test]
    fn selection_partitions_the_bag(bag in arb_bag(1, 3, 3, 5), attr in 0usize..3) {
        let attr = attr % bag.schema().len();
        let name = NAMES[attr];
        let mut total = 0;
        for v in 0..bag.schema().domain_size(attr) {
            let part = bag.select(&[(name, v.to_string())]).unwrap();
            total += part.total();
        }
        prop_assert_eq!(total, bag.total());
        prop_assert_eq!(bag.project(&[name]).unwrap().total(), bag.total());
    }
}
