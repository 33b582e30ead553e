#![allow(dead_code)]

use std::collections::BTreeMap;

use fairrepair_core::dataset::{Attribute, Bag, Distribution, Row, Schema, Value};
use fairrepair_core::Rational;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::ToPrimitive;
use proptest::prelude::*;

pub const NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

pub fn schema(sizes: &[usize]) -> Schema {
    Schema::new(
        sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| Attribute::new(NAMES[i], (0..k).map(|v| v.to_string())))
            .collect(),
    )
    .unwrap()
}

/// Every assignment of `sizes`, in lexicographic order.
pub fn assignments(sizes: &[usize]) -> Vec<Row> {
    let mut out = vec![Vec::new()];
    for &k in sizes {
        out = out.into_iter().flat_map(|r| (0..k as Value).map(move |v| [r.clone(), vec![v]].concat())).collect();
    }
    out
}

pub fn dense_bag(sizes: &[usize], counts: &[u64]) -> Bag {
    let s = schema(sizes);
    let rows = assignments(sizes).into_iter().zip(counts.iter().copied()).filter(|(_, n)| *n > 0);
    Bag::from_counts(s, rows).unwrap()
}

/// Random bag over `2..=max_attrs` attributes with domains `2..=max_domain`.
pub fn arb_bag(min_attrs: usize, max_attrs: usize, max_domain: usize, max_count: u64) -> impl Strategy<Value = Bag> {
    prop::collection::vec(2..=max_domain, min_attrs..=max_attrs).prop_flat_map(move |sizes| {
        let cells: usize = sizes.iter().product();
        prop::collection::vec(0..=max_count, cells).prop_map(move |counts| dense_bag(&sizes, &counts))
    })
}

/// Random bag whose every cell has a positive count.
pub fn arb_positive_bag(min_attrs: usize, max_attrs: usize, max_domain: usize, max_count: u64) -> impl Strategy<Value = Bag> {
    prop::collection::vec(2..=max_domain, min_attrs..=max_attrs).prop_flat_map(move |sizes| {
        let cells: usize = sizes.iter().product();
        prop::collection::vec(1..=max_count, cells).prop_map(move |counts| dense_bag(&sizes, &counts))
    })
}

pub fn names(idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| NAMES[i].to_string()).collect()
}

/// Splits attribute indices by a role vector: 0 = unused, 1 = x, 2 = y, 3 = z.
pub fn split_roles(roles: &[u8], n: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let pick = |r: u8| (0..n).filter(|&i| roles[i % roles.len()] == r).collect::<Vec<_>>();
    (pick(1), pick(2), pick(3))
}

fn marginal_counts(bag: &Bag, idx: &[usize]) -> BTreeMap<Row, u64> {
    let mut m = BTreeMap::new();
    for (row, n) in bag.iter() {
        *m.entry(idx.iter().map(|&i| row[i]).collect::<Row>()).or_insert(0) += n;
    }
    m
}

/// Brute-force CI check over the full product domain:
/// `n(xyz)·n(z) = n(xz)·n(yz)` for every cell.
pub fn oracle_ci(bag: &Bag, x: &[usize], y: &[usize], z: &[usize]) -> bool {
    let schema = bag.schema();
    let all: Vec<usize> = x.iter().chain(y).chain(z).copied().collect();
    let xz: Vec<usize> = x.iter().chain(z).copied().collect();
    let yz: Vec<usize> = y.iter().chain(z).copied().collect();
    let nxyz = marginal_counts(bag, &all);
    let nxz = marginal_counts(bag, &xz);
    let nyz = marginal_counts(bag, &yz);
    let nz = marginal_counts(bag, z);
    let sizes: Vec<usize> = all.iter().map(|&i| schema.domain_size(i)).collect();
    let get = |m: &BTreeMap<Row, u64>, r: Row| *m.get(&r).unwrap_or(&0) as u128;
    assignments(&sizes).into_iter().all(|cell| {
        let (xs, rest) = cell.split_at(x.len());
        let (ys, zs) = rest.split_at(y.len());
        let xz_key = [xs, zs].concat();
        let yz_key = [ys, zs].concat();
        get(&nxyz, cell.clone()) * get(&nz, zs.to_vec()) == get(&nxz, xz_key) * get(&nyz, yz_key)
    })
}

/// The same identity on an exact distribution.
pub fn oracle_ci_distribution(d: &Distribution, x: &[usize], y: &[usize], z: &[usize]) -> bool {
    let marg = |idx: &[usize]| {
        let mut m: BTreeMap<Row, Rational> = BTreeMap::new();
        for (row, p) in &d.probs {
            *m.entry(idx.iter().map(|&i| row[i]).collect()).or_insert_with(|| Rational::from_integer(0.into())) += p;
        }
        m
    };
    let all: Vec<usize> = x.iter().chain(y).chain(z).copied().collect();
    let xz: Vec<usize> = x.iter().chain(z).copied().collect();
    let yz: Vec<usize> = y.iter().chain(z).copied().collect();
    let (pxyz, pxz, pyz, pz) = (marg(&all), marg(&xz), marg(&yz), marg(z));
    let zero = Rational::from_integer(0.into());
    let get = |m: &BTreeMap<Row, Rational>, r: Row| m.get(&r).cloned().unwrap_or_else(|| zero.clone());
    let sizes: Vec<usize> = all.iter().map(|&i| d.schema.domain_size(i)).collect();
    assignments(&sizes).into_iter().all(|cell| {
        let (xs, rest) = cell.split_at(x.len());
        let (ys, zs) = rest.split_at(y.len());
        get(&pxyz, cell.clone()) * get(&pz, zs.to_vec()) == get(&pxz, [xs, zs].concat()) * get(&pyz, [ys, zs].concat())
    })
}

/// Smallest scale turning an exact distribution into integer counts.
pub fn integer_scale(d: &Distribution) -> u64 {
    let mut l = BigInt::from(1);
    for p in d.probs.values() {
        l = l.lcm(p.denom());
    }
    l.to_u64().expect("scale fits u64")
}
