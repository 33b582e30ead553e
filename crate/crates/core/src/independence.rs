//! Conditional independence on empirical distributions.
//!
//! All tests are exact: `Pr(x | y, z) = Pr(x | z)` on supported cells is
//! checked through the integer identity `n(xyz)·n(z) = n(xz)·n(yz)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::dataset::{pick, Bag, Row, Schema};
use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// `(x ⫫ y | z)` over attribute names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CiStatement {
    pub x: Vec<String>,
    pub y: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
}

/// A [`CiStatement`] resolved to sorted attribute indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedCi {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
}

impl CiStatement {
    pub fn new<S: AsRef<str>>(x: &[S], y: &[S], z: &[S]) -> Self {
        let own = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect();
        CiStatement { x: own(x), y: own(y), z: own(z) }
    }

    pub fn resolve(&self, schema: &Schema) -> Result<ResolvedCi> {
        let x = schema.indices(&self.x)?;
        let y = schema.indices(&self.y)?;
        let z = schema.indices(&self.z)?;
        let mut seen = alloc::vec![false; schema.len()];
        for &i in x.iter().chain(&y).chain(&z) {
            if seen[i] {
                return Err(Error::OverlappingSets(schema.attribute(i).name.clone()));
            }
            seen[i] = true;
        }
        Ok(ResolvedCi { x, y, z })
    }

    pub fn is_saturated(&self, schema: &Schema) -> Result<bool> {
        let r = self.resolve(schema)?;
        Ok(r.x.len() + r.y.len() + r.z.len() == schema.len())
    }

    /// Like [`CiStatement::resolve`] but also demands that the three sets
    /// cover the schema.
    pub fn resolve_saturated(&self, schema: &Schema) -> Result<ResolvedCi> {
        let r = self.resolve(schema)?;
        let mut seen = alloc::vec![false; schema.len()];
        for &i in r.x.iter().chain(&r.y).chain(&r.z) {
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::NotSaturated(schema.attribute(i).name.clone()));
        }
        Ok(r)
    }
}

/// Counts inside one `z` value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stratum {
    pub total: u64,
    pub x: BTreeMap<Row, u64>,
    pub y: BTreeMap<Row, u64>,
    pub xy: BTreeMap<(Row, Row), u64>,
}

/// Groups a bag by its `z` projection.
pub fn strata(bag: &Bag, ci: &ResolvedCi) -> BTreeMap<Row, Stratum> {
    let mut out: BTreeMap<Row, Stratum> = BTreeMap::new();
    for (row, n) in bag.iter() {
        let s = out.entry(pick(row, &ci.z)).or_default();
        let xv = pick(row, &ci.x);
        let yv = pick(row, &ci.y);
        s.total += n;
        *s.x.entry(xv.clone()).or_insert(0) += n;
        *s.y.entry(yv.clone()).or_insert(0) += n;
        *s.xy.entry((xv, yv)).or_insert(0) += n;
    }
    out
}

impl Stratum {
    fn count(&self, x: &Row, y: &Row) -> u64 {
        self.xy.get(&(x.clone(), y.clone())).copied().unwrap_or(0)
    }

    /// `n(xy)·n - n(x)·n(y)` for every pair of observed marginals.
    fn residuals(&self) -> impl Iterator<Item = (&Row, u64, &Row, u64, i128)> + '_ {
        self.x.iter().flat_map(move |(xv, &nx)| {
            self.y.iter().map(move |(yv, &ny)| {
                let nxy = self.count(xv, yv);
                let d = nxy as i128 * self.total as i128 - nx as i128 * ny as i128;
                (xv, nx, yv, ny, d)
            })
        })
    }

    /// True when every residual is zero.
    pub fn is_independent(&self) -> bool {
        self.residuals().all(|r| r.4 == 0)
    }
}

/// Largest `|Pr(x|y,z) - Pr(x|z)|` over cells with `Pr(y,z) > 0`.
pub fn ci_gap(bag: &Bag, ci: &CiStatement) -> Result<Rational> {
    let r = ci.resolve(bag.schema())?;
    Ok(resolved_gap(bag, &r))
}

pub(crate) fn resolved_gap(bag: &Bag, r: &ResolvedCi) -> Rational {
    let mut best = rational::zero();
    if r.x.is_empty() || r.y.is_empty() {
        return best;
    }
    for s in strata(bag, r).values() {
        for (_, _, _, ny, d) in s.residuals() {
            if d != 0 {
                // |n(xyz)/n(yz) - n(xz)/n(z)| = |d| / (n(yz)·n(z))
                let gap = Rational::new(BigInt::from(d.unsigned_abs()), BigInt::from(ny as u128 * s.total as u128));
                if gap > best {
                    best = gap;
                }
            }
        }
    }
    best
}

/// Whether `ci` holds on the empirical distribution of `bag` within
/// `tolerance` (max-norm over conditional-probability gaps).
pub fn holds_ci(bag: &Bag, ci: &CiStatement, tolerance: &Rational) -> Result<bool> {
    let r = ci.resolve(bag.schema())?;
    Ok(holds_resolved(bag, &r, tolerance))
}

pub(crate) fn holds_resolved(bag: &Bag, r: &ResolvedCi, tolerance: &Rational) -> bool {
    if r.x.is_empty() || r.y.is_empty() {
        return true;
    }
    if num_traits::Zero::is_zero(tolerance) {
        return strata(bag, r).values().all(Stratum::is_independent);
    }
    resolved_gap(bag, r) <= *tolerance
}

/// `(1+r)·ln(1+r) - r`, accurate near zero and positive for `r ≠ 0`.
fn divergence_term(r: f64) -> f64 {
    if r <= -1.0 {
        return 1.0;
    }
    if r.abs() < 1e-4 {
        let r2 = r * r;
        r2 / 2.0 - r2 * r / 6.0 + r2 * r2 / 12.0
    } else {
        (1.0 + r) * libm::log1p(r) - r
    }
}

/// `I(X;Y|Z)` in nats on the empirical distribution.
///
/// Written as a sum of non-negative terms `q·((1+r)ln(1+r) - r)` with
/// `q = n(xz)n(yz)/n(z)` and `r = (n(xyz) - q)/q`, so the result is exactly
/// zero iff the independence holds exactly.
pub fn conditional_mutual_information(bag: &Bag, ci: &CiStatement) -> Result<f64> {
    let r = ci.resolve(bag.schema())?;
    Ok(resolved_cmi(bag, &r))
}

pub(crate) fn resolved_cmi(bag: &Bag, r: &ResolvedCi) -> f64 {
    let total = bag.total();
    if total == 0 || r.x.is_empty() || r.y.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for s in strata(bag, r).values() {
        for (_, nx, _, ny, d) in s.residuals() {
            if d == 0 {
                continue;
            }
            let prod = nx as f64 * ny as f64;
            let q = prod / s.total as f64;
            let ratio = d as f64 / prod;
            acc += q * divergence_term(ratio);
        }
    }
    acc / total as f64
}

/// Minimal attribute set shielding `target` from every other attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkovBoundary {
    pub target: String,
    pub boundary: Vec<String>,
}

/// Grow-Shrink on exact CI tests with the given tolerance. Attributes are
/// visited in schema order.
pub fn grow_shrink_boundary(bag: &Bag, target: &str, tolerance: &Rational) -> Result<MarkovBoundary> {
    let schema = bag.schema();
    let t = schema.index_of(target)?;
    let others: Vec<usize> = (0..schema.len()).filter(|&i| i != t).collect();
    let test = |a: usize, cond: &[usize]| {
        let mut z = cond.to_vec();
        z.sort_unstable();
        holds_resolved(bag, &ResolvedCi { x: alloc::vec![t], y: alloc::vec![a], z }, tolerance)
    };

    let mut mb: Vec<usize> = Vec::new();
    loop {
        let mut grew = false;
        for &a in &others {
            if !mb.contains(&a) && !test(a, &mb) {
                mb.push(a);
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    let mut i = 0;
    while i < mb.len() {
        let a = mb[i];
        let rest: Vec<usize> = mb.iter().copied().filter(|&b| b != a).collect();
        if test(a, &rest) {
            mb.remove(i);
        } else {
            i += 1;
        }
    }
    mb.sort_unstable();
    Ok(MarkovBoundary {
        target: target.to_string(),
        boundary: mb.iter().map(|&i| schema.attribute(i).name.clone()).collect(),
    })
}

/// Every inclusion-minimal `B` with `(target ⫫ rest | B)` within tolerance.
/// Exponential in the schema size.
pub fn minimal_blankets(bag: &Bag, target: &str, tolerance: &Rational, max_attributes: usize) -> Result<Vec<Vec<String>>> {
    let schema = bag.schema();
    if schema.len() > max_attributes {
        return Err(Error::SchemaTooLarge { size: schema.len(), bound: max_attributes });
    }
    let t = schema.index_of(target)?;
    let others: Vec<usize> = (0..schema.len()).filter(|&i| i != t).collect();
    let mut blankets: Vec<u32> = Vec::new();
    let mut masks: Vec<u32> = (0..(1u32 << others.len())).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for m in masks {
        if blankets.iter().any(|&b| b & m == b) {
            continue;
        }
        let z: Vec<usize> = (0..others.len()).filter(|i| m >> i & 1 == 1).map(|i| others[i]).collect();
        let y: Vec<usize> = (0..others.len()).filter(|i| m >> i & 1 == 0).map(|i| others[i]).collect();
        if holds_resolved(bag, &ResolvedCi { x: alloc::vec![t], y, z }, tolerance) {
            blankets.push(m);
        }
    }
    Ok(blankets
        .into_iter()
        .map(|m| (0..others.len()).filter(|i| m >> i & 1 == 1).map(|i| schema.attribute(others[i]).name.clone()).collect())
        .collect())
}

/// Default bound on the number of attributes for [`graphoid_closure_check`].
pub const DEFAULT_GRAPHOID_BOUND: usize = 6;

type Triple = (u32, u32, u32);

/// Derivability of `conclusion` from `premises` under symmetry,
/// decomposition, weak union and contraction, plus intersection when
/// `strictly_positive` is set.
pub fn graphoid_closure_check(
    premises: &[CiStatement],
    conclusion: &CiStatement,
    strictly_positive: bool,
    bound: usize,
) -> Result<bool> {
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for s in premises.iter().chain(core::iter::once(conclusion)) {
        names.extend(s.x.iter().chain(&s.y).chain(&s.z).map(String::as_str));
    }
    if names.len() > bound || names.len() > 31 {
        return Err(Error::SchemaTooLarge { size: names.len(), bound });
    }
    let names: Vec<&str> = names.into_iter().collect();
    let mask = |v: &[String]| v.iter().fold(0u32, |m, n| m | 1 << names.iter().position(|k| k == n).unwrap());
    let encode = |s: &CiStatement| -> Result<Triple> {
        let (x, y, z) = (mask(&s.x), mask(&s.y), mask(&s.z));
        if x & y != 0 || x & z != 0 || y & z != 0 {
            return Err(Error::OverlappingSets(alloc::format!("{:?}", s)));
        }
        Ok((x, y, z))
    };

    let goal = encode(conclusion)?;
    if goal.0 == 0 || goal.1 == 0 {
        return Ok(true);
    }
    let mut known: BTreeSet<Triple> = BTreeSet::new();
    let mut queue: Vec<Triple> = Vec::new();
    for p in premises {
        let t = encode(p)?;
        if t.0 != 0 && t.1 != 0 && known.insert(t) {
            queue.push(t);
        }
    }

    let push = |t: Triple, known: &mut BTreeSet<Triple>, queue: &mut Vec<Triple>| {
        if t.0 != 0 && t.1 != 0 && known.insert(t) {
            queue.push(t);
        }
    };

    while let Some((x, y, z)) = queue.pop() {
        if known.contains(&goal) {
            return Ok(true);
        }
        push((y, x, z), &mut known, &mut queue);
        // Decomposition and weak union over proper non-empty subsets of y.
        let mut w = (y.wrapping_sub(1)) & y;
        while w != 0 {
            push((x, y & !w, z), &mut known, &mut queue);
            push((x, y & !w, z | w), &mut known, &mut queue);
            w = (w - 1) & y;
        }
        let snapshot: Vec<Triple> = known.iter().copied().collect();
        for (x2, y2, z2) in snapshot {
            if x2 != x {
                continue;
            }
            // Contraction: (x ⫫ y | z) and (x ⫫ w | z ∪ y) give (x ⫫ y ∪ w | z).
            if z2 == z | y && y2 & (y | z) == 0 {
                push((x, y | y2, z), &mut known, &mut queue);
            }
            if z == z2 | y2 && y & (y2 | z2) == 0 {
                push((x, y | y2, z2), &mut known, &mut queue);
            }
            if strictly_positive {
                // Intersection: (x ⫫ y | z ∪ w) and (x ⫫ w | z ∪ y) give (x ⫫ y ∪ w | z).
                let common = z & z2;
                if z == common | y2 && z2 == common | y && y & y2 == 0 {
                    push((x, y | y2, common), &mut known, &mut queue);
                }
            }
        }
    }
    Ok(known.contains(&goal))
}

/// Which of `S⫫O|Y`, `S⫫Y|O` and `S⫫Y` hold on a bag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpossibilityReport {
    pub s_indep_o_given_y: bool,
    pub s_indep_y_given_o: bool,
    pub s_indep_y: bool,
    /// The two conditional statements hold while the marginal one fails.
    /// The implication needs a strictly positive joint of `O` and `Y`, so
    /// this can be set on degenerate data.
    pub violated: bool,
    pub positive_oy: bool,
}

pub fn impossibility_check(bag: &Bag, s: &str, o: &str, y: &str, tolerance: &Rational) -> Result<ImpossibilityReport> {
    if s == o || s == y || o == y {
        return Err(Error::OverlappingSets(alloc::format!("{s}, {o}, {y}")));
    }
    let so_y = holds_ci(bag, &CiStatement::new(&[s], &[o], &[y]), tolerance)?;
    let sy_o = holds_ci(bag, &CiStatement::new(&[s], &[y], &[o]), tolerance)?;
    let sy = holds_ci(bag, &CiStatement::new(&[s], &[y], &[]), tolerance)?;
    let schema = bag.schema();
    let oy = bag.project(&[o, y])?;
    let cells = schema.domain_size(schema.index_of(o)?) * schema.domain_size(schema.index_of(y)?);
    Ok(ImpossibilityReport {
        s_indep_o_given_y: so_y,
        s_indep_y_given_o: sy_o,
        s_indep_y: sy,
        violated: so_y && sy_o && !sy,
        positive_oy: oy.distinct() == cells,
    })
}
