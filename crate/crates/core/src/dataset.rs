//! Multiset relational algebra over discrete tabular data.
//!
//! Values are stored as indices into each attribute's declared domain, so
//! row ordering is lexicographic by schema attribute order and then by
//! category index. Zero multiplicities are never stored.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Index of a category inside an attribute domain.
pub type Value = u32;
/// One value per schema attribute.
pub type Row = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub domain: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, domain: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Attribute { name: name.into(), domain: domain.into_iter().map(Into::into).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    attributes: Vec<Attribute>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::DuplicateAttribute(a.name.clone()));
            }
            if a.domain.is_empty() {
                return Err(Error::EmptyDomain(a.name.clone()));
            }
            let mut labels = BTreeSet::new();
            for v in &a.domain {
                if !labels.insert(v.as_str()) {
                    return Err(Error::InvalidParameter(format!("domain of `{}` repeats `{}`", a.name, v)));
                }
            }
        }
        Ok(Schema { attributes })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> &Attribute {
        &self.attributes[index]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Resolves names to indices, sorted ascending and deduplicated.
    pub fn indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        let mut out = names.iter().map(|n| self.index_of(n.as_ref())).collect::<Result<Vec<_>>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn domain_size(&self, index: usize) -> usize {
        self.attributes[index].domain.len()
    }

    pub fn value_of(&self, index: usize, label: &str) -> Result<Value> {
        let attr = &self.attributes[index];
        attr.domain
            .iter()
            .position(|v| v == label)
            .map(|p| p as Value)
            .ok_or_else(|| Error::ValueOutsideDomain { attribute: attr.name.clone(), value: label.to_string() })
    }

    pub fn label(&self, index: usize, value: Value) -> &str {
        &self.attributes[index].domain[value as usize]
    }

    /// Schema restricted to `indices`, in the given order.
    pub fn project(&self, indices: &[usize]) -> Schema {
        Schema { attributes: indices.iter().map(|&i| self.attributes[i].clone()).collect() }
    }

    /// Renders a row as `(label, label, ...)`.
    pub fn render(&self, row: &[Value]) -> String {
        let mut s = String::from("(");
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(self.label(i, *v));
        }
        s.push(')');
        s
    }

    pub fn check_row(&self, row: &[Value]) -> Result<()> {
        if row.len() != self.len() {
            return Err(Error::ArityMismatch { expected: self.len(), found: row.len() });
        }
        for (i, &v) in row.iter().enumerate() {
            if v as usize >= self.domain_size(i) {
                return Err(Error::ValueOutsideDomain {
                    attribute: self.attributes[i].name.clone(),
                    value: format!("#{v}"),
                });
            }
        }
        Ok(())
    }

    /// Converts category labels into a row.
    pub fn row_from_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Row> {
        if labels.len() != self.len() {
            return Err(Error::ArityMismatch { expected: self.len(), found: labels.len() });
        }
        labels.iter().enumerate().map(|(i, l)| self.value_of(i, l.as_ref())).collect()
    }

    /// Product of the domain sizes of `indices`.
    pub fn product_size(&self, indices: &[usize]) -> u128 {
        indices.iter().map(|&i| self.domain_size(i) as u128).product()
    }
}

pub(crate) fn pick(row: &[Value], indices: &[usize]) -> Row {
    indices.iter().map(|&i| row[i]).collect()
}

/// Enumerates every assignment of a mixed-radix domain in lexicographic order.
pub(crate) fn for_each_assignment(sizes: &[usize], mut f: impl FnMut(&[Value])) {
    if sizes.iter().any(|&s| s == 0) {
        return;
    }
    let mut cur: Vec<Value> = alloc::vec![0; sizes.len()];
    loop {
        f(&cur);
        let mut i = sizes.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            cur[i] += 1;
            if (cur[i] as usize) < sizes[i] {
                break;
            }
            cur[i] = 0;
        }
    }
}

/// A multiset of rows with multiplicities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    schema: Schema,
    rows: BTreeMap<Row, u64>,
}

impl Bag {
    pub fn empty(schema: Schema) -> Self {
        Bag { schema, rows: BTreeMap::new() }
    }

    pub fn from_counts(schema: Schema, counts: impl IntoIterator<Item = (Row, u64)>) -> Result<Self> {
        let mut bag = Bag::empty(schema);
        for (row, n) in counts {
            bag.add(row, n)?;
        }
        Ok(bag)
    }

    /// Builds a bag from label rows, one occurrence each.
    pub fn from_labels<S: AsRef<str>>(schema: Schema, rows: &[&[S]]) -> Result<Self> {
        let mut bag = Bag::empty(schema);
        for r in rows {
            let row = bag.schema.row_from_labels(r)?;
            bag.add(row, 1)?;
        }
        Ok(bag)
    }

    pub fn add(&mut self, row: Row, count: u64) -> Result<()> {
        self.schema.check_row(&row)?;
        if count > 0 {
            *self.rows.entry(row).or_insert(0) += count;
        }
        Ok(())
    }

    pub(crate) fn add_unchecked(&mut self, row: Row, count: u64) {
        if count > 0 {
            *self.rows.entry(row).or_insert(0) += count;
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn total(&self) -> u64 {
        self.rows.values().sum()
    }

    pub fn distinct(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, row: &[Value]) -> u64 {
        self.rows.get(row).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Row, u64)> {
        self.rows.iter().map(|(r, &n)| (r, n))
    }

    /// Empirical probability of `row`.
    pub fn probability(&self, row: &[Value]) -> Rational {
        let total = self.total();
        if total == 0 {
            return rational::zero();
        }
        Rational::new(BigInt::from(self.count(row)), BigInt::from(total))
    }

    /// Empirical distribution over the support, in row order.
    pub fn distribution(&self) -> Vec<(Row, Rational)> {
        let total = BigInt::from(self.total());
        self.rows.iter().map(|(r, &n)| (r.clone(), Rational::new(BigInt::from(n), total.clone()))).collect()
    }

    pub fn project<S: AsRef<str>>(&self, attrs: &[S]) -> Result<Bag> {
        let idx = self.schema.indices(attrs)?;
        Ok(self.project_indices(&idx))
    }

    pub(crate) fn project_indices(&self, idx: &[usize]) -> Bag {
        let mut out = Bag::empty(self.schema.project(idx));
        for (row, &n) in &self.rows {
            out.add_unchecked(pick(row, idx), n);
        }
        out
    }

    /// Rows matching every `(attribute, label)` pair.
    pub fn select<S: AsRef<str>, T: AsRef<str>>(&self, assignment: &[(S, T)]) -> Result<Bag> {
        let resolved = resolve_assignment(&self.schema, assignment)?;
        let mut out = Bag::empty(self.schema.clone());
        for (row, &n) in &self.rows {
            if resolved.iter().all(|&(i, v)| row[i] == v) {
                out.add_unchecked(row.clone(), n);
            }
        }
        Ok(out)
    }

    /// Duplicate elimination.
    pub fn support(&self) -> Relation {
        Relation { schema: self.schema.clone(), rows: self.rows.keys().cloned().collect() }
    }

    /// Every multiplicity multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Bag {
        Bag { schema: self.schema.clone(), rows: self.rows.iter().filter(|_| k > 0).map(|(r, &n)| (r.clone(), n * k)).collect() }
    }

    /// Multiset difference `self - other`, truncated at zero.
    pub fn minus(&self, other: &Bag) -> Bag {
        let mut out = Bag::empty(self.schema.clone());
        for (row, &n) in &self.rows {
            out.add_unchecked(row.clone(), n.saturating_sub(other.count(row)));
        }
        out
    }

    /// Multiset sum.
    pub fn plus(&self, other: &Bag) -> Bag {
        let mut out = self.clone();
        for (row, &n) in &other.rows {
            out.add_unchecked(row.clone(), n);
        }
        out
    }

    /// `|Δ(self, other)|` as multisets.
    pub fn symmetric_difference_size(&self, other: &Bag) -> u64 {
        self.minus(other).total() + other.minus(self).total()
    }

    /// `Σ_t |Pr_self(t) - Pr_other(t)|` over the union of supports.
    pub fn l1_distance(&self, other: &Bag) -> Rational {
        let mut keys: BTreeSet<&Row> = self.rows.keys().collect();
        keys.extend(other.rows.keys());
        let mut acc = rational::zero();
        for k in keys {
            acc += rational::abs_diff(&self.probability(k), &other.probability(k));
        }
        acc
    }

    /// Same rows under a different but equal-shaped schema, reordered so that
    /// its attributes follow `order` (names).
    pub fn reorder<S: AsRef<str>>(&self, order: &[S]) -> Result<Bag> {
        if order.len() != self.schema.len() {
            return Err(Error::ArityMismatch { expected: self.schema.len(), found: order.len() });
        }
        let idx = order.iter().map(|n| self.schema.index_of(n.as_ref())).collect::<Result<Vec<_>>>()?;
        let mut out = Bag::empty(self.schema.project(&idx));
        for (row, &n) in &self.rows {
            out.add_unchecked(pick(row, &idx), n);
        }
        Ok(out)
    }
}

pub(crate) fn resolve_assignment<S: AsRef<str>, T: AsRef<str>>(
    schema: &Schema,
    assignment: &[(S, T)],
) -> Result<Vec<(usize, Value)>> {
    assignment
        .iter()
        .map(|(a, v)| {
            let i = schema.index_of(a.as_ref())?;
            Ok((i, schema.value_of(i, v.as_ref())?))
        })
        .collect()
}

/// Exact distribution over a schema; only non-zero cells are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distribution {
    pub schema: Schema,
    pub probs: BTreeMap<Row, Rational>,
}

impl Distribution {
    pub fn total(&self) -> Rational {
        self.probs.values().fold(rational::zero(), |a, p| a + p)
    }

    /// Probability of a partial assignment given by labels.
    pub fn probability<S: AsRef<str>, T: AsRef<str>>(&self, assignment: &[(S, T)]) -> Result<Rational> {
        let resolved = resolve_assignment(&self.schema, assignment)?;
        Ok(self.probs.iter().filter(|(r, _)| resolved.iter().all(|&(i, v)| r[i] == v)).fold(rational::zero(), |a, (_, p)| a + p))
    }

    pub fn marginal<S: AsRef<str>>(&self, attrs: &[S]) -> Result<Distribution> {
        let idx = self.schema.indices(attrs)?;
        let mut probs: BTreeMap<Row, Rational> = BTreeMap::new();
        for (r, p) in &self.probs {
            let key = pick(r, &idx);
            *probs.entry(key).or_insert_with(rational::zero) += p;
        }
        Ok(Distribution { schema: self.schema.project(&idx), probs })
    }

    /// Multiplies every probability by `scale`; each result must be an integer.
    pub fn to_bag(&self, scale: u64) -> Result<Bag> {
        let s = Rational::from_integer(scale.into());
        let mut bag = Bag::empty(self.schema.clone());
        for (r, p) in &self.probs {
            let c = p * &s;
            if !c.is_integer() {
                return Err(Error::InvalidParameter(format!("{} × {} is not an integer", rational::format(p), scale)));
            }
            let n: u64 = num_traits::ToPrimitive::to_u64(c.numer())
                .ok_or_else(|| Error::InvalidParameter("count overflows u64".into()))?;
            bag.add(r.clone(), n)?;
        }
        Ok(bag)
    }
}

/// A relation under set semantics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    schema: Schema,
    rows: BTreeSet<Row>,
}

impl Relation {
    pub fn empty(schema: Schema) -> Self {
        Relation { schema, rows: BTreeSet::new() }
    }

    pub fn from_rows(schema: Schema, rows: impl IntoIterator<Item = Row>) -> Result<Self> {
        let mut rel = Relation::empty(schema);
        for r in rows {
            rel.schema.check_row(&r)?;
            rel.rows.insert(r);
        }
        Ok(rel)
    }

    pub fn from_labels<S: AsRef<str>>(schema: Schema, rows: &[&[S]]) -> Result<Self> {
        let rows = rows.iter().map(|r| schema.row_from_labels(r)).collect::<Result<Vec<_>>>()?;
        Relation::from_rows(schema, rows)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &BTreeSet<Row> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, row: &[Value]) -> bool {
        self.rows.contains(row)
    }

    pub fn is_subset(&self, other: &Relation) -> bool {
        self.rows.is_subset(&other.rows)
    }

    pub fn to_bag(&self) -> Bag {
        Bag { schema: self.schema.clone(), rows: self.rows.iter().map(|r| (r.clone(), 1)).collect() }
    }

    pub fn project<S: AsRef<str>>(&self, attrs: &[S]) -> Result<Relation> {
        let idx = self.schema.indices(attrs)?;
        Ok(self.project_indices(&idx))
    }

    pub(crate) fn project_indices(&self, idx: &[usize]) -> Relation {
        Relation { schema: self.schema.project(idx), rows: self.rows.iter().map(|r| pick(r, idx)).collect() }
    }

    pub fn select<S: AsRef<str>, T: AsRef<str>>(&self, assignment: &[(S, T)]) -> Result<Relation> {
        let resolved = resolve_assignment(&self.schema, assignment)?;
        Ok(Relation {
            schema: self.schema.clone(),
            rows: self.rows.iter().filter(|r| resolved.iter().all(|&(i, v)| r[i] == v)).cloned().collect(),
        })
    }

    /// Natural join on the attributes the two schemas share by name. The
    /// result lists the left attributes first, then the right-only ones.
    pub fn natural_join(&self, right: &Relation) -> Result<Relation> {
        let mut shared_left = Vec::new();
        let mut shared_right = Vec::new();
        let mut right_only = Vec::new();
        for (j, attr) in right.schema.attributes.iter().enumerate() {
            match self.schema.index_of(&attr.name) {
                Ok(i) => {
                    if self.schema.attributes[i].domain != attr.domain {
                        return Err(Error::IncompatibleDomains(attr.name.clone()));
                    }
                    shared_left.push(i);
                    shared_right.push(j);
                }
                Err(_) => right_only.push(j),
            }
        }
        let mut attrs = self.schema.attributes.clone();
        attrs.extend(right_only.iter().map(|&j| right.schema.attributes[j].clone()));
        let schema = Schema { attributes: attrs };

        let mut index: BTreeMap<Row, Vec<&Row>> = BTreeMap::new();
        for r in &right.rows {
            index.entry(pick(r, &shared_right)).or_default().push(r);
        }
        let mut rows = BTreeSet::new();
        for l in &self.rows {
            if let Some(matches) = index.get(&pick(l, &shared_left)) {
                for r in matches {
                    let mut out = l.clone();
                    out.extend(right_only.iter().map(|&j| r[j]));
                    rows.insert(out);
                }
            }
        }
        Ok(Relation { schema, rows })
    }

    /// `Π_{XZ}(R) ⋈ Π_{ZY}(R)`, reordered back to this relation's schema.
    pub fn mvd_join(&self, mvd: &ResolvedMvd) -> Relation {
        let mut xz: Vec<usize> = mvd.x.iter().chain(&mvd.z).copied().collect();
        xz.sort_unstable();
        let mut zy: Vec<usize> = mvd.z.iter().chain(&mvd.y).copied().collect();
        zy.sort_unstable();
        let left = self.project_indices(&xz);
        let right = self.project_indices(&zy);
        // Same schema on shared attributes by construction.
        let joined = left.natural_join(&right).expect("projections of one relation share domains");
        let order: Vec<usize> =
            self.schema.names().map(|n| joined.schema.index_of(n).expect("join keeps every attribute")).collect();
        joined.project_indices(&order)
    }

    pub fn satisfies_mvd(&self, mvd: &Mvd) -> Result<bool> {
        let resolved = mvd.resolve(&self.schema)?;
        Ok(self.satisfies_resolved(&resolved))
    }

    pub(crate) fn satisfies_resolved(&self, mvd: &ResolvedMvd) -> bool {
        // R ⊆ Π_XZ ⋈ Π_ZY always holds, so equality reduces to a size check.
        self.mvd_join(mvd).len() == self.len()
    }
}

/// Multivalued dependency `z ↠ x` (with `y` the remaining attributes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mvd {
    pub z: Vec<String>,
    pub x: Vec<String>,
    pub y: Vec<String>,
}

/// An [`Mvd`] resolved against a schema into sorted index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedMvd {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
}

impl Mvd {
    pub fn new<S: AsRef<str>>(z: &[S], x: &[S], y: &[S]) -> Self {
        let own = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect();
        Mvd { z: own(z), x: own(x), y: own(y) }
    }

    /// `z ↠ x` with `y` the complement in `schema`.
    pub fn with_complement<S: AsRef<str>>(schema: &Schema, z: &[S], x: &[S]) -> Self {
        let mentioned: BTreeSet<&str> = z.iter().chain(x).map(|s| s.as_ref()).collect();
        let y: Vec<String> = schema.names().filter(|n| !mentioned.contains(n)).map(ToString::to_string).collect();
        Mvd {
            z: z.iter().map(|s| s.as_ref().to_string()).collect(),
            x: x.iter().map(|s| s.as_ref().to_string()).collect(),
            y,
        }
    }

    pub fn resolve(&self, schema: &Schema) -> Result<ResolvedMvd> {
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
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::NotAPartition(schema.attribute(i).name.clone()));
        }
        Ok(ResolvedMvd { x, y, z })
    }
}

/// A bag turned into a set by numbering duplicate rows `1..=multiplicity`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyedSet {
    schema: Schema,
    rows: BTreeSet<(u64, Row)>,
}

/// Name of the synthetic key attribute used by [`KeyedSet::to_relation`].
pub const KEY_ATTRIBUTE: &str = "__key";

impl KeyedSet {
    pub fn from_bag(bag: &Bag) -> Self {
        let mut rows = BTreeSet::new();
        for (row, n) in bag.iter() {
            for k in 1..=n {
                rows.insert((k, row.clone()));
            }
        }
        KeyedSet { schema: bag.schema().clone(), rows }
    }

    pub fn from_pairs(schema: Schema, rows: impl IntoIterator<Item = (u64, Row)>) -> Result<Self> {
        let mut out = BTreeSet::new();
        for (k, r) in rows {
            schema.check_row(&r)?;
            if k == 0 {
                return Err(Error::InvalidParameter("keys start at 1".into()));
            }
            out.insert((k, r));
        }
        Ok(KeyedSet { schema, rows: out })
    }

    /// Drops the key and counts multiplicities.
    pub fn to_bag(&self) -> Bag {
        let mut bag = Bag::empty(self.schema.clone());
        for (_, row) in &self.rows {
            bag.add_unchecked(row.clone(), 1);
        }
        bag
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &BTreeSet<(u64, Row)> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_key(&self) -> u64 {
        self.rows.iter().map(|(k, _)| *k).max().unwrap_or(0)
    }

    /// The keyed set as a plain relation whose first attribute is
    /// [`KEY_ATTRIBUTE`] with domain `"1"..=max_key`.
    pub fn to_relation(&self) -> Relation {
        let max = self.max_key().max(1);
        let mut attrs = Vec::with_capacity(self.schema.len() + 1);
        attrs.push(Attribute { name: KEY_ATTRIBUTE.to_string(), domain: (1..=max).map(|k| format!("{k}")).collect() });
        attrs.extend(self.schema.attributes.iter().cloned());
        let rows = self
            .rows
            .iter()
            .map(|(k, r)| {
                let mut out = Vec::with_capacity(r.len() + 1);
                out.push((*k - 1) as Value);
                out.extend_from_slice(r);
                out
            })
            .collect();
        Relation { schema: Schema { attributes: attrs }, rows }
    }

    /// Inverse of [`KeyedSet::to_relation`].
    pub fn from_relation(rel: &Relation) -> Result<Self> {
        let key = rel.schema.index_of(KEY_ATTRIBUTE)?;
        let rest: Vec<usize> = (0..rel.schema.len()).filter(|&i| i != key).collect();
        let schema = rel.schema.project(&rest);
        let rows = rel.rows.iter().map(|r| (r[key] as u64 + 1, pick(r, &rest))).collect();
        Ok(KeyedSet { schema, rows })
    }
}

/// Bag to keyed set with minimal keys.
pub fn to_keyed_set(bag: &Bag) -> KeyedSet {
    KeyedSet::from_bag(bag)
}

/// Keyed set back to a bag; keys need not be contiguous.
pub fn from_keyed_set(ks: &KeyedSet) -> Bag {
    ks.to_bag()
}
