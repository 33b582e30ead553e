//! Discrete causal DAGs with exact conditional probability tables.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::dataset::Distribution;
use crate::dataset::{for_each_assignment, Attribute, Bag, Row, Schema, Value};
use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// Default cap on the number of joint cells materialized at once.
pub const DEFAULT_JOINT_CAP: u128 = 1 << 22;
/// Exhaustive justifiable-fairness limits.
pub const MAX_FREE_VARIABLES: usize = 10;
pub const MAX_CONTEXTS: u128 = 1_000_000;

/// One node as supplied by the caller. `cpt[r][v]` is
/// `Pr(node = v | parents = r-th assignment)`, parent assignments listed in
/// lexicographic order of the parents as declared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub domain: Vec<String>,
    pub parents: Vec<String>,
    pub cpt: Vec<Vec<Rational>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalModel {
    schema: Schema,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    topo: Vec<usize>,
    cpt: Vec<Vec<Vec<Rational>>>,
}

impl CausalModel {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self> {
        let schema = Schema::new(nodes.iter().map(|n| Attribute { name: n.name.clone(), domain: n.domain.clone() }).collect())?;
        let mut parents = Vec::with_capacity(nodes.len());
        let mut children = alloc::vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            let mut ps = Vec::new();
            for p in &n.parents {
                let j = schema.index_of(p)?;
                if ps.contains(&j) {
                    return Err(Error::InvalidCpt { variable: n.name.clone(), reason: format!("parent `{p}` listed twice") });
                }
                if j == i {
                    return Err(Error::Cyclic(n.name.clone()));
                }
                ps.push(j);
                children[j].push(i);
            }
            parents.push(ps);
        }
        let topo = topological_order(&parents).map_err(|i| Error::Cyclic(schema.attribute(i).name.clone()))?;

        let mut cpt = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.into_iter().enumerate() {
            let rows: usize = parents[i].iter().map(|&p| schema.domain_size(p)).product();
            if n.cpt.len() != rows {
                return Err(Error::InvalidCpt {
                    variable: n.name,
                    reason: format!("expected {rows} parent rows, found {}", n.cpt.len()),
                });
            }
            let psizes: Vec<usize> = parents[i].iter().map(|&p| schema.domain_size(p)).collect();
            let mut labels = Vec::new();
            for_each_assignment(&psizes, |a| labels.push(a.to_vec()));
            for (r, row) in n.cpt.iter().enumerate() {
                let describe = || {
                    let parts: Vec<String> = parents[i]
                        .iter()
                        .zip(&labels[r])
                        .map(|(&p, &v)| format!("{}={}", schema.attribute(p).name, schema.label(p, v)))
                        .collect();
                    format!("row [{}]", parts.join(", "))
                };
                if row.len() != n.domain.len() {
                    return Err(Error::InvalidCpt {
                        variable: n.name.clone(),
                        reason: format!("{} has {} entries for a domain of {}", describe(), row.len(), n.domain.len()),
                    });
                }
                if row.iter().any(|p| *p < rational::zero()) {
                    return Err(Error::InvalidCpt { variable: n.name.clone(), reason: format!("{} has a negative entry", describe()) });
                }
                let sum = row.iter().fold(rational::zero(), |a, p| a + p);
                if !sum.is_one() {
                    return Err(Error::InvalidCpt {
                        variable: n.name.clone(),
                        reason: format!("{} sums to {}", describe(), rational::format(&sum)),
                    });
                }
            }
            cpt.push(n.cpt);
        }
        Ok(CausalModel { schema, parents, children, topo, cpt })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children_of(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn cpt(&self, i: usize) -> &[Vec<Rational>] {
        &self.cpt[i]
    }

    /// `Pr(v_i | pa(v_i))` read off a full (or sufficiently filled) row.
    fn factor(&self, i: usize, row: &[Value]) -> &Rational {
        let mut r = 0usize;
        for &p in &self.parents[i] {
            r = r * self.schema.domain_size(p) + row[p] as usize;
        }
        &self.cpt[i][r][row[i] as usize]
    }

    fn names_to_set<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        self.schema.indices(names)
    }

    /// Strict descendants of `i`.
    pub fn descendants(&self, i: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = self.children[i].clone();
        while let Some(c) = stack.pop() {
            if out.insert(c) {
                stack.extend(&self.children[c]);
            }
        }
        out
    }

    /// Ancestors of `set`, including the set itself, in the graph with
    /// edges into `cut` removed.
    fn ancestral_closure(&self, set: &[usize], cut: &[usize]) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = set.to_vec();
        while let Some(v) = stack.pop() {
            if out.insert(v) && !cut.contains(&v) {
                stack.extend(&self.parents[v]);
            }
        }
        out
    }

    /// d-separation of `x` and `y` given `z` via the moralized ancestral graph.
    pub fn d_separated<S: AsRef<str>>(&self, x: &[S], y: &[S], z: &[S]) -> Result<bool> {
        let (x, y, z) = (self.names_to_set(x)?, self.names_to_set(y)?, self.names_to_set(z)?);
        for &i in &x {
            if y.contains(&i) || z.contains(&i) {
                return Err(Error::OverlappingSets(self.schema.attribute(i).name.clone()));
            }
        }
        for &i in &y {
            if z.contains(&i) {
                return Err(Error::OverlappingSets(self.schema.attribute(i).name.clone()));
            }
        }
        let all: Vec<usize> = x.iter().chain(&y).chain(&z).copied().collect();
        let anc = self.ancestral_closure(&all, &[]);
        let n = self.schema.len();
        let mut adj = alloc::vec![BTreeSet::new(); n];
        for &v in &anc {
            let ps = &self.parents[v];
            for (a, &p) in ps.iter().enumerate() {
                adj[v].insert(p);
                adj[p].insert(v);
                for &q in &ps[a + 1..] {
                    adj[p].insert(q);
                    adj[q].insert(p);
                }
            }
        }
        let mut seen = alloc::vec![false; n];
        let mut stack: Vec<usize> = x.clone();
        for &i in &x {
            seen[i] = true;
        }
        while let Some(v) = stack.pop() {
            if y.contains(&v) {
                return Ok(false);
            }
            for &w in &adj[v] {
                if !seen[w] && anc.contains(&w) && !z.contains(&w) {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        Ok(true)
    }

    fn check_cap(&self, vars: &[usize], cap: u128) -> Result<()> {
        let size = self.schema.product_size(vars);
        if size > cap {
            return Err(Error::DomainTooLarge { size, cap });
        }
        Ok(())
    }

    /// Truncated factorization restricted to `keep`, with `fixed` clamped
    /// and their factors dropped. `keep` must be closed under parents of
    /// non-fixed members.
    fn truncated(&self, keep: &BTreeSet<usize>, fixed: &[(usize, Value)], cap: u128) -> Result<Distribution> {
        let free: Vec<usize> = keep.iter().copied().filter(|v| !fixed.iter().any(|f| f.0 == *v)).collect();
        self.check_cap(&free, cap)?;
        let sizes: Vec<usize> = free.iter().map(|&v| self.schema.domain_size(v)).collect();
        let order: Vec<usize> = self.topo.iter().copied().filter(|v| free.contains(v)).collect();
        let mut row: Row = alloc::vec![0; self.schema.len()];
        for &(v, val) in fixed {
            row[v] = val;
        }
        let mut probs = BTreeMap::new();
        for_each_assignment(&sizes, |a| {
            for (k, &v) in free.iter().enumerate() {
                row[v] = a[k];
            }
            let mut p = rational::one();
            for &v in &order {
                let f = self.factor(v, &row);
                if f.is_zero() {
                    return;
                }
                p *= f;
            }
            probs.insert(a.to_vec(), p);
        });
        Ok(Distribution { schema: self.schema.project(&free), probs })
    }

    /// Exact joint `∏ Pr(v | pa(v))` over every variable.
    pub fn joint_distribution(&self, cap: u128) -> Result<Distribution> {
        let all: BTreeSet<usize> = (0..self.schema.len()).collect();
        self.truncated(&all, &[], cap)
    }

    fn resolve_fixed<S: AsRef<str>, T: AsRef<str>>(&self, fixed: &[(S, T)]) -> Result<Vec<(usize, Value)>> {
        let mut out: Vec<(usize, Value)> = Vec::new();
        for (name, label) in fixed {
            let i = self.schema.index_of(name.as_ref())?;
            let v = self.schema.value_of(i, label.as_ref())?;
            if out.iter().any(|f| f.0 == i) {
                return Err(Error::OverlappingSets(name.as_ref().to_string()));
            }
            out.push((i, v));
        }
        Ok(out)
    }

    /// `Pr(· | do(fixed))` over every non-intervened variable.
    pub fn intervene<S: AsRef<str>, T: AsRef<str>>(&self, fixed: &[(S, T)], cap: u128) -> Result<Distribution> {
        let fixed = self.resolve_fixed(fixed)?;
        let all: BTreeSet<usize> = (0..self.schema.len()).collect();
        self.truncated(&all, &fixed, cap)
    }

    /// `Pr(targets | do(fixed))`, summing only over ancestors of the targets
    /// in the mutilated graph.
    pub fn interventional_marginal<S: AsRef<str>, T: AsRef<str>, U: AsRef<str>>(
        &self,
        fixed: &[(S, T)],
        targets: &[U],
        cap: u128,
    ) -> Result<Distribution> {
        let fixed = self.resolve_fixed(fixed)?;
        let targets = self.names_to_set(targets)?;
        let cut: Vec<usize> = fixed.iter().map(|f| f.0).collect();
        if let Some(t) = targets.iter().find(|t| cut.contains(t)) {
            return Err(Error::OverlappingSets(self.schema.attribute(*t).name.clone()));
        }
        let keep = self.ancestral_closure(&targets, &cut);
        let relevant: Vec<(usize, Value)> = fixed.into_iter().filter(|f| keep.contains(&f.0)).collect();
        let dist = self.truncated(&keep, &relevant, cap)?;
        let names: Vec<&str> = targets.iter().map(|&t| self.schema.attribute(t).name.as_str()).collect();
        dist.marginal(&names)
    }

    /// `Pr(y | do(x_0), ..., do(x_m))` evaluated on the observational joint
    /// through the adjustment formula with parent-compensation factors.
    ///
    /// Interventions must be listed so that no earlier variable descends
    /// from a later one. Returns `Pr(y = v)` for every `v` in the domain.
    pub fn extended_adjustment<S: AsRef<str>, T: AsRef<str>>(
        &self,
        y: &str,
        interventions: &[(S, T)],
        cap: u128,
    ) -> Result<Vec<Rational>> {
        let fixed = self.resolve_fixed(interventions)?;
        let yi = self.schema.index_of(y)?;
        if fixed.iter().any(|f| f.0 == yi) {
            return Err(Error::OverlappingSets(y.to_string()));
        }
        for (a, &(xi, _)) in fixed.iter().enumerate() {
            for &(xj, _) in &fixed[a + 1..] {
                if self.descendants(xj).contains(&xi) {
                    return Err(Error::InterventionOrder {
                        earlier: self.schema.attribute(xi).name.clone(),
                        later: self.schema.attribute(xj).name.clone(),
                    });
                }
            }
        }
        let xs: Vec<usize> = fixed.iter().map(|f| f.0).collect();
        // z = union of intervened parents that are not themselves intervened,
        // grouped by the first intervention that introduces them.
        let mut z: Vec<usize> = Vec::new();
        let mut new_parents: Vec<Vec<usize>> = Vec::new();
        for &(xi, _) in &fixed {
            let fresh: Vec<usize> =
                self.parents[xi].iter().copied().filter(|p| !xs.contains(p) && !z.contains(p)).collect();
            z.extend(&fresh);
            new_parents.push(fresh);
        }

        let mut needed: Vec<usize> = xs.iter().chain(&z).copied().collect();
        needed.push(yi);
        needed.sort_unstable();
        let anc = self.ancestral_closure(&needed, &[]);
        let joint = self.truncated(&anc, &[], cap)?;
        let pos = |v: usize| joint.schema.index_of(&self.schema.attribute(v).name).expect("ancestral set contains v");
        let mass = |assign: &[(usize, Value)]| -> Rational {
            let idx: Vec<(usize, Value)> = assign.iter().map(|&(v, val)| (pos(v), val)).collect();
            joint
                .probs
                .iter()
                .filter(|(r, _)| idx.iter().all(|&(i, val)| r[i] == val))
                .fold(rational::zero(), |a, (_, p)| a + p)
        };

        let ysize = self.schema.domain_size(yi);
        let mut out = alloc::vec![rational::zero(); ysize];
        let zsizes: Vec<usize> = z.iter().map(|&v| self.schema.domain_size(v)).collect();
        let mut failure: Option<Error> = None;
        for_each_assignment(&zsizes, |zv| {
            if failure.is_some() {
                return;
            }
            let zval = |v: usize| zv[z.iter().position(|&w| w == v).expect("v in z")];
            let mut weight = rational::one();
            let mut context: Vec<(usize, Value)> = Vec::new();
            for (i, &(xi, xv)) in fixed.iter().enumerate() {
                let denom = mass(&context);
                let mut num_ctx = context.clone();
                num_ctx.extend(new_parents[i].iter().map(|&p| (p, zval(p))));
                if !new_parents[i].is_empty() {
                    if denom.is_zero() {
                        failure = Some(Error::Positivity(format!(
                            "conditioning context of `{}` has probability zero",
                            self.schema.attribute(xi).name
                        )));
                        return;
                    }
                    weight *= mass(&num_ctx) / denom;
                    if weight.is_zero() {
                        return;
                    }
                }
                context = num_ctx;
                context.push((xi, xv));
            }
            // context now holds x and z.
            let denom = mass(&context);
            if denom.is_zero() {
                failure = Some(Error::Positivity("Pr(x, z) = 0 for a z with positive weight".into()));
                return;
            }
            for (v, slot) in out.iter_mut().enumerate() {
                let mut c = context.clone();
                c.push((yi, v as Value));
                *slot += &weight * mass(&c) / &denom;
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Draws `n` rows by ancestral sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: u64) -> Bag {
        let cum: Vec<Vec<Vec<f64>>> = self
            .cpt
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|row| {
                        let mut acc = 0.0;
                        row.iter()
                            .map(|p| {
                                acc += rational::to_f64(p);
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut bag = Bag::empty(self.schema.clone());
        let mut row: Row = alloc::vec![0; self.schema.len()];
        for _ in 0..n {
            for &v in &self.topo {
                let mut r = 0usize;
                for &p in &self.parents[v] {
                    r = r * self.schema.domain_size(p) + row[p] as usize;
                }
                let u: f64 = rng.gen();
                let c = &cum[v][r];
                // Skip zero-probability values even when u lands on a boundary.
                let mut pick = c.len() - 1;
                for (k, &edge) in c.iter().enumerate() {
                    if u < edge && !self.cpt[v][r][k].is_zero() {
                        pick = k;
                        break;
                    }
                }
                while self.cpt[v][r][pick].is_zero() && pick > 0 {
                    pick -= 1;
                }
                row[v] = pick as Value;
            }
            bag.add_unchecked(row.clone(), 1);
        }
        bag
    }
}

fn topological_order(parents: &[Vec<usize>]) -> core::result::Result<Vec<usize>, usize> {
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = alloc::vec![Vec::new(); n];
    for (i, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        out.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if out.len() < n {
        return Err((0..n).find(|&i| indeg[i] > 0).unwrap_or(0));
    }
    Ok(out)
}

/// Protected attribute, outcome, and the admissible/inadmissible split of
/// everything else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessApplication {
    pub protected: String,
    pub outcome: String,
    #[serde(default)]
    pub admissible: Vec<String>,
    #[serde(default)]
    pub inadmissible: Vec<String>,
}

impl FairnessApplication {
    /// Checks that the roles partition `names`.
    pub fn validate<S: AsRef<str>>(&self, names: &[S]) -> Result<()> {
        let all: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let listed = [self.protected.as_str(), self.outcome.as_str()]
            .into_iter()
            .chain(self.admissible.iter().map(String::as_str))
            .chain(self.inadmissible.iter().map(String::as_str));
        for n in listed {
            if !all.contains(n) {
                return Err(Error::UnknownAttribute(n.to_string()));
            }
            if !seen.insert(n) {
                return Err(Error::InvalidRoles(format!("`{n}` has more than one role")));
            }
        }
        if let Some(missing) = all.difference(&seen).next() {
            return Err(Error::InvalidRoles(format!("`{missing}` has no role")));
        }
        Ok(())
    }
}

/// Largest interventional gap found by [`k_fair`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessWitness {
    /// The fixed context `K = k` as `(name, label)` pairs.
    pub context: Vec<(String, String)>,
    pub outcome_value: String,
    pub protected_values: (String, String),
    pub probabilities: (String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KFairReport {
    pub fair: bool,
    pub max_gap: String,
    pub witness: Option<FairnessWitness>,
}

/// `|Pr(O=o | do(S=s), do(K=k)) - Pr(O=o | do(S=s'), do(K=k))| ≤ tolerance`
/// for every `k`, `o` and pair of protected values.
pub fn k_fair<S: AsRef<str>>(
    model: &CausalModel,
    app: &FairnessApplication,
    k: &[S],
    tolerance: &Rational,
) -> Result<KFairReport> {
    let schema = model.schema();
    let s = schema.index_of(&app.protected)?;
    let o = schema.index_of(&app.outcome)?;
    let kidx = schema.indices(k)?;
    if kidx.contains(&s) || kidx.contains(&o) {
        return Err(Error::InvalidRoles("K must exclude the protected attribute and the outcome".into()));
    }
    let contexts = schema.product_size(&kidx);
    if contexts > MAX_CONTEXTS {
        return Err(Error::DomainTooLarge { size: contexts, cap: MAX_CONTEXTS });
    }
    let ksizes: Vec<usize> = kidx.iter().map(|&i| schema.domain_size(i)).collect();
    let mut best = rational::zero();
    let mut witness: Option<FairnessWitness> = None;
    let mut failure = None;
    for_each_assignment(&ksizes, |kv| {
        if failure.is_some() {
            return;
        }
        let mut fixed: Vec<(String, String)> = kidx
            .iter()
            .zip(kv)
            .map(|(&i, &v)| (schema.attribute(i).name.clone(), schema.label(i, v).to_string()))
            .collect();
        let context = fixed.clone();
        let mut per_s: Vec<Distribution> = Vec::new();
        for sv in 0..schema.domain_size(s) {
            fixed.push((app.protected.clone(), schema.label(s, sv as Value).to_string()));
            match model.interventional_marginal(&fixed, &[&app.outcome], DEFAULT_JOINT_CAP) {
                Ok(d) => per_s.push(d),
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            }
            fixed.pop();
        }
        for ov in 0..schema.domain_size(o) {
            let p = |d: &Distribution| d.probs.get(&alloc::vec![ov as Value]).cloned().unwrap_or_else(rational::zero);
            for a in 0..per_s.len() {
                for b in a + 1..per_s.len() {
                    let (pa, pb) = (p(&per_s[a]), p(&per_s[b]));
                    let gap = rational::abs_diff(&pa, &pb);
                    if gap > best || (witness.is_none() && gap == best && gap > *tolerance) {
                        best = gap;
                        witness = Some(FairnessWitness {
                            context: context.clone(),
                            outcome_value: schema.label(o, ov as Value).to_string(),
                            protected_values: (
                                schema.label(s, a as Value).to_string(),
                                schema.label(s, b as Value).to_string(),
                            ),
                            probabilities: (rational::format(&pa), rational::format(&pb)),
                        });
                    }
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let fair = best <= *tolerance;
    Ok(KFairReport { fair, max_gap: rational::format(&best), witness: if fair { None } else { witness } })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessMode {
    Exhaustive,
    PathCriterion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JustifiableVerdict {
    pub fair: bool,
    pub mode: FairnessMode,
    /// Smallest failing `K ⊇ A` in exhaustive mode.
    pub failing_set: Option<Vec<String>>,
    pub witness: Option<FairnessWitness>,
    pub max_gap: Option<String>,
    /// A directed path from the protected attribute to the outcome that
    /// avoids every admissible attribute.
    pub path: Option<Vec<String>>,
}

/// Directed `S → O` path avoiding `A`, if any.
pub fn unblocked_path(model: &CausalModel, app: &FairnessApplication) -> Result<Option<Vec<String>>> {
    let schema = model.schema();
    let s = schema.index_of(&app.protected)?;
    let o = schema.index_of(&app.outcome)?;
    let a = schema.indices(&app.admissible)?;
    let n = schema.len();
    let mut prev: Vec<Option<usize>> = alloc::vec![None; n];
    let mut seen = alloc::vec![false; n];
    let mut queue = alloc::collections::VecDeque::new();
    seen[s] = true;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        if v == o {
            let mut path = alloc::vec![o];
            let mut cur = o;
            while let Some(p) = prev[cur] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Ok(Some(path.into_iter().map(|i| schema.attribute(i).name.clone()).collect()));
        }
        for &c in model.children_of(v) {
            if !seen[c] && !a.contains(&c) {
                seen[c] = true;
                prev[c] = Some(v);
                queue.push_back(c);
            }
        }
    }
    Ok(None)
}

pub fn justifiably_fair(
    model: &CausalModel,
    app: &FairnessApplication,
    mode: FairnessMode,
    tolerance: &Rational,
) -> Result<JustifiableVerdict> {
    let names: Vec<&str> = model.schema().names().collect();
    app.validate(&names)?;
    match mode {
        FairnessMode::PathCriterion => {
            let path = unblocked_path(model, app)?;
            Ok(JustifiableVerdict { fair: path.is_none(), mode, failing_set: None, witness: None, max_gap: None, path })
        }
        FairnessMode::Exhaustive => {
            let schema = model.schema();
            let free: Vec<String> = app.inadmissible.clone();
            if free.len() > MAX_FREE_VARIABLES {
                return Err(Error::SchemaTooLarge { size: free.len(), bound: MAX_FREE_VARIABLES });
            }
            let everything: Vec<&String> = app.admissible.iter().chain(&free).collect();
            let contexts = schema.product_size(&schema.indices(&everything)?);
            if contexts > MAX_CONTEXTS {
                return Err(Error::DomainTooLarge { size: contexts, cap: MAX_CONTEXTS });
            }
            let mut masks: Vec<u32> = (0..1u32 << free.len()).collect();
            masks.sort_by_key(|m| (m.count_ones(), *m));
            let mut worst = rational::zero();
            for m in masks {
                let mut k: Vec<String> = app.admissible.clone();
                k.extend((0..free.len()).filter(|i| m >> i & 1 == 1).map(|i| free[i].clone()));
                let report = k_fair(model, app, &k, tolerance)?;
                let gap = rational::parse_fraction(&report.max_gap).unwrap_or_else(rational::zero);
                if gap > worst {
                    worst = gap;
                }
                if !report.fair {
                    return Ok(JustifiableVerdict {
                        fair: false,
                        mode,
                        failing_set: Some(k),
                        witness: report.witness,
                        max_gap: Some(report.max_gap),
                        path: unblocked_path(model, app)?,
                    });
                }
            }
            Ok(JustifiableVerdict {
                fair: true,
                mode,
                failing_set: None,
                witness: None,
                max_gap: Some(rational::format(&worst)),
                path: None,
            })
        }
    }
}

/// Random DAG consistent with the index order, with random rational CPTs.
///
/// When `positive` is set every CPT entry is at least `1/(4·domain)`, so the
/// joint is strictly positive.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    nodes: usize,
    domain: usize,
    edge_probability: f64,
    max_parents: usize,
    positive: bool,
) -> CausalModel {
    let mut specs = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let mut parents: Vec<usize> = Vec::new();
        for j in 0..i {
            if parents.len() < max_parents && rng.gen_bool(edge_probability) {
                parents.push(j);
            }
        }
        let rows = domain.pow(parents.len() as u32);
        let cpt = (0..rows).map(|_| random_row(rng, domain, positive)).collect();
        specs.push(NodeSpec {
            name: format!("V{i}"),
            domain: (0..domain).map(|v| format!("{v}")).collect(),
            parents: parents.iter().map(|p| format!("V{p}")).collect(),
            cpt,
        });
    }
    CausalModel::new(specs).expect("random model is valid by construction")
}

fn random_row<R: Rng + ?Sized>(rng: &mut R, domain: usize, positive: bool) -> Vec<Rational> {
    let floor = if positive { 1 } else { 0 };
    let weights: Vec<u64> = (0..domain).map(|_| floor + rng.gen_range(0..4u64)).collect();
    let total: u64 = weights.iter().sum();
    if total == 0 {
        let mut row = alloc::vec![rational::zero(); domain];
        row[rng.gen_range(0..domain)] = rational::one();
        return row;
    }
    weights.into_iter().map(|w| rational::ratio(w, total)).collect()
}
