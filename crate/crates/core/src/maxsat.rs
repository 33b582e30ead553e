//! MVD and saturated-CI repair through weighted MaxSAT.
//!
//! Inside one `z` stratum the candidate universe `D*` is the grid of every
//! observed x-part against every observed y-part. Each grid cell is a Boolean
//! variable; a repaired stratum satisfies the MVD iff it is closed under the
//! lineage clauses `¬t1 ∨ ¬t2 ∨ t3` where `t3` combines the x-part of `t1`
//! with the y-part of `t2`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{pick, Attribute, Bag, KeyedSet, Mvd, Relation, ResolvedMvd, Row, Schema, KEY_ATTRIBUTE};
use crate::error::{Error, Result};
use crate::independence::CiStatement;

/// Literal in DIMACS convention: `v` or `-v` for a 1-based variable `v`.
pub type Lit = i32;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WcnfProblem {
    pub num_vars: u32,
    pub hard: Vec<Vec<Lit>>,
    pub soft: Vec<(u64, Vec<Lit>)>,
    /// `legend[i]` describes variable `i + 1`.
    pub legend: Vec<String>,
}

impl WcnfProblem {
    /// Sum of soft weights plus one.
    pub fn top(&self) -> u64 {
        self.soft.iter().map(|s| s.0).sum::<u64>() + 1
    }

    pub fn validate(&self) -> Result<()> {
        for c in self.hard.iter().chain(self.soft.iter().map(|s| &s.1)) {
            for &l in c {
                if l == 0 || l.unsigned_abs() > self.num_vars {
                    return Err(Error::UndeclaredVariable(l.unsigned_abs()));
                }
            }
        }
        if self.soft.iter().any(|s| s.0 == 0) {
            return Err(Error::InvalidParameter("soft clause weights must be positive".into()));
        }
        Ok(())
    }

    /// Total weight of falsified soft clauses, or `None` when a hard clause
    /// is falsified.
    pub fn cost(&self, assignment: &[bool]) -> Option<u64> {
        let sat = |c: &[Lit]| c.iter().any(|&l| assignment[l.unsigned_abs() as usize - 1] == (l > 0));
        if !self.hard.iter().all(|c| sat(c)) {
            return None;
        }
        Some(self.soft.iter().filter(|(_, c)| !sat(c)).map(|s| s.0).sum())
    }

    /// Weighted DIMACS text. Legend lines come first as `c var <n> <text>`.
    pub fn to_wcnf(&self) -> String {
        let top = self.top();
        let mut out = String::new();
        out.push_str("c fairrepair lineage encoding\n");
        for (i, l) in self.legend.iter().enumerate() {
            let _ = writeln!(out, "c var {} {}", i + 1, l);
        }
        let _ = writeln!(out, "p wcnf {} {} {}", self.num_vars, self.hard.len() + self.soft.len(), top);
        let mut clause = |w: u64, c: &[Lit]| {
            let _ = write!(out, "{w}");
            for l in c {
                let _ = write!(out, " {l}");
            }
            out.push_str(" 0\n");
        };
        for c in &self.hard {
            clause(top, c);
        }
        for (w, c) in &self.soft {
            clause(*w, c);
        }
        out
    }

    /// Parses the format written by [`WcnfProblem::to_wcnf`]. Clauses whose
    /// weight is at least `top` are hard.
    pub fn parse_wcnf(text: &str) -> Result<WcnfProblem> {
        let bad = |line: usize, msg: &str| Error::InvalidParameter(format!("wcnf line {line}: {msg}"));
        let mut problem = WcnfProblem::default();
        let mut header: Option<(u32, usize, u64)> = None;
        let mut legend: BTreeMap<u32, String> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let no = no + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('c') {
                if let Some(entry) = rest.trim_start().strip_prefix("var ") {
                    let (n, desc) = entry.split_once(' ').unwrap_or((entry, ""));
                    let n: u32 = n.parse().map_err(|_| bad(no, "bad legend index"))?;
                    legend.insert(n, desc.to_string());
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("p ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 4 || f[0] != "wcnf" {
                    return Err(bad(no, "expected `p wcnf nvars nclauses top`"));
                }
                let nv = f[1].parse().map_err(|_| bad(no, "bad variable count"))?;
                let nc = f[2].parse().map_err(|_| bad(no, "bad clause count"))?;
                let top = f[3].parse().map_err(|_| bad(no, "bad top weight"))?;
                header = Some((nv, nc, top));
                continue;
            }
            let (nv, _, top) = header.ok_or_else(|| bad(no, "clause before header"))?;
            let mut nums = line.split_whitespace();
            let w: u64 = nums.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(no, "bad weight"))?;
            let mut lits = Vec::new();
            let mut terminated = false;
            for tok in nums {
                let l: Lit = tok.parse().map_err(|_| bad(no, "bad literal"))?;
                if l == 0 {
                    terminated = true;
                    break;
                }
                if l.unsigned_abs() > nv {
                    return Err(Error::UndeclaredVariable(l.unsigned_abs()));
                }
                lits.push(l);
            }
            if !terminated {
                return Err(bad(no, "clause is not zero-terminated"));
            }
            if w >= top {
                problem.hard.push(lits);
            } else {
                problem.soft.push((w, lits));
            }
        }
        let (nv, nc, _) = header.ok_or_else(|| Error::InvalidParameter("wcnf: missing header".into()))?;
        if problem.hard.len() + problem.soft.len() != nc {
            return Err(Error::InvalidParameter(format!(
                "wcnf: header declares {nc} clauses, found {}",
                problem.hard.len() + problem.soft.len()
            )));
        }
        problem.num_vars = nv;
        problem.legend = (1..=nv).map(|i| legend.remove(&i).unwrap_or_default()).collect();
        Ok(problem)
    }
}

/// Search limits for [`solve`]. `max_nodes == 0` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_nodes: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_nodes: 2_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub assignment: Vec<bool>,
    pub cost: u64,
    /// Search space exhausted, so `cost` is minimal.
    pub optimal: bool,
    pub nodes: u64,
}

const UNASSIGNED: u8 = 0;
const TRUE: u8 = 1;
const FALSE: u8 = 2;

struct Search {
    lits: Vec<Lit>,
    start: Vec<usize>,
    occ_pos: Vec<Vec<u32>>,
    occ_neg: Vec<Vec<u32>>,
    n_true: Vec<u32>,
    n_false: Vec<u32>,
    value: Vec<u8>,
    trail: Vec<u32>,
    pending: Vec<Lit>,
    cost_true: Vec<u64>,
    cost_false: Vec<u64>,
    preferred: Vec<bool>,
    cost: u64,
    slack: u64,
    conflict: bool,
}

impl Search {
    fn new(problem: &WcnfProblem) -> Self {
        let n = problem.num_vars as usize;
        let mut lits = Vec::new();
        let mut start = alloc::vec![0];
        let mut occ_pos = alloc::vec![Vec::new(); n];
        let mut occ_neg = alloc::vec![Vec::new(); n];
        for (ci, c) in problem.hard.iter().enumerate() {
            for &l in c {
                let v = l.unsigned_abs() as usize - 1;
                if l > 0 {
                    occ_pos[v].push(ci as u32);
                } else {
                    occ_neg[v].push(ci as u32);
                }
                lits.push(l);
            }
            start.push(lits.len());
        }
        let mut cost_true = alloc::vec![0u64; n];
        let mut cost_false = alloc::vec![0u64; n];
        for (w, c) in &problem.soft {
            let l = c[0];
            let v = l.unsigned_abs() as usize - 1;
            if l > 0 {
                cost_false[v] += w;
            } else {
                cost_true[v] += w;
            }
        }
        let preferred: Vec<bool> = (0..n).map(|v| cost_true[v] < cost_false[v]).collect();
        let slack = (0..n).map(|v| cost_true[v].min(cost_false[v])).sum();
        let m = problem.hard.len();
        Search {
            lits,
            start,
            occ_pos,
            occ_neg,
            n_true: alloc::vec![0; m],
            n_false: alloc::vec![0; m],
            value: alloc::vec![UNASSIGNED; n],
            trail: Vec::new(),
            pending: Vec::new(),
            cost_true,
            cost_false,
            preferred,
            cost: 0,
            slack,
            conflict: false,
        }
    }

    fn clause(&self, c: usize) -> &[Lit] {
        &self.lits[self.start[c]..self.start[c + 1]]
    }

    fn assign(&mut self, v: usize, val: bool) {
        self.value[v] = if val { TRUE } else { FALSE };
        self.trail.push(v as u32);
        self.cost += if val { self.cost_true[v] } else { self.cost_false[v] };
        self.slack -= self.cost_true[v].min(self.cost_false[v]);
        let (sat, unsat) = if val { (&self.occ_pos[v], &self.occ_neg[v]) } else { (&self.occ_neg[v], &self.occ_pos[v]) };
        for &c in sat {
            self.n_true[c as usize] += 1;
        }
        for &c in unsat {
            let c = c as usize;
            self.n_false[c] += 1;
            if self.n_true[c] > 0 {
                continue;
            }
            let len = (self.start[c + 1] - self.start[c]) as u32;
            if self.n_false[c] == len {
                self.conflict = true;
            } else if self.n_false[c] + 1 == len {
                let lit = self.clause(c).iter().copied().find(|l| self.value[l.unsigned_abs() as usize - 1] == UNASSIGNED);
                if let Some(l) = lit {
                    self.pending.push(l);
                }
            }
        }
    }

    fn unassign_to(&mut self, len: usize) {
        while self.trail.len() > len {
            let v = self.trail.pop().expect("trail is longer than len") as usize;
            let val = self.value[v] == TRUE;
            self.cost -= if val { self.cost_true[v] } else { self.cost_false[v] };
            self.slack += self.cost_true[v].min(self.cost_false[v]);
            let (sat, unsat) = if val { (&self.occ_pos[v], &self.occ_neg[v]) } else { (&self.occ_neg[v], &self.occ_pos[v]) };
            for &c in sat {
                self.n_true[c as usize] -= 1;
            }
            for &c in unsat {
                self.n_false[c as usize] -= 1;
            }
            self.value[v] = UNASSIGNED;
        }
        self.pending.clear();
        self.conflict = false;
    }

    fn propagate(&mut self) -> bool {
        while !self.conflict {
            let Some(l) = self.pending.pop() else { break };
            let v = l.unsigned_abs() as usize - 1;
            let want = l > 0;
            match self.value[v] {
                UNASSIGNED => self.assign(v, want),
                x if (x == TRUE) == want => {}
                _ => self.conflict = true,
            }
        }
        if self.conflict {
            self.pending.clear();
        }
        !self.conflict
    }
}

/// Exact weighted MaxSAT by branch and bound with unit propagation.
///
/// Variables are branched in index order, preferred (soft-satisfying)
/// value first, and only strictly better solutions replace the incumbent,
/// so among optimal assignments the one returned is lexicographically
/// smallest when read as "differs from preferred" bits. `initial`, when it
/// satisfies every hard clause, seeds the upper bound without affecting
/// that tie-break. `stop` is polled between nodes.
pub fn solve(problem: &WcnfProblem, budget: Budget, initial: Option<&[bool]>, stop: &dyn Fn() -> bool) -> Result<Solution> {
    problem.validate()?;
    if problem.soft.iter().any(|s| s.1.len() != 1) {
        return Err(Error::NonUnitSoftClause);
    }
    if problem.hard.iter().any(Vec::is_empty) {
        return Err(Error::Unsatisfiable);
    }
    let n = problem.num_vars as usize;
    let mut s = Search::new(problem);

    // Incumbent from outside the search: ties with it are still accepted.
    let mut best: Option<(u64, Vec<bool>)> = None;
    let mut external = true;
    let mut candidates: Vec<Vec<bool>> = Vec::new();
    if let Some(init) = initial {
        if init.len() == n {
            candidates.push(init.to_vec());
        }
    }
    candidates.push(alloc::vec![false; n]);
    for c in candidates {
        if let Some(cost) = problem.cost(&c) {
            if best.as_ref().map_or(true, |b| cost < b.0) {
                best = Some((cost, c));
            }
        }
    }

    for c in 0..problem.hard.len() {
        if s.clause(c).len() == 1 {
            let l = s.clause(c)[0];
            s.pending.push(l);
        }
    }
    let mut nodes = 0u64;
    struct Frame {
        var: usize,
        trail_len: usize,
        flipped: bool,
    }
    let mut frames: Vec<Frame> = Vec::new();
    let mut exhausted = false;
    if !s.propagate() {
        return Err(Error::Unsatisfiable);
    }
    let mut cursor = 0usize;
    let mut ok = true;
    loop {
        if ok {
            ok = s.propagate();
        }
        if ok {
            let bound = s.cost + s.slack;
            let prune = match &best {
                Some((b, _)) => if external { bound > *b } else { bound >= *b },
                None => false,
            };
            if prune {
                ok = false;
            }
        }
        if ok {
            while cursor < n && s.value[cursor] != UNASSIGNED {
                cursor += 1;
            }
            if cursor == n {
                let assignment: Vec<bool> = s.value.iter().map(|&v| v == TRUE).collect();
                best = Some((s.cost, assignment));
                external = false;
                ok = false;
            } else {
                if budget.max_nodes > 0 && nodes >= budget.max_nodes || stop() {
                    exhausted = true;
                    break;
                }
                nodes += 1;
                frames.push(Frame { var: cursor, trail_len: s.trail.len(), flipped: false });
                let pref = s.preferred[cursor];
                s.assign(cursor, pref);
                continue;
            }
        }
        // Backtrack to the deepest decision whose alternative is untried.
        loop {
            match frames.last_mut() {
                None => break,
                Some(f) if !f.flipped => {
                    f.flipped = true;
                    let (var, len) = (f.var, f.trail_len);
                    s.unassign_to(len);
                    let alt = !s.preferred[var];
                    s.assign(var, alt);
                    cursor = var;
                    ok = true;
                    break;
                }
                Some(_) => {
                    frames.pop();
                }
            }
        }
        if frames.is_empty() {
            break;
        }
    }
    let (cost, assignment) = best.ok_or(Error::Unsatisfiable)?;
    Ok(Solution { assignment, cost, optimal: !exhausted, nodes })
}

/// Exhaustive reference solver for small problems.
pub fn solve_exhaustive(problem: &WcnfProblem) -> Result<(u64, Vec<bool>)> {
    problem.validate()?;
    let n = problem.num_vars as usize;
    if n > 24 {
        return Err(Error::InvalidParameter("exhaustive search is limited to 24 variables".into()));
    }
    let mut best: Option<(u64, Vec<bool>)> = None;
    for m in 0u32..(1 << n) {
        let a: Vec<bool> = (0..n).map(|i| m >> i & 1 == 1).collect();
        if let Some(c) = problem.cost(&a) {
            if best.as_ref().map_or(true, |b| c < b.0) {
                best = Some((c, a));
            }
        }
    }
    best.ok_or(Error::Unsatisfiable)
}

/// Which exact method handles a stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    /// Branch and bound on small strata, rectangle enumeration on large
    /// strata with a narrow side, branch and bound otherwise.
    Auto,
    BranchAndBound,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOptions {
    pub budget: Budget,
    /// Fraction of hard clauses kept, in `(0, 1]`. Below 1 the result is
    /// flagged non-optimal.
    pub soft_fraction: f64,
    pub seed: u64,
    /// Promote the `¬X_t` soft clauses of candidate-only tuples to hard.
    pub forbid_insertions: bool,
    pub clause_cap: u128,
    pub solver: SolverChoice,
    /// Largest narrow side the rectangle solver enumerates subsets of.
    pub rectangle_limit: usize,
    /// Strata with at most this many candidate tuples always use branch
    /// and bound under [`SolverChoice::Auto`].
    pub small_stratum: usize,
}

impl Default for RepairOptions {
    fn default() -> Self {
        RepairOptions {
            budget: Budget::default(),
            soft_fraction: 1.0,
            seed: 0,
            forbid_insertions: false,
            clause_cap: 50_000_000,
            solver: SolverChoice::Auto,
            rectangle_limit: 16,
            small_stratum: 40,
        }
    }
}

impl RepairOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.soft_fraction > 0.0 && self.soft_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("soft_fraction must lie in (0, 1], got {}", self.soft_fraction)));
        }
        if self.rectangle_limit > 30 {
            return Err(Error::InvalidParameter("rectangle_limit must be at most 30".into()));
        }
        Ok(())
    }
}

/// One `z` stratum of the candidate universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumPlan {
    pub z: Row,
    pub xs: Vec<Row>,
    pub ys: Vec<Row>,
    /// Row-major `xs × ys` membership of the original relation.
    pub present: Vec<bool>,
    /// Cell indices sorted by the reassembled tuple; position = variable.
    pub order: Vec<u32>,
}

impl StratumPlan {
    pub fn cells(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn original_size(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    /// Number of lineage clauses, `|X|(|X|-1)|Y|(|Y|-1)`.
    pub fn clause_count(&self) -> u128 {
        let (p, q) = (self.xs.len() as u128, self.ys.len() as u128);
        p * p.saturating_sub(1) * q * q.saturating_sub(1)
    }

    fn var_of_cell(&self) -> Vec<u32> {
        let mut v = alloc::vec![0u32; self.cells()];
        for (rank, &cell) in self.order.iter().enumerate() {
            v[cell as usize] = rank as u32;
        }
        v
    }
}

fn assemble_row(mvd: &ResolvedMvd, arity: usize, x: &[u32], y: &[u32], z: &[u32]) -> Row {
    let mut row = alloc::vec![0; arity];
    for (k, &i) in mvd.x.iter().enumerate() {
        row[i] = x[k];
    }
    for (k, &i) in mvd.y.iter().enumerate() {
        row[i] = y[k];
    }
    for (k, &i) in mvd.z.iter().enumerate() {
        row[i] = z[k];
    }
    row
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvdPlan {
    pub schema: Schema,
    pub mvd: ResolvedMvd,
    pub strata: Vec<StratumPlan>,
}

impl MvdPlan {
    pub fn tuple(&self, stratum: usize, cell: usize) -> Row {
        let s = &self.strata[stratum];
        let q = s.ys.len();
        assemble_row(&self.mvd, self.schema.len(), &s.xs[cell / q], &s.ys[cell % q], &s.z)
    }
}

/// Splits a relation into strata and builds each candidate grid.
pub fn plan_mvd(relation: &Relation, mvd: &Mvd) -> Result<MvdPlan> {
    let schema = relation.schema().clone();
    let r = mvd.resolve(&schema)?;
    let mut groups: BTreeMap<Row, Vec<(Row, Row)>> = BTreeMap::new();
    for row in relation.rows() {
        groups.entry(pick(row, &r.z)).or_default().push((pick(row, &r.x), pick(row, &r.y)));
    }
    let mut strata = Vec::with_capacity(groups.len());
    for (z, members) in groups {
        let mut xs: Vec<Row> = members.iter().map(|m| m.0.clone()).collect();
        xs.sort();
        xs.dedup();
        let mut ys: Vec<Row> = members.iter().map(|m| m.1.clone()).collect();
        ys.sort();
        ys.dedup();
        let q = ys.len();
        let mut present = alloc::vec![false; xs.len() * q];
        for (x, y) in &members {
            let i = xs.binary_search(x).expect("x-part is listed");
            let j = ys.binary_search(y).expect("y-part is listed");
            present[i * q + j] = true;
        }
        let mut keyed: Vec<(Row, u32)> = (0..xs.len() * q)
            .map(|c| (assemble_row(&r, schema.len(), &xs[c / q], &ys[c % q], &z), c as u32))
            .collect();
        keyed.sort();
        let order = keyed.into_iter().map(|k| k.1).collect();
        strata.push(StratumPlan { z, xs, ys, present, order });
    }
    Ok(MvdPlan { schema, mvd: r, strata })
}

/// `Π_{XZ}(R) ⋈ Π_{ZY}(R)`, the universe every minimal repair lives in.
pub fn candidate_universe(relation: &Relation, mvd: &Mvd) -> Result<Relation> {
    let r = mvd.resolve(relation.schema())?;
    Ok(relation.mvd_join(&r))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the stratum with the given ordinal.
pub fn stratum_seed(seed: u64, ordinal: usize) -> u64 {
    splitmix(seed ^ splitmix(ordinal as u64))
}

/// Lineage clauses of one stratum in canonical order, as local 0-based
/// variables `(t1, t2, t3)` meaning `¬t1 ∨ ¬t2 ∨ t3`. With `keep` set, only
/// clauses whose canonical index is selected are produced.
fn stratum_clauses(s: &StratumPlan, fraction: f64, seed: u64, cap: u128) -> Result<(Vec<[u32; 3]>, u128)> {
    let total = s.clause_count();
    let wanted: u128 = if fraction >= 1.0 { total } else { libm::ceil(fraction * total as f64) as u128 };
    let wanted = wanted.min(total);
    if wanted > cap {
        return Err(Error::TooManyClauses { count: wanted, cap });
    }
    let var = s.var_of_cell();
    let q = s.ys.len();
    let cell = |i: usize, j: usize| var[i * q + j];
    let mut out = Vec::with_capacity(wanted as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Selection sampling: index k is kept with probability needed/remaining.
    let mut remaining = total;
    let mut needed = wanted;
    let mut take = |rng: &mut ChaCha8Rng| -> bool {
        if needed == 0 {
            remaining -= 1;
            return false;
        }
        let hit = needed == remaining || (rng.gen_range(0..remaining as u64) as u128) < needed;
        remaining -= 1;
        if hit {
            needed -= 1;
        }
        hit
    };
    let sampled = wanted < total;
    for p1 in 0..s.xs.len() {
        for p2 in p1 + 1..s.xs.len() {
            for q1 in 0..q {
                for q2 in 0..q {
                    if q1 == q2 {
                        continue;
                    }
                    let (t1, t2) = (cell(p1, q1), cell(p2, q2));
                    for t3 in [cell(p1, q2), cell(p2, q1)] {
                        if !sampled || take(&mut rng) {
                            let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                            out.push([a, b, t3]);
                        }
                    }
                }
            }
        }
    }
    Ok((out, total))
}

fn stratum_problem(s: &StratumPlan, clauses: &[[u32; 3]], forbid_insertions: bool) -> WcnfProblem {
    let n = s.cells();
    let mut hard: Vec<Vec<Lit>> =
        clauses.iter().map(|c| alloc::vec![-(c[0] as Lit + 1), -(c[1] as Lit + 1), c[2] as Lit + 1]).collect();
    let mut soft = Vec::new();
    for (rank, &cell) in s.order.iter().enumerate() {
        let v = rank as Lit + 1;
        if s.present[cell as usize] {
            soft.push((1, alloc::vec![v]));
        } else if forbid_insertions {
            hard.push(alloc::vec![-v]);
        } else {
            soft.push((1, alloc::vec![-v]));
        }
    }
    WcnfProblem { num_vars: n as u32, hard, soft, legend: Vec::new() }
}

/// Exact stratum repair by enumerating the kept subset of the narrow side.
/// Returns the kept cells (row-major) and the delta.
pub fn rectangle_repair(s: &StratumPlan, forbid_insertions: bool) -> (Vec<bool>, u64) {
    let (p, q) = (s.xs.len(), s.ys.len());
    let transpose = q > p;
    let (rows, cols) = if transpose { (q, p) } else { (p, q) };
    let at = |r: usize, c: usize| if transpose { s.present[c * q + r] } else { s.present[r * q + c] };
    assert!(cols <= 63, "narrow side too wide for enumeration");
    let masks: Vec<u64> = (0..rows).map(|r| (0..cols).fold(0u64, |m, c| if at(r, c) { m | 1 << c } else { m })).collect();
    let totals: Vec<u32> = masks.iter().map(|m| m.count_ones()).collect();
    let base: u64 = totals.iter().map(|&t| t as u64).sum();
    let mut best = (u64::MAX, 0u64);
    for cm in 0u64..(1u64 << cols) {
        let width = cm.count_ones() as i64;
        let mut cost = base as i64;
        for r in 0..rows {
            let hits = (masks[r] & cm).count_ones() as i64;
            let gain = width - 2 * hits;
            let allowed = !forbid_insertions || hits == width;
            if allowed && gain <= 0 && width > 0 {
                cost += gain;
            }
        }
        if (cost as u64) < best.0 {
            best = (cost as u64, cm);
        }
    }
    let cm = best.1;
    let width = cm.count_ones() as i64;
    let mut keep = alloc::vec![false; p * q];
    for r in 0..rows {
        let hits = (masks[r] & cm).count_ones() as i64;
        let allowed = !forbid_insertions || hits == width;
        if allowed && width > 0 && width - 2 * hits <= 0 {
            for c in 0..cols {
                if cm >> c & 1 == 1 {
                    let idx = if transpose { c * q + r } else { r * q + c };
                    keep[idx] = true;
                }
            }
        }
    }
    (keep, best.0)
}

/// Deletion-only repair of the given clauses: repeatedly drop the later
/// antecedent of a violated clause.
fn greedy_deletion(s: &StratumPlan, clauses: &[[u32; 3]]) -> Vec<bool> {
    let mut on: Vec<bool> = s.order.iter().map(|&c| s.present[c as usize]).collect();
    loop {
        let mut changed = false;
        for c in clauses {
            if on[c[0] as usize] && on[c[1] as usize] && !on[c[2] as usize] {
                on[c[1] as usize] = false;
                changed = true;
            }
        }
        if !changed {
            return on;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverUsed {
    Trivial,
    BranchAndBound,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumOutcome {
    /// Row-major kept cells.
    pub keep: Vec<bool>,
    pub optimal: bool,
    pub nodes: u64,
    pub clauses_total: u128,
    pub clauses_used: u64,
    pub solver: SolverUsed,
}

/// Repairs one stratum. Pure: the result depends only on the plan, the
/// ordinal and the options.
pub fn solve_stratum(plan: &MvdPlan, ordinal: usize, opts: &RepairOptions, stop: &dyn Fn() -> bool) -> Result<StratumOutcome> {
    let s = &plan.strata[ordinal];
    let total = s.clause_count();
    if total == 0 {
        return Ok(StratumOutcome {
            keep: s.present.clone(),
            optimal: true,
            nodes: 0,
            clauses_total: 0,
            clauses_used: 0,
            solver: SolverUsed::Trivial,
        });
    }
    let narrow = s.xs.len().min(s.ys.len());
    let rectangle_ok = narrow <= opts.rectangle_limit;
    let full = opts.soft_fraction >= 1.0;
    let use_rectangle = full
        && match opts.solver {
            SolverChoice::Rectangle => {
                if !rectangle_ok {
                    return Err(Error::InvalidParameter(format!(
                        "stratum {ordinal} has a narrow side of {narrow}, above rectangle_limit {}",
                        opts.rectangle_limit
                    )));
                }
                true
            }
            SolverChoice::BranchAndBound => false,
            SolverChoice::Auto => s.cells() > opts.small_stratum && rectangle_ok,
        };
    if use_rectangle {
        let (keep, _) = rectangle_repair(s, opts.forbid_insertions);
        return Ok(StratumOutcome {
            keep,
            optimal: true,
            nodes: 0,
            clauses_total: total,
            clauses_used: 0,
            solver: SolverUsed::Rectangle,
        });
    }

    let (clauses, _) = stratum_clauses(s, opts.soft_fraction, stratum_seed(opts.seed, ordinal), opts.clause_cap)?;
    let problem = stratum_problem(s, &clauses, opts.forbid_insertions);
    // Seed the bound with the cheaper of two repairs that satisfy every
    // kept clause. Greedy deletion wins when most clauses were dropped.
    let mut initial = greedy_deletion(s, &clauses);
    if rectangle_ok {
        let (keep, _) = rectangle_repair(s, opts.forbid_insertions);
        let rect: Vec<bool> = s.order.iter().map(|&c| keep[c as usize]).collect();
        if problem.cost(&rect) < problem.cost(&initial) {
            initial = rect;
        }
    }
    let sol = solve(&problem, opts.budget, Some(&initial), stop)?;
    let mut keep = alloc::vec![false; s.cells()];
    for (rank, &cell) in s.order.iter().enumerate() {
        keep[cell as usize] = sol.assignment[rank];
    }
    Ok(StratumOutcome {
        keep,
        optimal: sol.optimal && full,
        nodes: sol.nodes,
        clauses_total: total,
        clauses_used: clauses.len() as u64,
        solver: SolverUsed::BranchAndBound,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairStats {
    pub strata: usize,
    pub hard_clauses_total: u128,
    pub hard_clauses_used: u128,
    pub nodes: u64,
    /// Flipped tuple variables (keyed tuples for CI repairs).
    pub lineage_delta: u64,
    pub rectangle_strata: usize,
    pub branch_and_bound_strata: usize,
}

/// Outcome of a repair, at bag level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairResult {
    pub repaired: Bag,
    pub inserted: Bag,
    pub deleted: Bag,
    pub delta: u64,
    pub optimal: bool,
    pub stats: RepairStats,
}

impl RepairResult {
    pub fn from_bags(original: &Bag, repaired: Bag, optimal: bool, stats: RepairStats) -> Self {
        let inserted = repaired.minus(original);
        let deleted = original.minus(&repaired);
        let delta = inserted.total() + deleted.total();
        RepairResult { repaired, inserted, deleted, delta, optimal, stats }
    }
}

/// Work split for an MVD or CI repair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairPlan {
    pub original: Bag,
    pub keyed: bool,
    pub plan: MvdPlan,
}

impl RepairPlan {
    /// Merges per-stratum outcomes, given in stratum order.
    pub fn assemble(&self, outcomes: &[StratumOutcome]) -> Result<RepairResult> {
        if outcomes.len() != self.plan.strata.len() {
            return Err(Error::InvalidParameter("one outcome per stratum is required".into()));
        }
        let mut rows = Vec::new();
        let mut stats = RepairStats { strata: outcomes.len(), ..RepairStats::default() };
        let mut optimal = true;
        for (k, (s, o)) in self.plan.strata.iter().zip(outcomes).enumerate() {
            for cell in 0..s.cells() {
                if o.keep[cell] {
                    rows.push(self.plan.tuple(k, cell));
                }
                if o.keep[cell] != s.present[cell] {
                    stats.lineage_delta += 1;
                }
            }
            optimal &= o.optimal;
            stats.hard_clauses_total += o.clauses_total;
            stats.hard_clauses_used += o.clauses_used as u128;
            stats.nodes += o.nodes;
            match o.solver {
                SolverUsed::Rectangle => stats.rectangle_strata += 1,
                SolverUsed::BranchAndBound => stats.branch_and_bound_strata += 1,
                SolverUsed::Trivial => {}
            }
        }
        let relation = Relation::from_rows(self.plan.schema.clone(), rows)?;
        let repaired = if self.keyed { KeyedSet::from_relation(&relation)?.to_bag() } else { relation.to_bag() };
        Ok(RepairResult::from_bags(&self.original, repaired, optimal, stats))
    }

    pub fn solve_sequential(&self, opts: &RepairOptions, stop: &dyn Fn() -> bool) -> Result<RepairResult> {
        opts.validate()?;
        let outcomes = (0..self.plan.strata.len())
            .map(|k| solve_stratum(&self.plan, k, opts, stop))
            .collect::<Result<Vec<_>>>()?;
        self.assemble(&outcomes)
    }
}

pub fn plan_mvd_repair(relation: &Relation, mvd: &Mvd) -> Result<RepairPlan> {
    Ok(RepairPlan { original: relation.to_bag(), keyed: false, plan: plan_mvd(relation, mvd)? })
}

/// The keyed relation and the MVD `z ↠ K x` that a saturated CI becomes.
pub fn keyed_instance(bag: &Bag, ci: &CiStatement) -> Result<(Relation, Mvd)> {
    let schema = bag.schema();
    ci.resolve_saturated(schema)?;
    if schema.names().any(|n| n == KEY_ATTRIBUTE) {
        return Err(Error::DuplicateAttribute(KEY_ATTRIBUTE.to_string()));
    }
    let relation = KeyedSet::from_bag(bag).to_relation();
    let mut x = alloc::vec![KEY_ATTRIBUTE.to_string()];
    x.extend(ci.x.iter().cloned());
    Ok((relation, Mvd { z: ci.z.clone(), x, y: ci.y.clone() }))
}

pub fn plan_ci_repair(bag: &Bag, ci: &CiStatement) -> Result<RepairPlan> {
    let (relation, mvd) = keyed_instance(bag, ci)?;
    Ok(RepairPlan { original: bag.clone(), keyed: true, plan: plan_mvd(&relation, &mvd)? })
}

/// Minimal repair of a relation for an MVD.
pub fn repair_mvd(relation: &Relation, mvd: &Mvd, opts: &RepairOptions) -> Result<RepairResult> {
    plan_mvd_repair(relation, mvd)?.solve_sequential(opts, &|| false)
}

/// Minimal bag repair for a saturated CI, one MVD repair per stratum of the
/// keyed relation.
pub fn repair_ci(bag: &Bag, ci: &CiStatement, opts: &RepairOptions) -> Result<RepairResult> {
    plan_ci_repair(bag, ci)?.solve_sequential(opts, &|| false)
}

/// Whole-relation lineage encoding with global variable numbering
/// (strata in order, tuple order inside each).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageEncoding {
    pub problem: WcnfProblem,
    pub plan: RepairPlan,
    /// `offsets[k]` is the first variable (0-based) of stratum `k`.
    pub offsets: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub clause_cap: u128,
    pub forbid_insertions: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { clause_cap: 50_000_000, forbid_insertions: false }
    }
}

pub fn encode_plan(plan: RepairPlan, opts: &EncodeOptions) -> Result<LineageEncoding> {
    let total: u128 = plan.plan.strata.iter().map(StratumPlan::clause_count).sum();
    if total > opts.clause_cap {
        return Err(Error::TooManyClauses { count: total, cap: opts.clause_cap });
    }
    let mut problem = WcnfProblem::default();
    let mut offsets = Vec::new();
    let schema = &plan.plan.schema;
    for (k, s) in plan.plan.strata.iter().enumerate() {
        let offset = problem.num_vars as usize;
        offsets.push(offset);
        let (clauses, _) = stratum_clauses(s, 1.0, 0, opts.clause_cap)?;
        let local = stratum_problem(s, &clauses, opts.forbid_insertions);
        let shift = |l: Lit| if l > 0 { l + offset as Lit } else { l - offset as Lit };
        problem.hard.extend(local.hard.into_iter().map(|c| c.into_iter().map(shift).collect()));
        problem.soft.extend(local.soft.into_iter().map(|(w, c)| (w, c.into_iter().map(shift).collect())));
        for &cell in &s.order {
            problem.legend.push(schema.render(&plan.plan.tuple(k, cell as usize)));
        }
        problem.num_vars += s.cells() as u32;
    }
    Ok(LineageEncoding { problem, plan, offsets })
}

/// Lineage encoding of a relation and an MVD.
pub fn encode(relation: &Relation, mvd: &Mvd, opts: &EncodeOptions) -> Result<LineageEncoding> {
    encode_plan(plan_mvd_repair(relation, mvd)?, opts)
}

/// Lineage encoding of the keyed relation for a saturated CI.
pub fn encode_ci(bag: &Bag, ci: &CiStatement, opts: &EncodeOptions) -> Result<LineageEncoding> {
    encode_plan(plan_ci_repair(bag, ci)?, opts)
}

impl LineageEncoding {
    /// Turns a full assignment (index = variable - 1) into a repair. The
    /// assignment must satisfy every hard clause.
    pub fn decode(&self, assignment: &[bool], optimal: bool) -> Result<RepairResult> {
        if assignment.len() != self.problem.num_vars as usize {
            return Err(Error::ArityMismatch { expected: self.problem.num_vars as usize, found: assignment.len() });
        }
        if self.problem.cost(assignment).is_none() {
            return Err(Error::Unsatisfiable);
        }
        let outcomes: Vec<StratumOutcome> = self
            .plan
            .plan
            .strata
            .iter()
            .zip(&self.offsets)
            .map(|(s, &off)| {
                let mut keep = alloc::vec![false; s.cells()];
                for (rank, &cell) in s.order.iter().enumerate() {
                    keep[cell as usize] = assignment[off + rank];
                }
                StratumOutcome {
                    keep,
                    optimal,
                    nodes: 0,
                    clauses_total: s.clause_count(),
                    clauses_used: s.clause_count() as u64,
                    solver: SolverUsed::BranchAndBound,
                }
            })
            .collect();
        self.plan.assemble(&outcomes)
    }
}

/// Schema of the keyed relation built from `schema`.
pub fn keyed_schema(schema: &Schema, max_key: u64) -> Result<Schema> {
    let mut attrs = alloc::vec![Attribute { name: KEY_ATTRIBUTE.to_string(), domain: (1..=max_key.max(1)).map(|k| format!("{k}")).collect() }];
    attrs.extend(schema.attributes().iter().cloned());
    Schema::new(attrs)
}
