//! Associational fairness metrics, odds-ratio discrimination, and
//! data-level certificates.
//!
//! Every value is computed exactly and serialized as a `"p/q"` string next
//! to an `f64` approximation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::causal::FairnessApplication;
use crate::dataset::{pick, Bag, Row, Schema, Value};
use crate::error::{Error, Result};
use crate::independence::{grow_shrink_boundary, holds_resolved, resolved_gap, CiStatement};
use crate::rational::{self, Rational};

/// Column roles for an audit. `outcome` is the audited prediction; when it
/// is absent the label itself is audited and the error-rate metrics are
/// unavailable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRoles {
    pub protected: String,
    pub label: String,
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub admissible: Vec<String>,
    #[serde(default)]
    pub inadmissible: Vec<String>,
    /// Domain label coded as `S = 1`. Defaults to the second domain value.
    #[serde(default)]
    pub protected_level: Option<String>,
    /// Domain label coded as `O = 1` and `Y = 1`.
    #[serde(default)]
    pub positive_label: Option<String>,
}

impl AuditRoles {
    /// The fairness application seen by the training data: the label plays
    /// the outcome and a prediction column, if any, is left out.
    pub fn application(&self) -> FairnessApplication {
        FairnessApplication {
            protected: self.protected.clone(),
            outcome: self.label.clone(),
            admissible: self.admissible.clone(),
            inadmissible: self.inadmissible.clone(),
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let names: Vec<&str> = schema.names().filter(|n| Some(*n) != self.outcome.as_deref()).collect();
        if let Some(o) = &self.outcome {
            schema.index_of(o)?;
            if o == &self.label || o == &self.protected {
                return Err(Error::InvalidRoles(format!("`{o}` has more than one role")));
            }
        }
        self.application().validate(&names)
    }

    fn audited(&self) -> &str {
        self.outcome.as_deref().unwrap_or(&self.label)
    }
}

/// A column coded as 0/1: rows whose value equals `positive` are 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binary {
    pub index: usize,
    pub positive: Value,
}

impl Binary {
    /// Without an explicit level the attribute must have exactly two
    /// values, and the second one is coded 1.
    pub fn resolve(schema: &Schema, name: &str, positive: Option<&str>) -> Result<Self> {
        let index = schema.index_of(name)?;
        let positive = match positive {
            Some(label) => schema.value_of(index, label)?,
            None if schema.domain_size(index) == 2 => 1,
            None => return Err(Error::NotBinary(name.to_string())),
        };
        Ok(Binary { index, positive })
    }

    fn code(&self, row: &[Value]) -> usize {
        usize::from(row[self.index] == self.positive)
    }
}

/// Counts indexed `[s][o]`.
type Cells = [[u64; 2]; 2];

fn tabulate(bag: &Bag, s: &Binary, o: &Binary, filter: Option<(&Binary, usize)>, ctx: &[usize]) -> BTreeMap<Row, Cells> {
    let mut out: BTreeMap<Row, Cells> = BTreeMap::new();
    for (row, n) in bag.iter() {
        if let Some((y, want)) = filter {
            if y.code(row) != want {
                continue;
            }
        }
        let cell = out.entry(pick(row, ctx)).or_default();
        cell[s.code(row)][o.code(row)] += n;
    }
    out
}

/// `Pr(O = target | S = group)` or `None` when the group is empty.
fn rate(c: &Cells, group: usize, target: usize) -> Option<Rational> {
    let n = c[group][0] + c[group][1];
    (n > 0).then(|| rational::ratio(c[group][target], n))
}

fn render_context(schema: &Schema, ctx: &[usize], values: &[Value]) -> Vec<(String, String)> {
    ctx.iter()
        .zip(values)
        .map(|(&i, &v)| (schema.attribute(i).name.clone(), schema.label(i, v).to_string()))
        .collect()
}

/// Per-stratum conditional rates behind one metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumGap {
    pub context: Vec<(String, String)>,
    pub support: u64,
    pub weight: String,
    pub rate_protected: String,
    pub rate_reference: String,
    pub gap: String,
}

/// One row of the metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub available: bool,
    pub value: Option<String>,
    pub approx: Option<f64>,
    pub strata: Vec<StratumGap>,
    /// Contexts where one group has no rows.
    pub skipped: Vec<Vec<(String, String)>>,
    pub note: Option<String>,
}

impl Metric {
    fn unavailable(name: &str, note: &str) -> Self {
        Metric {
            name: name.to_string(),
            available: false,
            value: None,
            approx: None,
            strata: Vec::new(),
            skipped: Vec::new(),
            note: Some(note.to_string()),
        }
    }

    /// The exact value, if defined.
    pub fn exact(&self) -> Option<Rational> {
        self.value.as_deref().and_then(rational::parse_fraction)
    }
}

/// Exact result of a (possibly conditional) rate difference.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    /// `None` when no stratum has both groups.
    pub value: Option<Rational>,
    pub strata: Vec<(Row, u64, Rational, Rational, Rational)>,
    pub skipped: Vec<Row>,
}

/// `E_a[Pr(O=t | S=1, F, a) - Pr(O=t | S=0, F, a)]` where `F` is the optional
/// filter on the label. Strata lacking either group are skipped and the
/// `Pr(a)` weights renormalized over the rest.
pub fn rate_gap(bag: &Bag, s: &Binary, o: &Binary, filter: Option<(&Binary, usize)>, target: usize, ctx: &[usize]) -> GapSummary {
    let weights = bag.project_indices(ctx);
    let table = tabulate(bag, s, o, filter, ctx);
    let mut strata = Vec::new();
    let mut skipped = Vec::new();
    let mut mass = 0u64;
    for (a, cells) in &table {
        match (rate(cells, 1, target), rate(cells, 0, target)) {
            (Some(p1), Some(p0)) => {
                let w = weights.count(a);
                mass += w;
                strata.push((a.clone(), w, p1, p0));
            }
            _ => skipped.push(a.clone()),
        }
    }
    if mass == 0 {
        return GapSummary { value: None, strata: Vec::new(), skipped };
    }
    let mut value = rational::zero();
    let strata = strata
        .into_iter()
        .map(|(a, w, p1, p0)| {
            let wr = rational::ratio(w, mass);
            value += &wr * (&p1 - &p0);
            (a, w, wr, p1, p0)
        })
        .collect();
    GapSummary { value: Some(value), strata, skipped }
}

fn summary_metric(name: &str, schema: &Schema, ctx: &[usize], g: GapSummary) -> Metric {
    let strata = g
        .strata
        .iter()
        .map(|(a, n, w, p1, p0)| StratumGap {
            context: render_context(schema, ctx, a),
            support: *n,
            weight: rational::format(w),
            rate_protected: rational::format(p1),
            rate_reference: rational::format(p0),
            gap: rational::format(&(p1 - p0)),
        })
        .collect();
    Metric {
        name: name.to_string(),
        available: g.value.is_some(),
        approx: g.value.as_ref().map(rational::to_f64),
        value: g.value.as_ref().map(rational::format),
        strata,
        skipped: g.skipped.iter().map(|a| render_context(schema, ctx, a)).collect(),
        note: None,
    }
}

fn group_name(schema: &Schema, s: &Binary, group: usize) -> String {
    let name = &schema.attribute(s.index).name;
    if group == 1 {
        format!("{name}={}", schema.label(s.index, s.positive))
    } else {
        format!("{name}!={}", schema.label(s.index, s.positive))
    }
}

fn unconditional(bag: &Bag, s: &Binary, o: &Binary, filter: Option<(&Binary, usize)>, target: usize) -> Result<Rational> {
    let cells = tabulate(bag, s, o, filter, &[]).remove(&Row::new()).unwrap_or_default();
    let p1 = rate(&cells, 1, target).ok_or_else(|| Error::AbsentGroup(group_name(bag.schema(), s, 1)))?;
    let p0 = rate(&cells, 0, target).ok_or_else(|| Error::AbsentGroup(group_name(bag.schema(), s, 0)))?;
    Ok(p1 - p0)
}

/// `Pr(O=1 | S=1) - Pr(O=1 | S=0)`.
pub fn demographic_parity(bag: &Bag, s: &Binary, o: &Binary) -> Result<Rational> {
    unconditional(bag, s, o, None, 1)
}

/// `Pr(O=1 | S=1, Y=1) - Pr(O=1 | S=0, Y=1)`.
pub fn true_positive_balance(bag: &Bag, s: &Binary, o: &Binary, y: &Binary) -> Result<Rational> {
    unconditional(bag, s, o, Some((y, 1)), 1)
}

/// `Pr(O=0 | S=1, Y=0) - Pr(O=0 | S=0, Y=0)`.
pub fn true_negative_balance(bag: &Bag, s: &Binary, o: &Binary, y: &Binary) -> Result<Rational> {
    unconditional(bag, s, o, Some((y, 0)), 0)
}

/// CDP, CTPB and CTNB over the context attributes; the last two need `y`.
pub fn conditional_metrics(bag: &Bag, s: &Binary, o: &Binary, y: Option<&Binary>, ctx: &[usize]) -> Vec<Metric> {
    let schema = bag.schema();
    let mut out = alloc::vec![summary_metric("CDP", schema, ctx, rate_gap(bag, s, o, None, 1, ctx))];
    match y {
        Some(y) => {
            out.push(summary_metric("CTPB", schema, ctx, rate_gap(bag, s, o, Some((y, 1)), 1, ctx)));
            out.push(summary_metric("CTNB", schema, ctx, rate_gap(bag, s, o, Some((y, 0)), 0, ctx)));
        }
        None => {
            out.push(Metric::unavailable("CTPB", "no prediction column: label and outcome coincide"));
            out.push(Metric::unavailable("CTNB", "no prediction column: label and outcome coincide"));
        }
    }
    out
}

/// One context of the odds-ratio table with `a = #(S=0,O=1)`,
/// `b = #(S=0,O=0)`, `c = #(S=1,O=1)`, `d = #(S=1,O=0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodStratum {
    pub context: Vec<(String, String)>,
    pub counts: [u64; 4],
    /// `ad / bc` on raw counts, absent when `bc = 0`.
    pub delta: Option<String>,
    /// The ratio used for averaging: raw, or continuity-corrected when a
    /// cell is empty.
    pub delta_used: String,
    pub delta_approx: f64,
    pub corrected: bool,
    /// `ad = bc`, i.e. `S ⫫ O` inside the stratum.
    pub odds_equal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodReport {
    pub context_attrs: Vec<String>,
    pub strata: Vec<RodStratum>,
    pub skipped: Vec<Vec<(String, String)>>,
    /// Mantel-Haenszel pooled odds ratio.
    pub pooled: Option<String>,
    pub pooled_approx: Option<f64>,
    pub pooled_corrected: bool,
    /// Arithmetic mean of `delta_used` over strata.
    pub mean_delta: Option<String>,
    pub mean_approx: Option<f64>,
    /// `|1 - min(pooled, 1/pooled)|`, clamped to 1; 0 means none observed.
    pub score: Option<String>,
    pub score_approx: Option<f64>,
}

impl RodReport {
    pub fn pooled_exact(&self) -> Option<Rational> {
        self.pooled.as_deref().and_then(rational::parse_fraction)
    }

    pub fn score_exact(&self) -> Option<Rational> {
        self.score.as_deref().and_then(rational::parse_fraction)
    }
}

/// Normalized discrimination score of an odds ratio.
pub fn rod_score(delta: &Rational) -> Rational {
    if delta.is_zero() {
        return rational::one();
    }
    let inv = delta.recip();
    let m = if *delta < inv { delta.clone() } else { inv };
    let s = rational::one() - m;
    if s > rational::one() {
        rational::one()
    } else {
        s
    }
}

fn odds_cells(c: &Cells, corrected: bool) -> [Rational; 4] {
    let raw = [c[0][1], c[0][0], c[1][1], c[1][0]];
    raw.map(|v| {
        let r = rational::ratio(v, 1);
        if corrected {
            r + rational::ratio(1, 2)
        } else {
            r
        }
    })
}

/// Per-stratum odds ratios of the positive outcome across the two groups,
/// pooled by Mantel-Haenszel. Strata lacking either group are skipped.
pub fn rod<S: AsRef<str>>(bag: &Bag, s: &Binary, o: &Binary, context: &[S]) -> Result<RodReport> {
    let schema = bag.schema();
    let ctx = schema.indices(context)?;
    if ctx.contains(&s.index) || ctx.contains(&o.index) {
        return Err(Error::OverlappingSets(format!("{} / {}", schema.attribute(s.index).name, schema.attribute(o.index).name)));
    }
    let table = tabulate(bag, s, o, None, &ctx);
    let mut strata = Vec::new();
    let mut kept: Vec<Cells> = Vec::new();
    let mut skipped = Vec::new();
    let mut sum = rational::zero();
    for (a, cells) in &table {
        let n0 = cells[0][0] + cells[0][1];
        let n1 = cells[1][0] + cells[1][1];
        if n0 == 0 || n1 == 0 {
            skipped.push(render_context(schema, &ctx, a));
            continue;
        }
        let [ra, rb, rc, rd] = odds_cells(cells, false);
        let raw = (!(&rb * &rc).is_zero()).then(|| (&ra * &rd) / (&rb * &rc));
        let corrected = [cells[0][1], cells[0][0], cells[1][1], cells[1][0]].contains(&0);
        let used = if corrected {
            let [a2, b2, c2, d2] = odds_cells(cells, true);
            (a2 * d2) / (b2 * c2)
        } else {
            raw.clone().expect("no empty cell")
        };
        sum += &used;
        strata.push(RodStratum {
            context: render_context(schema, &ctx, a),
            counts: [cells[0][1], cells[0][0], cells[1][1], cells[1][0]],
            delta: raw.as_ref().map(rational::format),
            delta_approx: rational::to_f64(&used),
            delta_used: rational::format(&used),
            corrected,
            odds_equal: ra * rd == rb * rc,
        });
        kept.push(*cells);
    }
    let mantel_haenszel = |corrected: bool| {
        let mut num = rational::zero();
        let mut den = rational::zero();
        for c in &kept {
            let [a, b, cc, d] = odds_cells(c, corrected);
            let n = &a + &b + &cc + &d;
            num += &a * &d / &n;
            den += &b * &cc / &n;
        }
        (num, den)
    };
    let (pooled, pooled_corrected) = if kept.is_empty() {
        (None, false)
    } else {
        let (num, den) = mantel_haenszel(false);
        if num.is_zero() || den.is_zero() {
            let (num, den) = mantel_haenszel(true);
            (Some(num / den), true)
        } else {
            (Some(num / den), false)
        }
    };
    let mean = (!strata.is_empty()).then(|| sum / rational::ratio(strata.len() as u64, 1));
    let score = pooled.as_ref().map(rod_score);
    Ok(RodReport {
        context_attrs: ctx.iter().map(|&i| schema.attribute(i).name.clone()).collect(),
        strata,
        skipped,
        pooled_approx: pooled.as_ref().map(rational::to_f64),
        pooled: pooled.as_ref().map(rational::format),
        pooled_corrected,
        mean_approx: mean.as_ref().map(rational::to_f64),
        mean_delta: mean.as_ref().map(rational::format),
        score_approx: score.as_ref().map(rational::to_f64),
        score: score.as_ref().map(rational::format),
    })
}

/// Admissible attributes in the Markov boundary of `outcome`, found by
/// Grow-Shrink at `tolerance`. This is the default odds-ratio context.
pub fn rod_context(bag: &Bag, roles: &AuditRoles, tolerance: &Rational) -> Result<Vec<String>> {
    let mb = grow_shrink_boundary(bag, roles.audited(), tolerance)?;
    let admissible: BTreeSet<&str> = roles.admissible.iter().map(String::as_str).collect();
    Ok(mb.boundary.into_iter().filter(|n| admissible.contains(n.as_str())).collect())
}

/// Full audit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protected: String,
    pub protected_level: String,
    pub outcome: String,
    pub positive_label: String,
    pub label: Option<String>,
    pub context: Vec<String>,
    pub total: u64,
    /// Rows with `S = 0` and `S = 1`.
    pub group_support: [u64; 2],
    pub metrics: Vec<Metric>,
    pub rod: RodReport,
}

impl MetricReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

fn plain_metric(name: &str, r: Result<Rational>) -> Metric {
    match r {
        Ok(v) => Metric {
            name: name.to_string(),
            available: true,
            approx: Some(rational::to_f64(&v)),
            value: Some(rational::format(&v)),
            strata: Vec::new(),
            skipped: Vec::new(),
            note: None,
        },
        Err(e) => Metric::unavailable(name, &e.to_string()),
    }
}

/// Every associational metric plus the odds-ratio report. `context` feeds
/// both the conditional metrics and the odds ratio; it defaults to the
/// admissible attributes.
pub fn audit(bag: &Bag, roles: &AuditRoles, context: Option<&[String]>) -> Result<MetricReport> {
    roles.validate(bag.schema())?;
    let schema = bag.schema();
    let level = roles.positive_label.as_deref();
    let s = Binary::resolve(schema, &roles.protected, roles.protected_level.as_deref())?;
    let o = Binary::resolve(schema, roles.audited(), level)?;
    let y = match &roles.outcome {
        Some(_) => Some(Binary::resolve(schema, &roles.label, level)?),
        None => None,
    };
    let context: Vec<String> = context.map(<[String]>::to_vec).unwrap_or_else(|| roles.admissible.clone());
    let ctx = schema.indices(&context)?;
    if ctx.contains(&s.index) || ctx.contains(&o.index) {
        return Err(Error::InvalidRoles("context must not contain the protected attribute or the outcome".into()));
    }
    let mut group_support = [0u64; 2];
    for (row, n) in bag.iter() {
        group_support[s.code(row)] += n;
    }
    let mut metrics = alloc::vec![plain_metric("DP", demographic_parity(bag, &s, &o))];
    match &y {
        Some(y) => {
            metrics.push(plain_metric("TPB", true_positive_balance(bag, &s, &o, y)));
            metrics.push(plain_metric("TNB", true_negative_balance(bag, &s, &o, y)));
        }
        None => {
            metrics.push(Metric::unavailable("TPB", "no prediction column: label and outcome coincide"));
            metrics.push(Metric::unavailable("TNB", "no prediction column: label and outcome coincide"));
        }
    }
    metrics.extend(conditional_metrics(bag, &s, &o, y.as_ref(), &ctx));
    let rod = rod(bag, &s, &o, &context)?;
    Ok(MetricReport {
        protected: roles.protected.clone(),
        protected_level: schema.label(s.index, s.positive).to_string(),
        outcome: roles.audited().to_string(),
        positive_label: schema.label(o.index, o.positive).to_string(),
        label: roles.outcome.as_ref().map(|_| roles.label.clone()),
        context,
        total: bag.total(),
        group_support,
        metrics,
        rod,
    })
}

/// One CI check inside a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiCheck {
    pub ci: CiStatement,
    pub applicable: bool,
    pub holds: bool,
    pub gap: String,
    pub gap_approx: f64,
}

fn ci_check(bag: &Bag, ci: CiStatement, applicable: bool, tolerance: &Rational) -> Result<CiCheck> {
    let r = ci.resolve(bag.schema())?;
    let gap = resolved_gap(bag, &r);
    let holds = applicable && holds_resolved(bag, &r, tolerance);
    Ok(CiCheck { ci, applicable, holds, gap_approx: rational::to_f64(&gap), gap: rational::format(&gap) })
}

/// Outcome of the sufficient-condition check on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub label: String,
    pub training_attrs: Vec<String>,
    /// `(Y ⫫ X∩I | X∩A)`.
    pub condition_a: CiCheck,
    /// `X ⊇ A` and `(Y ⫫ I | A)`.
    pub condition_b: CiCheck,
    pub fair: bool,
}

/// Checks both sufficient conditions for training on `training` columns.
/// The protected attribute counts as inadmissible.
pub fn certify_fair_training<S: AsRef<str>>(bag: &Bag, app: &FairnessApplication, training: &[S], tolerance: &Rational) -> Result<Certificate> {
    let schema = bag.schema();
    let names: Vec<&str> = schema.names().collect();
    app.validate(&names)?;
    let mut x: BTreeSet<String> = BTreeSet::new();
    for t in training {
        let t = t.as_ref();
        schema.index_of(t)?;
        if t == app.outcome {
            return Err(Error::InvalidRoles(format!("the label `{t}` cannot be a training attribute")));
        }
        x.insert(t.to_string());
    }
    let inadmissible: Vec<String> = core::iter::once(app.protected.clone()).chain(app.inadmissible.iter().cloned()).collect();
    let xi: Vec<String> = inadmissible.iter().filter(|n| x.contains(*n)).cloned().collect();
    let xa: Vec<String> = app.admissible.iter().filter(|n| x.contains(*n)).cloned().collect();
    let label = alloc::vec![app.outcome.clone()];
    let condition_a = ci_check(bag, CiStatement { x: label.clone(), y: xi, z: xa }, true, tolerance)?;
    let covers = app.admissible.iter().all(|a| x.contains(a));
    let condition_b = ci_check(bag, CiStatement { x: label.clone(), y: inadmissible, z: app.admissible.clone() }, covers, tolerance)?;
    Ok(Certificate {
        label: app.outcome.clone(),
        training_attrs: x.into_iter().collect(),
        fair: condition_a.holds || condition_b.holds,
        condition_a,
        condition_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    /// Largest `|Pr_test(s,i|a) - Pr_train(s,i|a)|` over shared contexts.
    pub max_gap: String,
    pub max_gap_approx: f64,
    pub shared_contexts: usize,
    pub train_only_contexts: usize,
    pub test_only_contexts: usize,
    /// No admissible context is observed in both bags.
    pub disjoint: bool,
    pub train_ci: CiCheck,
    pub test_ci: CiCheck,
    /// Train satisfies the CI and the conditional gap is within tolerance,
    /// so the test-side CI is implied.
    pub premise_holds: bool,
}

/// Compares `Pr(s, i | a)` between train and test and checks the label CI
/// `(Y ⫫ S,I | A)` on both sides.
pub fn generalization_check(train: &Bag, test: &Bag, app: &FairnessApplication, tolerance: &Rational) -> Result<GeneralizationReport> {
    if train.schema() != test.schema() {
        return Err(Error::InvalidParameter("train and test bags have different schemas".into()));
    }
    let schema = train.schema();
    let names: Vec<&str> = schema.names().collect();
    app.validate(&names)?;
    let a = schema.indices(&app.admissible)?;
    let mut si_names = alloc::vec![app.protected.clone()];
    si_names.extend(app.inadmissible.iter().cloned());
    let si = schema.indices(&si_names)?;
    let conditionals = |bag: &Bag| {
        let mut by_a: BTreeMap<Row, (u64, BTreeMap<Row, u64>)> = BTreeMap::new();
        for (row, n) in bag.iter() {
            let e = by_a.entry(pick(row, &a)).or_default();
            e.0 += n;
            *e.1.entry(pick(row, &si)).or_default() += n;
        }
        by_a
    };
    let tr = conditionals(train);
    let te = conditionals(test);
    let mut gap = rational::zero();
    let mut shared = 0;
    for (ctx, (n_tr, m_tr)) in &tr {
        let Some((n_te, m_te)) = te.get(ctx) else { continue };
        shared += 1;
        let keys: BTreeSet<&Row> = m_tr.keys().chain(m_te.keys()).collect();
        for k in keys {
            let p = rational::ratio(m_tr.get(k).copied().unwrap_or(0), *n_tr);
            let q = rational::ratio(m_te.get(k).copied().unwrap_or(0), *n_te);
            let d = rational::abs_diff(&p, &q);
            if d > gap {
                gap = d;
            }
        }
    }
    let ci = CiStatement { x: alloc::vec![app.outcome.clone()], y: si_names, z: app.admissible.clone() };
    let train_ci = ci_check(train, ci.clone(), true, tolerance)?;
    let test_ci = ci_check(test, ci, true, tolerance)?;
    let disjoint = shared == 0;
    Ok(GeneralizationReport {
        max_gap_approx: rational::to_f64(&gap),
        premise_holds: train_ci.holds && !disjoint && gap <= *tolerance,
        max_gap: rational::format(&gap),
        shared_contexts: shared,
        train_only_contexts: tr.len() - shared,
        test_only_contexts: te.len() - shared,
        disjoint,
        train_ci,
        test_ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Attribute;

    /// College I counts with `O` the admission decision.
    fn college_one() -> Bag {
        college(&[("M", "A", 16, 20), ("M", "B", 16, 80), ("F", "A", 16, 80), ("F", "B", 16, 20)])
    }

    fn college_two() -> Bag {
        college(&[("M", "A", 10, 10), ("M", "B", 40, 90), ("F", "A", 40, 50), ("F", "B", 10, 50)])
    }

    fn college(rows: &[(&str, &str, u64, u64)]) -> Bag {
        let schema = Schema::new(alloc::vec![
            Attribute::new("G", ["F", "M"]),
            Attribute::new("D", ["A", "B"]),
            Attribute::new("O", ["0", "1"]),
        ])
        .unwrap();
        let mut bag = Bag::empty(schema.clone());
        for (g, d, admitted, applied) in rows {
            bag.add(schema.row_from_labels(&[*g, *d, "1"]).unwrap(), *admitted).unwrap();
            bag.add(schema.row_from_labels(&[*g, *d, "0"]).unwrap(), applied - admitted).unwrap();
        }
        bag
    }

    fn roles(level: &str) -> AuditRoles {
        AuditRoles {
            protected: "G".into(),
            label: "O".into(),
            outcome: None,
            admissible: alloc::vec!["D".into()],
            inadmissible: alloc::vec![],
            protected_level: Some(level.into()),
            positive_label: None,
        }
    }

    #[test]
    fn college_one_parity_hides_department_gap() {
        let bag = college_one();
        let report = audit(&bag, &roles("F"), None).unwrap();
        assert_eq!(report.metric("DP").unwrap().exact(), Some(rational::zero()));
        let cdp = report.metric("CDP").unwrap();
        let a = &cdp.strata[0];
        assert_eq!(a.context, alloc::vec![("D".to_string(), "A".to_string())]);
        assert_eq!(a.rate_protected, "1/5");
        assert_eq!(a.rate_reference, "4/5");
        // Weighted: (100/200)(-3/5) + (100/200)(3/5) = 0.
        assert_eq!(cdp.exact(), Some(rational::zero()));
        assert!(!report.metric("TPB").unwrap().available);
    }

    #[test]
    fn college_one_odds_ratio_is_sixteen() {
        let bag = college_one();
        let report = audit(&bag, &roles("F"), None).unwrap();
        let a = &report.rod.strata[0];
        assert_eq!(a.delta.as_deref(), Some("16"));
        assert_eq!(report.rod.strata[1].delta.as_deref(), Some("1/16"));
        // MH: (16·64/100 + 4·4/100) / (4·4/100 + 16·64/100) = 1 on these symmetric counts.
        assert_eq!(report.rod.pooled.as_deref(), Some("1"));
        assert_eq!(report.rod.score.as_deref(), Some("0"));
        // Mean of 16 and 1/16.
        assert_eq!(report.rod.mean_delta.as_deref(), Some("257/32"));
        // Recoding the groups inverts every stratum ratio.
        let swapped = audit(&bag, &roles("M"), None).unwrap();
        assert_eq!(swapped.rod.strata[0].delta.as_deref(), Some("1/16"));
    }

    #[test]
    fn college_two_parity_and_conditional_gap() {
        let bag = college_two();
        let report = audit(&bag, &roles("F"), None).unwrap();
        assert_eq!(report.metric("DP").unwrap().exact(), Some(rational::zero()));
        let cdp = report.metric("CDP").unwrap();
        assert_eq!(cdp.strata[0].rate_protected, "4/5");
        assert_eq!(cdp.strata[0].rate_reference, "1");
    }

    #[test]
    fn mantel_haenszel_two_strata() {
        // Stratum 1: a=10 b=5 c=4 d=8, n=27. Stratum 2: a=3 b=3 c=2 d=6, n=14.
        // MH = (80/27 + 18/14) / (20/27 + 6/14).
        let schema = Schema::new(alloc::vec![
            Attribute::new("C", ["x", "y"]),
            Attribute::new("S", ["0", "1"]),
            Attribute::new("O", ["0", "1"]),
        ])
        .unwrap();
        let mut bag = Bag::empty(schema.clone());
        for (c, s, o, n) in [("x", "0", "1", 10), ("x", "0", "0", 5), ("x", "1", "1", 4), ("x", "1", "0", 8), ("y", "0", "1", 3), ("y", "0", "0", 3), ("y", "1", "1", 2), ("y", "1", "0", 6)] {
            bag.add(schema.row_from_labels(&[c, s, o]).unwrap(), n).unwrap();
        }
        let s = Binary::resolve(&schema, "S", None).unwrap();
        let o = Binary::resolve(&schema, "O", None).unwrap();
        let r = rod(&bag, &s, &o, &["C"]).unwrap();
        let expect = (rational::ratio(80, 27) + rational::ratio(18, 14)) / (rational::ratio(20, 27) + rational::ratio(6, 14));
        assert_eq!(r.pooled_exact(), Some(expect));
        assert!(!r.pooled_corrected);
        assert_eq!(r.strata[0].delta.as_deref(), Some("4"));
        assert_eq!(r.strata[1].delta.as_deref(), Some("3"));
    }

    #[test]
    fn zero_cell_gets_continuity_correction() {
        let schema = Schema::new(alloc::vec![Attribute::new("S", ["0", "1"]), Attribute::new("O", ["0", "1"])]).unwrap();
        let bag = Bag::from_labels(schema.clone(), &[&["0", "1"], &["0", "1"], &["0", "0"], &["1", "1"]]).unwrap();
        let s = Binary::resolve(&schema, "S", None).unwrap();
        let o = Binary::resolve(&schema, "O", None).unwrap();
        let r = rod(&bag, &s, &o, &[] as &[&str]).unwrap();
        let st = &r.strata[0];
        assert!(st.corrected);
        assert_eq!(st.delta.as_deref(), Some("0"));
        // (2.5·0.5)/(1.5·1.5) = 5/9.
        assert_eq!(st.delta_used, "5/9");
        assert!(r.pooled_corrected);
        assert_eq!(r.pooled.as_deref(), Some("5/9"));
        assert_eq!(r.score.as_deref(), Some("4/9"));
    }

    #[test]
    fn score_is_zero_only_at_one() {
        assert!(rod_score(&rational::one()).is_zero());
        assert_eq!(rod_score(&rational::from_int(4)), rational::ratio(3, 4));
        assert_eq!(rod_score(&rational::ratio(1, 4)), rational::ratio(3, 4));
        assert_eq!(rod_score(&rational::zero()), rational::one());
    }

    #[test]
    fn absent_group_is_an_error() {
        let schema = Schema::new(alloc::vec![Attribute::new("S", ["0", "1"]), Attribute::new("O", ["0", "1"])]).unwrap();
        let bag = Bag::from_labels(schema.clone(), &[&["0", "1"]]).unwrap();
        let s = Binary::resolve(&schema, "S", None).unwrap();
        let o = Binary::resolve(&schema, "O", None).unwrap();
        assert!(matches!(demographic_parity(&bag, &s, &o), Err(Error::AbsentGroup(_))));
    }

    #[test]
    fn non_binary_needs_a_level() {
        let schema = Schema::new(alloc::vec![Attribute::new("R", ["a", "b", "c"])]).unwrap();
        assert!(matches!(Binary::resolve(&schema, "R", None), Err(Error::NotBinary(_))));
        assert_eq!(Binary::resolve(&schema, "R", Some("c")).unwrap().positive, 2);
    }

    fn sido() -> Schema {
        Schema::new(alloc::vec![
            Attribute::new("S", ["0", "1"]),
            Attribute::new("I", ["0", "1"]),
            Attribute::new("A", ["0", "1"]),
            Attribute::new("Y", ["0", "1"]),
        ])
        .unwrap()
    }

    fn sido_app() -> FairnessApplication {
        FairnessApplication { protected: "S".into(), outcome: "Y".into(), admissible: alloc::vec!["A".into()], inadmissible: alloc::vec!["I".into()] }
    }

    #[test]
    fn certificate_conditions() {
        let schema = sido();
        // Y copies I, so the label depends on an inadmissible column.
        let bag = Bag::from_labels(schema.clone(), &[&["0", "0", "0", "0"], &["1", "1", "0", "1"], &["0", "1", "1", "1"], &["1", "0", "1", "0"]]).unwrap();
        let tol = rational::zero();
        let only_a = certify_fair_training(&bag, &sido_app(), &["A"], &tol).unwrap();
        assert!(only_a.condition_a.holds, "training on admissible columns only is vacuous");
        assert!(!only_a.condition_b.holds);
        assert!(only_a.fair);
        let all = certify_fair_training(&bag, &sido_app(), &["S", "I", "A"], &tol).unwrap();
        assert!(!all.condition_a.holds && !all.condition_b.holds && !all.fair);
        assert_eq!(all.condition_b.gap, "1/2");
        assert!(certify_fair_training(&bag, &sido_app(), &["Y"], &tol).is_err());
    }

    #[test]
    fn generalization_on_identical_bags() {
        let schema = sido();
        let bag = Bag::from_labels(schema, &[&["0", "0", "0", "0"], &["1", "1", "0", "0"], &["0", "1", "1", "1"], &["1", "0", "1", "1"]]).unwrap();
        let r = generalization_check(&bag, &bag, &sido_app(), &rational::zero()).unwrap();
        assert_eq!(r.max_gap, "0");
        assert!(r.train_ci.holds && r.premise_holds && r.test_ci.holds);
        assert_eq!(r.shared_contexts, 2);
    }

    #[test]
    fn shifted_test_bag_has_a_gap() {
        let schema = sido();
        let train = Bag::from_labels(schema.clone(), &[&["0", "0", "0", "0"], &["1", "1", "0", "0"], &["0", "1", "1", "1"], &["1", "0", "1", "1"]]).unwrap();
        let test = Bag::from_labels(schema, &[&["0", "0", "0", "0"], &["1", "1", "0", "1"], &["0", "0", "0", "0"]]).unwrap();
        let r = generalization_check(&train, &test, &sido_app(), &rational::zero()).unwrap();
        assert_eq!(r.max_gap, "1/6");
        assert!(!r.premise_holds);
        assert!(!r.test_ci.holds);
        assert_eq!(r.train_only_contexts, 1);
    }
}
