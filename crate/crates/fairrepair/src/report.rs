//! Report payloads written by the command-line front end.

use std::fmt::Write;

use fairrepair_core::audit::{Certificate, MetricReport};
use fairrepair_core::causal::{JustifiableVerdict, DEFAULT_JOINT_CAP};
use fairrepair_core::dataset::Bag;
use fairrepair_core::independence::CiStatement;
use fairrepair_core::maxsat::RepairStats;
use fairrepair_core::rational::{self, Rational};
use serde::Serialize;

/// A distinct row with its multiplicity, as labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountedRow {
    pub row: Vec<String>,
    pub count: u64,
}

pub fn counted_rows(bag: &Bag) -> Vec<CountedRow> {
    let schema = bag.schema();
    bag.iter()
        .map(|(r, n)| CountedRow { row: r.iter().enumerate().map(|(i, &v)| schema.label(i, v).to_string()).collect(), count: n })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorizationInfo {
    pub exact: bool,
    pub converged: bool,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairReport {
    pub method: String,
    pub constraint: CiStatement,
    /// `"ci"` for bag repairs, `"mvd"` for set repairs of the support.
    pub constraint_kind: String,
    pub input_rows: u64,
    pub output_rows: u64,
    pub delta: u64,
    pub inserted: u64,
    pub deleted: u64,
    pub optimal: bool,
    pub budget_exhausted: bool,
    pub soft_fraction: Option<f64>,
    pub seed: Option<u64>,
    /// Output multiplicities are this multiple of the input scale.
    pub scale: u64,
    /// Distributional L1 between input and output.
    pub l1: String,
    pub l1_approx: f64,
    pub tolerance: String,
    pub ci_gap_before: String,
    pub ci_gap_after: String,
    pub ci_holds_after: bool,
    pub cmi_before: f64,
    pub cmi_after: f64,
    pub stats: Option<RepairStats>,
    pub factorization: Option<FactorizationInfo>,
    pub inserted_rows: Vec<CountedRow>,
    pub deleted_rows: Vec<CountedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricComparison {
    pub training_attrs: Vec<String>,
    pub before: MetricReport,
    pub after: MetricReport,
    pub certificate_before: Certificate,
    pub certificate_after: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditOutput {
    #[serde(flatten)]
    pub report: MetricReport,
    pub notes: Vec<String>,
}

/// `Pr(O | do(S = s), do(A = a))` for one admissible context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InterventionRow {
    pub context: Vec<(String, String)>,
    pub protected_value: String,
    /// Outcome label to exact probability.
    pub outcome: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCheck {
    /// `"interventional"` when no attribute is admissible.
    pub notion: String,
    pub verdict: JustifiableVerdict,
    pub interventions: Vec<InterventionRow>,
    pub joint_cap: u128,
}

impl ModelCheck {
    pub fn new(verdict: JustifiableVerdict, interventional: bool, interventions: Vec<InterventionRow>) -> Self {
        ModelCheck {
            notion: if interventional { "interventional" } else { "justifiable" }.to_string(),
            verdict,
            interventions,
            joint_cap: DEFAULT_JOINT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiReport {
    pub ci: CiStatement,
    pub tolerance: String,
    pub holds: bool,
    pub gap: String,
    pub gap_approx: f64,
    pub cmi: f64,
    pub saturated: bool,
    pub rows: u64,
    pub tensor: Option<Vec<fairrepair_core::factorize::TensorDumpEntry>>,
}

pub fn fraction(r: &Rational) -> (String, f64) {
    (rational::format(r), rational::to_f64(r))
}

fn context_label(ctx: &[(String, String)]) -> String {
    if ctx.is_empty() {
        return "(all)".into();
    }
    ctx.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

fn approx(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Left-aligned columns separated by two spaces.
fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let _ = write!(line, "{cell:<w$}", w = widths[c]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Aligned text rendering of an audit.
pub fn audit_table(out: &AuditOutput) -> String {
    let r = &out.report;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "protected {} (S=1 is {}), outcome {} (positive {}), context [{}], rows {} ({} with S=0, {} with S=1)",
        r.protected,
        r.protected_level,
        r.outcome,
        r.positive_label,
        r.context.join(", "),
        r.total,
        r.group_support[0],
        r.group_support[1]
    );
    s.push('\n');
    let mut rows = vec![vec!["metric".to_string(), "value".into(), "approx".into(), "note".into()]];
    for m in &r.metrics {
        rows.push(vec![
            m.name.clone(),
            m.value.clone().unwrap_or_else(|| "-".into()),
            approx(m.approx),
            m.note.clone().unwrap_or_default(),
        ]);
    }
    s.push_str(&table(&rows));
    for m in r.metrics.iter().filter(|m| !m.strata.is_empty()) {
        let _ = writeln!(s, "\n{} by stratum", m.name);
        let mut rows = vec![vec!["context".to_string(), "support".into(), "weight".into(), "rate S=1".into(), "rate S=0".into(), "gap".into()]];
        for st in &m.strata {
            rows.push(vec![
                context_label(&st.context),
                st.support.to_string(),
                st.weight.clone(),
                st.rate_protected.clone(),
                st.rate_reference.clone(),
                st.gap.clone(),
            ]);
        }
        s.push_str(&table(&rows));
    }
    let rod = &r.rod;
    let _ = writeln!(s, "\nodds ratio by stratum (a=#S0O1 b=#S0O0 c=#S1O1 d=#S1O0)");
    let mut rows = vec![vec!["context".to_string(), "a".into(), "b".into(), "c".into(), "d".into(), "delta".into(), "used".into(), "corrected".into()]];
    for st in &rod.strata {
        let mut row = vec![context_label(&st.context)];
        row.extend(st.counts.iter().map(u64::to_string));
        row.push(st.delta.clone().unwrap_or_else(|| "-".into()));
        row.push(st.delta_used.clone());
        row.push(if st.corrected { "yes" } else { "no" }.into());
        rows.push(row);
    }
    s.push_str(&table(&rows));
    let mut rows = Vec::new();
    rows.push(vec![
        "pooled (Mantel-Haenszel)".to_string(),
        rod.pooled.clone().unwrap_or_else(|| "-".into()),
        approx(rod.pooled_approx),
        if rod.pooled_corrected { "continuity-corrected".into() } else { String::new() },
    ]);
    rows.push(vec!["mean delta".to_string(), rod.mean_delta.clone().unwrap_or_else(|| "-".into()), approx(rod.mean_approx), String::new()]);
    rows.push(vec!["ROD score".to_string(), rod.score.clone().unwrap_or_else(|| "-".into()), approx(rod.score_approx), String::new()]);
    s.push('\n');
    s.push_str(&table(&rows));
    if !rod.skipped.is_empty() {
        let _ = writeln!(s, "skipped {} context(s) missing a group", rod.skipped.len());
    }
    for n in &out.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

/// Observations worth flagging next to the numbers.
pub fn audit_notes(r: &MetricReport) -> Vec<String> {
    let mut notes = Vec::new();
    let zero = rational::zero();
    let largest_gap = |name: &str| {
        r.metric(name).and_then(|m| {
            m.strata.iter().filter_map(|st| rational::parse_fraction(&st.gap)).map(|g| if g < zero { -g } else { g }).max()
        })
    };
    let dp = r.metric("DP").and_then(|m| m.exact());
    let cdp = r.metric("CDP").and_then(|m| m.exact());
    if let (Some(dp), Some(worst)) = (&dp, largest_gap("CDP")) {
        if *dp == zero && worst != zero {
            notes.push(format!(
                "parity holds overall but not within the context strata (largest stratum gap {}); associational \
                 metrics cannot tell whether this is discrimination or the effect of attributes outside the context \
                 (compare with check-model)",
                rational::format(&worst)
            ));
        }
    }
    if let (Some(dp), Some(cdp)) = (&dp, &cdp) {
        if *dp != zero && *cdp == zero && largest_gap("CDP").map_or(true, |w| w == zero) {
            notes.push(
                "the overall parity gap disappears within the context strata; it may be explained by the context \
                 attributes, or by an inadmissible attribute that is correlated with them (compare with check-model)"
                    .into(),
            );
        }
    }
    for m in r.metrics.iter().filter(|m| m.strata.len() > 1) {
        if let (Some(v), Some(worst)) = (m.exact(), largest_gap(&m.name)) {
            if v == zero && worst != zero {
                notes.push(format!("{}: stratum gaps of opposite sign cancel in the average (largest {})", m.name, rational::format(&worst)));
            }
        }
    }
    for m in r.metrics.iter().filter(|m| !m.skipped.is_empty()) {
        notes.push(format!("{}: {} context(s) skipped because a group is absent", m.name, m.skipped.len()));
    }
    notes
}
