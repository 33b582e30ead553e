//! Command-line front end. Every subcommand writes its artifacts into an
//! output location, prints the primary artifact path on stdout and a short
//! summary on stderr.

use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairrepair_core::audit::{audit, certify_fair_training, rod_context, AuditRoles};
use fairrepair_core::causal::{justifiably_fair, CausalModel, FairnessMode, DEFAULT_JOINT_CAP};
use fairrepair_core::dataset::{Bag, Mvd, Value};
use fairrepair_core::factorize::{build_tensor, FactorMethod, FactorizeOptions};
use fairrepair_core::independence::{ci_gap, conditional_mutual_information, holds_ci, CiStatement};
use fairrepair_core::maxsat::{encode_plan, plan_ci_repair, plan_mvd_repair, Budget, EncodeOptions, RepairOptions, RepairPlan, SolverChoice};
use fairrepair_core::rational::{self, Rational};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::io;
use crate::parallel;
use crate::report::{
    audit_notes, audit_table, counted_rows, fraction, AuditOutput, CiReport, FactorizationInfo, InterventionRow, MetricComparison,
    ModelCheck, RepairReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// Default node budget per stratum when `soft_fraction < 1`.
pub const SOFT_BUDGET: u64 = 20_000;

#[derive(Debug, Parser)]
#[command(name = "fairrepair", version, about = "Repair training data for conditional independence and audit fairness")]
pub struct Cli {
    /// Run described by a JSON file: {"command": "repair", ...}. Relative
    /// paths in it are resolved against the file's directory.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// JSON-lines log file (default: next to the output).
    #[arg(long, global = true, value_name = "FILE")]
    pub log_file: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Repair a dataset so that a CI (or an MVD) holds.
    Repair(RepairArgs),
    /// Associational metrics and odds-ratio discrimination of a dataset.
    Audit(AuditArgs),
    /// Justifiable fairness of a causal model.
    CheckModel(CheckModelArgs),
    /// Whether a CI holds on a dataset.
    CheckCi(CheckCiArgs),
    /// Write the lineage encoding of a repair instance as WCNF.
    ExportWcnf(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Maxsat,
    Ic,
    Nmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverArg {
    Auto,
    BranchAndBound,
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Exhaustive,
    PathCriterion,
}

fn default_out() -> PathBuf {
    PathBuf::from("fairrepair-out")
}

fn default_tolerance() -> String {
    "0.01".into()
}

fn zero_tolerance() -> String {
    "0".into()
}

fn default_method() -> Method {
    Method::Maxsat
}

fn default_mode() -> ModeArg {
    ModeArg::Exhaustive
}

/// Data file plus optional domain sidecar.
#[derive(Debug, Clone, Args, Deserialize)]
pub struct DataArgs {
    /// CSV with a header row; an optional `__count` or `__prob` column
    /// carries multiplicities.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON object of attribute domains (default: `<data>.domains.json` if
    /// present, else inferred).
    #[arg(long)]
    #[serde(default)]
    pub domains: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Deserialize)]
pub struct ConstraintArgs {
    /// Saturated CI as JSON: {"x": [...], "y": [...], "z": [...]}.
    #[arg(long, conflicts_with = "mvd", required_unless_present = "mvd")]
    #[serde(default)]
    pub ci: Option<PathBuf>,
    /// MVD as JSON: {"z": [...], "x": [...], "y": [...]}; repairs the set
    /// of distinct rows.
    #[arg(long)]
    #[serde(default)]
    pub mvd: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Deserialize)]
pub struct RepairArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub constraint: ConstraintArgs,
    #[arg(long, value_enum, default_value = "maxsat")]
    #[serde(default = "default_method")]
    pub method: Method,
    /// MS(Soft): keep this fraction of hard clauses (0.1 when given bare).
    #[arg(long, num_args = 0..=1, default_missing_value = "0.1")]
    #[serde(default)]
    pub soft_fraction: Option<f64>,
    /// Required whenever a randomized path is active.
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Branch-and-bound node budget per stratum; 0 means unlimited.
    /// Defaults to 2000000, or 20000 when clauses are sampled.
    #[arg(long)]
    #[serde(default)]
    pub budget: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(default)]
    pub solver: Option<SolverArg>,
    /// External MaxSAT solver command; the WCNF path is appended.
    #[arg(long)]
    #[serde(default)]
    pub external_solver: Option<String>,
    /// Only delete tuples.
    #[arg(long)]
    #[serde(default)]
    pub forbid_insertions: bool,
    #[arg(long)]
    #[serde(default)]
    pub nmf_iters: Option<usize>,
    /// Relative jitter on the NMF starting point (needs --seed).
    #[arg(long)]
    #[serde(default)]
    pub nmf_jitter: Option<f64>,
    /// Largest integerization scale for IC/NMF.
    #[arg(long)]
    #[serde(default)]
    pub denominator_cap: Option<u64>,
    /// Roles JSON; adds a before/after metric report and certificate.
    #[arg(long)]
    #[serde(default)]
    pub roles: Option<PathBuf>,
    /// Tolerance for the reported CI and certificate checks.
    #[arg(long, default_value = "0.01")]
    #[serde(default = "default_tolerance")]
    pub tolerance: String,
    /// Worker threads (default: one per core).
    #[arg(long)]
    #[serde(default)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "fairrepair-out")]
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Deserialize)]
pub struct AuditArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    /// Roles JSON: {"protected", "label", "admissible", "inadmissible"}.
    #[arg(long)]
    pub roles: PathBuf,
    /// Context attributes (default: the admissible attributes).
    #[arg(long, value_delimiter = ',', conflicts_with = "boundary")]
    #[serde(default)]
    pub context: Option<Vec<String>>,
    /// Use the Markov boundary of the outcome within the admissible
    /// attributes as context.
    #[arg(long)]
    #[serde(default)]
    pub boundary: bool,
    /// Tolerance for the boundary search.
    #[arg(long, default_value = "0.01")]
    #[serde(default = "default_tolerance")]
    pub tolerance: String,
    #[arg(long, default_value = "fairrepair-out")]
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Deserialize)]
pub struct CheckModelArgs {
    /// Model JSON with nodes, domains, parents and CPT rows.
    #[arg(long)]
    pub model: PathBuf,
    /// Roles JSON over the model's nodes.
    #[arg(long)]
    pub roles: PathBuf,
    #[arg(long, value_enum, default_value = "exhaustive")]
    #[serde(default = "default_mode")]
    pub mode: ModeArg,
    #[arg(long, default_value = "0")]
    #[serde(default = "zero_tolerance")]
    pub tolerance: String,
    #[arg(long, default_value = "fairrepair-out")]
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Deserialize)]
pub struct CheckCiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub ci: PathBuf,
    #[arg(long, default_value = "0")]
    #[serde(default = "zero_tolerance")]
    pub tolerance: String,
    /// Include the per-stratum contingency matrices (saturated CIs only).
    #[arg(long)]
    #[serde(default)]
    pub dump_tensor: bool,
    #[arg(long, default_value = "fairrepair-out")]
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Deserialize)]
pub struct ExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub constraint: ConstraintArgs,
    #[arg(long)]
    #[serde(default)]
    pub forbid_insertions: bool,
    /// Output WCNF file.
    #[arg(long)]
    pub out: PathBuf,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

impl Command {
    /// Resolves relative paths against `base`.
    fn rebase(&mut self, base: &Path) {
        let data = |d: &mut DataArgs| {
            rebase(base, &mut d.data);
            rebase_opt(base, &mut d.domains);
        };
        let cons = |c: &mut ConstraintArgs| {
            rebase_opt(base, &mut c.ci);
            rebase_opt(base, &mut c.mvd);
        };
        match self {
            Command::Repair(a) => {
                data(&mut a.input);
                cons(&mut a.constraint);
                rebase_opt(base, &mut a.roles);
                rebase(base, &mut a.out);
            }
            Command::Audit(a) => {
                data(&mut a.input);
                rebase(base, &mut a.roles);
                rebase(base, &mut a.out);
            }
            Command::CheckModel(a) => {
                rebase(base, &mut a.model);
                rebase(base, &mut a.roles);
                rebase(base, &mut a.out);
            }
            Command::CheckCi(a) => {
                data(&mut a.input);
                rebase(base, &mut a.ci);
                rebase(base, &mut a.out);
            }
            Command::ExportWcnf(a) => {
                data(&mut a.input);
                cons(&mut a.constraint);
                rebase(base, &mut a.out);
            }
        }
    }

    fn default_log(&self) -> PathBuf {
        match self {
            Command::Repair(a) => a.out.join("run.log.jsonl"),
            Command::Audit(a) => a.out.join("run.log.jsonl"),
            Command::CheckModel(a) => a.out.join("run.log.jsonl"),
            Command::CheckCi(a) => a.out.join("run.log.jsonl"),
            Command::ExportWcnf(a) => {
                let mut s = a.out.clone().into_os_string();
                s.push(".log.jsonl");
                PathBuf::from(s)
            }
        }
    }
}

/// Outcome of a successful command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    /// Printed on stdout.
    pub artifact: PathBuf,
    /// Printed on stderr.
    pub summary: String,
    pub exit_code: i32,
}

pub fn parse_tolerance(s: &str) -> Result<Rational> {
    let t = rational::parse_decimal(s).ok_or_else(|| CliError::Config(format!("tolerance `{s}` is not a number")))?;
    if t < rational::zero() {
        return Err(CliError::Config(format!("tolerance `{s}` is negative")));
    }
    Ok(t)
}

/// Repair options built from the arguments. Runs before any file is read.
pub fn validate_repair(a: &RepairArgs) -> Result<(Option<RepairOptions>, Option<FactorizeOptions>)> {
    let cfg = |m: &str| Err(CliError::Config(m.to_string()));
    parse_tolerance(&a.tolerance)?;
    if a.threads == Some(0) {
        return cfg("threads must be positive");
    }
    match a.method {
        Method::Maxsat => {
            if a.nmf_iters.is_some() || a.nmf_jitter.is_some() || a.denominator_cap.is_some() {
                return cfg("nmf_iters, nmf_jitter and denominator_cap apply to the ic and nmf methods only");
            }
            let soft = a.soft_fraction.unwrap_or(1.0);
            if !(soft > 0.0 && soft <= 1.0) {
                return cfg("soft_fraction must lie in (0, 1]");
            }
            if soft < 1.0 && a.seed.is_none() {
                return cfg("soft_fraction below 1 samples clauses at random; a seed is required");
            }
            if a.external_solver.is_some() {
                if soft < 1.0 || a.budget.is_some() || a.solver.is_some() {
                    return cfg("soft_fraction, budget and solver do not apply to an external solver");
                }
                if a.external_solver.as_deref().map(str::trim).unwrap_or("").is_empty() {
                    return cfg("external solver command is empty");
                }
            }
            let mut opts = RepairOptions { soft_fraction: soft, seed: a.seed.unwrap_or(0), forbid_insertions: a.forbid_insertions, ..RepairOptions::default() };
            // A sampled run is flagged non-optimal anyway, so long proofs
            // of optimality on the sampled clauses buy nothing.
            let default_budget = if soft < 1.0 { SOFT_BUDGET } else { RepairOptions::default().budget.max_nodes };
            opts.budget = Budget { max_nodes: a.budget.unwrap_or(default_budget) };
            if let Some(s) = a.solver {
                opts.solver = match s {
                    SolverArg::Auto => SolverChoice::Auto,
                    SolverArg::BranchAndBound => SolverChoice::BranchAndBound,
                    SolverArg::Rectangle => SolverChoice::Rectangle,
                };
            }
            opts.validate()?;
            Ok((Some(opts), None))
        }
        Method::Ic | Method::Nmf => {
            if a.soft_fraction.is_some() || a.budget.is_some() || a.solver.is_some() || a.external_solver.is_some() || a.forbid_insertions {
                return cfg("soft_fraction, budget, solver, external_solver and forbid_insertions apply to the maxsat method only");
            }
            if a.constraint.mvd.is_some() {
                return cfg("the ic and nmf methods repair bags and need --ci");
            }
            let mut opts = FactorizeOptions { seed: a.seed.unwrap_or(0), ..FactorizeOptions::default() };
            if a.method == Method::Ic {
                if a.nmf_iters.is_some() || a.nmf_jitter.is_some() {
                    return cfg("nmf_iters and nmf_jitter apply to the nmf method only");
                }
            } else {
                opts.method = FactorMethod::Nmf;
                if let Some(it) = a.nmf_iters {
                    opts.nmf_iters = it;
                }
                if let Some(j) = a.nmf_jitter {
                    if !(0.0..1.0).contains(&j) {
                        return cfg("nmf_jitter must lie in [0, 1)");
                    }
                    if a.seed.is_none() {
                        return cfg("nmf_jitter randomizes the starting point; a seed is required");
                    }
                    opts.nmf_jitter = Some(j);
                }
            }
            if let Some(c) = a.denominator_cap {
                if c == 0 {
                    return cfg("denominator_cap must be positive");
                }
                opts.denominator_cap = c;
            }
            Ok((None, Some(opts)))
        }
    }
}

enum Constraint {
    Ci(CiStatement),
    Mvd(Mvd),
}

impl Constraint {
    fn load(c: &ConstraintArgs) -> Result<Self> {
        match (&c.ci, &c.mvd) {
            (Some(p), None) => Ok(Constraint::Ci(io::read_ci(p)?)),
            (None, Some(p)) => Ok(Constraint::Mvd(io::read_mvd(p)?)),
            _ => Err(CliError::Config("exactly one of ci and mvd is required".into())),
        }
    }

    /// The CI that the repaired data must satisfy.
    fn as_ci(&self) -> CiStatement {
        match self {
            Constraint::Ci(c) => c.clone(),
            Constraint::Mvd(m) => CiStatement { x: m.x.clone(), y: m.y.clone(), z: m.z.clone() },
        }
    }

    fn plan(&self, bag: &Bag) -> Result<RepairPlan> {
        Ok(match self {
            Constraint::Ci(c) => plan_ci_repair(bag, c)?,
            Constraint::Mvd(m) => plan_mvd_repair(&bag.support(), m)?,
        })
    }

    /// An MVD given without `y` takes the remaining attributes.
    fn complete(&mut self, bag: &Bag) {
        if let Constraint::Mvd(m) = self {
            if m.y.is_empty() {
                *m = Mvd::with_complement(bag.schema(), &m.z, &m.x);
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Constraint::Ci(_) => "ci",
            Constraint::Mvd(_) => "mvd",
        }
    }
}

fn load_roles(path: &Path) -> Result<AuditRoles> {
    io::read_json(path)
}

fn training_attrs(bag: &Bag, roles: &AuditRoles) -> Vec<String> {
    bag.schema().names().filter(|n| *n != roles.label && Some(*n) != roles.outcome.as_deref()).map(String::from).collect()
}

pub fn cmd_repair(a: &RepairArgs) -> Result<Outcome> {
    let (maxsat, factor) = validate_repair(a)?;
    let tolerance = parse_tolerance(&a.tolerance)?;
    let mut constraint = Constraint::load(&a.constraint)?;
    let roles = a.roles.as_deref().map(load_roles).transpose()?;
    let bag = io::read_bag(&a.input.data, a.input.domains.as_deref())?;
    constraint.complete(&bag);
    let ci = constraint.as_ci();
    ci.resolve_saturated(bag.schema())?;
    if let Some(r) = &roles {
        r.validate(bag.schema())?;
    }
    // MVD repairs work on the set of distinct rows.
    let original = match &constraint {
        Constraint::Ci(_) => bag.clone(),
        Constraint::Mvd(_) => bag.support().to_bag(),
    };
    tracing::info!(rows = original.total(), distinct = original.distinct(), kind = constraint.kind(), "loaded input");

    let (result, budget_exhausted, scale, factorization, stats) = if let Some(opts) = &maxsat {
        if let Some(cmd) = &a.external_solver {
            let enc = encode_plan(constraint.plan(&bag)?, &EncodeOptions { forbid_insertions: opts.forbid_insertions, ..EncodeOptions::default() })?;
            let wcnf = a.out.join("lineage.wcnf");
            io::write_wcnf(&wcnf, &enc.problem)?;
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            tracing::info!(command = %cmd, vars = enc.problem.num_vars, "running external solver");
            let sol = io::run_external_solver(&argv, &wcnf, enc.problem.num_vars as usize)?;
            let r = enc.decode(&sol.assignment, sol.optimal)?;
            let stats = r.stats.clone();
            (r, false, 1, None, Some(stats))
        } else {
            let run = parallel::solve_plan(&constraint.plan(&bag)?, opts, a.threads)?;
            tracing::info!(strata = run.result.stats.strata, nodes = run.result.stats.nodes, not_optimal = run.strata_not_optimal, "maxsat repair done");
            let stats = run.result.stats.clone();
            (run.result, run.budget_exhausted, 1, None, Some(stats))
        }
    } else {
        let opts = factor.as_ref().expect("validated options");
        let Constraint::Ci(c) = &constraint else { unreachable!("validated: factorization needs a CI") };
        let f = parallel::factorize(&bag, c, opts, a.threads)?;
        tracing::info!(scale = f.scale, exact = f.exact, converged = f.converged, "factorization done");
        let info = FactorizationInfo { exact: f.exact, converged: f.converged, max_iterations: f.max_iterations };
        (f.result, false, f.scale, Some(info), None)
    };

    let repaired = &result.repaired;
    let (l1, l1_approx) = fraction(&original.l1_distance(repaired));
    let gap_before = ci_gap(&original, &ci)?;
    let gap_after = ci_gap(repaired, &ci)?;
    let report = RepairReport {
        method: match a.method {
            Method::Maxsat if a.external_solver.is_some() => "maxsat-external".into(),
            Method::Maxsat if a.soft_fraction.unwrap_or(1.0) < 1.0 => "maxsat-soft".into(),
            Method::Maxsat => "maxsat".into(),
            Method::Ic => "ic".into(),
            Method::Nmf => "nmf".into(),
        },
        constraint: ci.clone(),
        constraint_kind: constraint.kind().into(),
        input_rows: original.total(),
        output_rows: repaired.total(),
        delta: result.delta,
        inserted: result.inserted.total(),
        deleted: result.deleted.total(),
        optimal: result.optimal,
        budget_exhausted,
        soft_fraction: maxsat.as_ref().map(|o| o.soft_fraction),
        seed: a.seed,
        scale,
        l1,
        l1_approx,
        tolerance: rational::format(&tolerance),
        ci_gap_before: rational::format(&gap_before),
        ci_gap_after: rational::format(&gap_after),
        ci_holds_after: holds_ci(repaired, &ci, &tolerance)?,
        cmi_before: conditional_mutual_information(&original, &ci)?,
        cmi_after: conditional_mutual_information(repaired, &ci)?,
        stats,
        factorization,
        inserted_rows: counted_rows(&result.inserted),
        deleted_rows: counted_rows(&result.deleted),
    };
    let csv_path = a.out.join("repaired.csv");
    io::write_bag(&csv_path, repaired)?;
    io::write_json(&a.out.join("repair.json"), &report)?;
    if let Some(r) = &roles {
        let training = training_attrs(&original, r);
        let app = r.application();
        let cmp = MetricComparison {
            before: audit(&original, r, None)?,
            after: audit(repaired, r, None)?,
            certificate_before: certify_fair_training(&original, &app, &training, &tolerance)?,
            certificate_after: certify_fair_training(repaired, &app, &training, &tolerance)?,
            training_attrs: training,
        };
        io::write_json(&a.out.join("metrics.json"), &cmp)?;
    }
    let summary = format!(
        "{}: delta {} ({} inserted, {} deleted), optimal {}, CI gap {} -> {}, L1 {:.6}{}",
        report.method,
        report.delta,
        report.inserted,
        report.deleted,
        report.optimal,
        report.ci_gap_before,
        report.ci_gap_after,
        report.l1_approx,
        if budget_exhausted { " (node budget exhausted)" } else { "" }
    );
    Ok(Outcome { artifact: csv_path, summary, exit_code: if budget_exhausted { EXIT_BUDGET } else { EXIT_OK } })
}

pub fn cmd_audit(a: &AuditArgs) -> Result<Outcome> {
    let tolerance = parse_tolerance(&a.tolerance)?;
    let roles = load_roles(&a.roles)?;
    let bag = io::read_bag(&a.input.data, a.input.domains.as_deref())?;
    let context = if a.boundary { Some(rod_context(&bag, &roles, &tolerance)?) } else { a.context.clone() };
    let report = audit(&bag, &roles, context.as_deref())?;
    let out = AuditOutput { notes: audit_notes(&report), report };
    let json = a.out.join("audit.json");
    io::write_json(&json, &out)?;
    let text = audit_table(&out);
    io::write_text(&a.out.join("audit.txt"), &text)?;
    Ok(Outcome { artifact: json, summary: text.trim_end().to_string(), exit_code: EXIT_OK })
}

/// `Pr(O | do(S = s), do(A = a))` for every admissible context and
/// protected value.
pub fn intervention_table(model: &CausalModel, roles: &AuditRoles) -> Result<Vec<InterventionRow>> {
    let schema = model.schema();
    let s = schema.index_of(&roles.protected)?;
    let o = schema.index_of(&roles.label)?;
    let a = schema.indices(&roles.admissible)?;
    if schema.product_size(&a) * schema.domain_size(s) as u128 > fairrepair_core::causal::MAX_CONTEXTS {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    let sizes: Vec<usize> = a.iter().map(|&i| schema.domain_size(i)).collect();
    let mut cur = vec![0usize; sizes.len()];
    loop {
        let context: Vec<(String, String)> = a.iter().zip(&cur).map(|(&i, &v)| (schema.attribute(i).name.clone(), schema.label(i, v as Value).to_string())).collect();
        for sv in 0..schema.domain_size(s) {
            let mut fixed = context.clone();
            fixed.push((roles.protected.clone(), schema.label(s, sv as Value).to_string()));
            let d = model.interventional_marginal(&fixed, &[roles.label.as_str()], DEFAULT_JOINT_CAP)?;
            let outcome = (0..schema.domain_size(o))
                .map(|ov| {
                    let p = d.probs.get(&vec![ov as Value]).cloned().unwrap_or_else(rational::zero);
                    (schema.label(o, ov as Value).to_string(), rational::format(&p))
                })
                .collect();
            rows.push(InterventionRow { context: context.clone(), protected_value: schema.label(s, sv as Value).to_string(), outcome });
        }
        let mut i = sizes.len();
        loop {
            if i == 0 {
                return Ok(rows);
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < sizes[i] {
                break;
            }
            cur[i] = 0;
        }
    }
}

pub fn cmd_check_model(a: &CheckModelArgs) -> Result<Outcome> {
    let tolerance = parse_tolerance(&a.tolerance)?;
    let roles = load_roles(&a.roles)?;
    let model = io::read_model(&a.model)?;
    let app = roles.application();
    let mode = match a.mode {
        ModeArg::Exhaustive => FairnessMode::Exhaustive,
        ModeArg::PathCriterion => FairnessMode::PathCriterion,
    };
    let verdict = justifiably_fair(&model, &app, mode, &tolerance)?;
    let table = intervention_table(&model, &roles)?;
    let check = ModelCheck::new(verdict, roles.admissible.is_empty(), table);
    let path = a.out.join("verdict.json");
    io::write_json(&path, &check)?;
    let v = &check.verdict;
    let mut summary = format!("{} fairness: {}", check.notion, if v.fair { "fair" } else { "not fair" });
    if let Some(w) = &v.witness {
        let ctx: Vec<String> = w.context.iter().map(|(k, x)| format!("{k}={x}")).collect();
        summary.push_str(&format!(
            "; witness K = [{}]: Pr({}={} | do({}={})) = {} vs do({}={}) = {}",
            ctx.join(", "),
            roles.label,
            w.outcome_value,
            roles.protected,
            w.protected_values.0,
            w.probabilities.0,
            roles.protected,
            w.protected_values.1,
            w.probabilities.1
        ));
    }
    if let Some(p) = &v.path {
        summary.push_str(&format!("; unblocked path {}", p.join(" -> ")));
    }
    Ok(Outcome { artifact: path, summary, exit_code: EXIT_OK })
}

pub fn cmd_check_ci(a: &CheckCiArgs) -> Result<Outcome> {
    let tolerance = parse_tolerance(&a.tolerance)?;
    let ci = io::read_ci(&a.ci)?;
    let bag = io::read_bag(&a.input.data, a.input.domains.as_deref())?;
    let gap = ci_gap(&bag, &ci)?;
    let saturated = ci.is_saturated(bag.schema())?;
    let tensor = if a.dump_tensor {
        if !saturated {
            return Err(CliError::Config("dump_tensor needs a saturated CI".into()));
        }
        Some(build_tensor(&bag, &ci)?.dump())
    } else {
        None
    };
    let (g, gap_approx) = fraction(&gap);
    let report = CiReport {
        holds: holds_ci(&bag, &ci, &tolerance)?,
        cmi: conditional_mutual_information(&bag, &ci)?,
        ci,
        tolerance: rational::format(&tolerance),
        gap: g,
        gap_approx,
        saturated,
        rows: bag.total(),
        tensor,
    };
    let path = a.out.join("ci.json");
    io::write_json(&path, &report)?;
    let summary = format!("CI {}: gap {} (CMI {:.6} nats)", if report.holds { "holds" } else { "fails" }, report.gap, report.cmi);
    Ok(Outcome { artifact: path, summary, exit_code: EXIT_OK })
}

pub fn cmd_export_wcnf(a: &ExportArgs) -> Result<Outcome> {
    let mut constraint = Constraint::load(&a.constraint)?;
    let bag = io::read_bag(&a.input.data, a.input.domains.as_deref())?;
    constraint.complete(&bag);
    let enc = encode_plan(constraint.plan(&bag)?, &EncodeOptions { forbid_insertions: a.forbid_insertions, ..EncodeOptions::default() })?;
    io::write_wcnf(&a.out, &enc.problem)?;
    let p = &enc.problem;
    let summary = format!("{} variables, {} hard clauses, {} soft clauses, top {}", p.num_vars, p.hard.len(), p.soft.len(), p.top());
    Ok(Outcome { artifact: a.out.clone(), summary, exit_code: EXIT_OK })
}

pub fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Repair(a) => cmd_repair(a),
        Command::Audit(a) => cmd_audit(a),
        Command::CheckModel(a) => cmd_check_model(a),
        Command::CheckCi(a) => cmd_check_ci(a),
        Command::ExportWcnf(a) => cmd_export_wcnf(a),
    }
}

/// Reads a `--config` file into a command.
pub fn load_config(path: &Path) -> Result<Command> {
    let value: serde_json::Value = io::read_json(path)?;
    check_config_keys(&value).map_err(|m| CliError::format(path, m))?;
    let mut cmd: Command = serde_json::from_value(value).map_err(|e| CliError::format(path, e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cmd.rebase(&base);
    Ok(cmd)
}

const DATA_KEYS: &[&str] = &["data", "domains"];
const CONSTRAINT_KEYS: &[&str] = &["ci", "mvd"];

/// Serde cannot refuse unknown fields next to flattened ones, so typos in
/// a config file are caught here.
fn check_config_keys(v: &serde_json::Value) -> std::result::Result<(), String> {
    let obj = v.as_object().ok_or("config must be a JSON object")?;
    let command = obj.get("command").and_then(|c| c.as_str()).ok_or("config needs a string field `command`")?;
    let own: &[&str] = match command {
        "repair" => &[
            "method", "soft_fraction", "seed", "budget", "solver", "external_solver", "forbid_insertions", "nmf_iters",
            "nmf_jitter", "denominator_cap", "roles", "tolerance", "threads", "out",
        ],
        "audit" => &["roles", "context", "boundary", "tolerance", "out"],
        "check-model" => &["model", "roles", "mode", "tolerance", "out"],
        "check-ci" => &["ci", "tolerance", "dump_tensor", "out"],
        "export-wcnf" => &["forbid_insertions", "out"],
        other => return Err(format!("unknown command `{other}`")),
    };
    let mut allowed: Vec<&str> = vec!["command"];
    allowed.extend(own);
    if command != "check-model" {
        allowed.extend(DATA_KEYS);
    }
    if command == "repair" || command == "export-wcnf" {
        allowed.extend(CONSTRAINT_KEYS);
    }
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unknown field `{k}` for command `{command}`")),
        None => Ok(()),
    }
}

fn resolve(cli: Cli) -> Result<(Command, Option<PathBuf>)> {
    match (cli.config, cli.command) {
        (Some(path), None) => Ok((load_config(&path)?, cli.log_file)),
        (None, Some(cmd)) => Ok((cmd, cli.log_file)),
        (Some(_), Some(_)) => Err(CliError::Config("give either --config or a subcommand, not both".into())),
        (None, None) => Err(CliError::Config("a subcommand or --config is required".into())),
    }
}

fn open_log(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map_err(|e| CliError::io(path, e))
}

fn fail(e: &CliError) -> i32 {
    eprintln!("{}", serde_json::to_string(&e.report()).expect("error report serializes"));
    e.exit_code()
}

/// Runs the program on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (command, log) = match resolve(cli) {
        Ok(x) => x,
        Err(e) => return fail(&e),
    };
    let log_path = log.unwrap_or_else(|| command.default_log());
    let file = match open_log(&log_path) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };
    let subscriber = tracing_subscriber::fmt().json().with_ansi(false).with_writer(Mutex::new(file)).finish();
    let _guard = tracing::subscriber::set_default(subscriber);
    let started = Instant::now();
    tracing::info!(command = ?command, "start");
    match execute(&command) {
        Ok(o) => {
            tracing::info!(artifact = %o.artifact.display(), exit_code = o.exit_code, elapsed_ms = started.elapsed().as_millis() as u64, "done");
            println!("{}", o.artifact.display());
            eprintln!("{}", o.summary);
            o.exit_code
        }
        Err(e) => {
            tracing::error!(error = %e, kind = e.kind(), "failed");
            fail(&e)
        }
    }
}
