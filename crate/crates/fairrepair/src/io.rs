//! File formats: CSV bags with domain sidecars, JSON inputs, WCNF files and
//! external solver output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fairrepair_core::causal::{CausalModel, NodeSpec};
use fairrepair_core::dataset::{Attribute, Bag, Mvd, Row, Schema, KEY_ATTRIBUTE};
use fairrepair_core::independence::CiStatement;
use fairrepair_core::maxsat::WcnfProblem;
use fairrepair_core::rational::{self, Rational};
use num_integer::Integer;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Reserved column holding a non-negative integer multiplicity.
pub const COUNT_COLUMN: &str = "__count";
/// Reserved column holding an exact probability `"p/q"`.
pub const PROB_COLUMN: &str = "__prob";
/// Inferred domains larger than this are refused; declare them instead.
pub const MAX_INFERRED_DOMAIN: usize = 256;

/// Attribute name to ordered domain labels.
pub type Domains = BTreeMap<String, Vec<String>>;

/// `data.csv` → `data.domains.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.domains.json"))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

pub fn read_domains(path: &Path) -> Result<Domains> {
    read_json(path)
}

pub fn write_domains(path: &Path, schema: &Schema) -> Result<()> {
    let d: Domains = schema.attributes().iter().map(|a| (a.name.clone(), a.domain.clone())).collect();
    write_json(path, &d)
}

/// Reads a bag from CSV. Domains come from `domains` if given, else from
/// the sidecar next to the file if it exists, else from the data.
pub fn read_bag(path: &Path, domains: Option<&Path>) -> Result<Bag> {
    let declared = match domains {
        Some(p) => Some(read_domains(p)?),
        None => {
            let side = sidecar_path(path);
            if side.exists() {
                Some(read_domains(&side)?)
            } else {
                None
            }
        }
    };
    let text = read_text(path)?;
    parse_bag(&text, path, declared.as_ref())
}

enum Weight {
    Count(usize),
    Prob(usize),
    Unit,
}

/// Parses CSV text. `origin` is only used in error messages.
pub fn parse_bag(text: &str, origin: &Path, declared: Option<&Domains>) -> Result<Bag> {
    let bad = |msg: String| CliError::format(origin, msg);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    let mut weight = Weight::Unit;
    let mut columns = Vec::new();
    for (i, name) in header.iter().enumerate() {
        match name.as_str() {
            COUNT_COLUMN | PROB_COLUMN if !matches!(weight, Weight::Unit) => {
                return Err(bad(format!("at most one of `{COUNT_COLUMN}` and `{PROB_COLUMN}` may appear")));
            }
            COUNT_COLUMN => weight = Weight::Count(i),
            PROB_COLUMN => weight = Weight::Prob(i),
            n if n == KEY_ATTRIBUTE || n.starts_with("__") => return Err(bad(format!("column name `{n}` is reserved"))),
            "" => return Err(bad(format!("column {} has an empty name", i + 1))),
            _ => columns.push(i),
        }
    }
    if let Some(d) = declared {
        let present: BTreeSet<&str> = columns.iter().map(|&i| header[i].as_str()).collect();
        if let Some(extra) = d.keys().find(|k| !present.contains(k.as_str())) {
            return Err(bad(format!("domain declared for `{extra}`, which is not a column")));
        }
    }

    let mut records: Vec<(usize, Vec<String>, String)> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(k + 2);
        let labels: Vec<String> = columns.iter().map(|&i| rec[i].to_string()).collect();
        let w = match weight {
            Weight::Count(i) | Weight::Prob(i) => rec[i].to_string(),
            Weight::Unit => String::new(),
        };
        records.push((line, labels, w));
    }

    let mut attributes = Vec::with_capacity(columns.len());
    for (c, &i) in columns.iter().enumerate() {
        let name = &header[i];
        let domain = match declared.and_then(|d| d.get(name)) {
            Some(d) => d.clone(),
            None => infer_domain(name, records.iter().map(|r| r.1[c].as_str())).map_err(bad)?,
        };
        attributes.push(Attribute::new(name.clone(), domain));
    }
    let schema = Schema::new(attributes)?;

    let mut rows: Vec<(Row, Rational)> = Vec::with_capacity(records.len());
    for (line, labels, w) in &records {
        let row = schema.row_from_labels(labels).map_err(|e| bad(format!("line {line}: {e}")))?;
        let w = match weight {
            Weight::Unit => rational::one(),
            Weight::Count(_) => {
                if w.is_empty() || !w.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad(format!("line {line}: `{COUNT_COLUMN}` must be a non-negative integer, got `{w}`")));
                }
                rational::parse_fraction(w).ok_or_else(|| bad(format!("line {line}: bad count `{w}`")))?
            }
            Weight::Prob(_) => {
                let p = rational::parse_fraction(w)
                    .ok_or_else(|| bad(format!("line {line}: `{PROB_COLUMN}` must be an exact fraction \"p/q\", got `{w}`")))?;
                if p < rational::zero() {
                    return Err(bad(format!("line {line}: negative probability `{w}`")));
                }
                p
            }
        };
        rows.push((row, w));
    }

    let scale: u64 = match weight {
        Weight::Prob(_) => {
            let total = rows.iter().fold(rational::zero(), |a, r| a + &r.1);
            if rows.is_empty() || total != rational::one() {
                return Err(bad(format!("probabilities sum to {}, not 1", rational::format(&total))));
            }
            let lcm = rows.iter().fold(num_bigint::BigInt::from(1u32), |l, r| l.lcm(r.1.denom()));
            u64::try_from(lcm).map_err(|_| bad("common denominator does not fit in 64 bits".into()))?
        }
        _ => 1,
    };
    let s = Rational::from_integer(scale.into());
    let mut counts: BTreeMap<Row, u64> = BTreeMap::new();
    for (row, w) in rows {
        let n = (w * &s).to_integer();
        let n = u64::try_from(n).map_err(|_| bad("multiplicity does not fit in 64 bits".into()))?;
        *counts.entry(row).or_default() += n;
    }
    Ok(Bag::from_counts(schema, counts.into_iter().filter(|(_, n)| *n > 0))?)
}

/// Observed values, sorted: numerically when every value is an integer,
/// lexicographically otherwise. Real-valued columns are refused.
fn infer_domain<'a>(name: &str, values: impl Iterator<Item = &'a str>) -> std::result::Result<Vec<String>, String> {
    let distinct: BTreeSet<&str> = values.collect();
    if distinct.is_empty() {
        return Err(format!("no values to infer the domain of `{name}` from; declare it in a domains file"));
    }
    let ints: Option<Vec<(i128, &str)>> = distinct.iter().map(|v| v.parse::<i128>().ok().map(|n| (n, *v))).collect();
    if let Some(mut ints) = ints {
        if distinct.len() > MAX_INFERRED_DOMAIN {
            return Err(too_many(name, distinct.len()));
        }
        ints.sort();
        return Ok(ints.into_iter().map(|(_, v)| v.to_string()).collect());
    }
    if distinct.iter().all(|v| v.parse::<f64>().is_ok()) {
        return Err(format!("column `{name}` looks continuous; discretize it or declare its domain"));
    }
    if distinct.len() > MAX_INFERRED_DOMAIN {
        return Err(too_many(name, distinct.len()));
    }
    Ok(distinct.into_iter().map(String::from).collect())
}

fn too_many(name: &str, n: usize) -> String {
    format!("column `{name}` has {n} distinct values, above {MAX_INFERRED_DOMAIN}; declare its domain")
}

/// CSV text of a bag with one line per distinct row and a `__count` column.
pub fn bag_to_csv(bag: &Bag) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let schema = bag.schema();
    let mut header: Vec<&str> = schema.names().collect();
    header.push(COUNT_COLUMN);
    w.write_record(&header).expect("in-memory write");
    for (row, n) in bag.iter() {
        let mut rec: Vec<String> = row.iter().enumerate().map(|(i, &v)| schema.label(i, v).to_string()).collect();
        rec.push(n.to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("labels are UTF-8")
}

/// Writes the bag and its domain sidecar.
pub fn write_bag(path: &Path, bag: &Bag) -> Result<()> {
    write_text(path, &bag_to_csv(bag))?;
    write_domains(&sidecar_path(path), bag.schema())
}

pub fn read_ci(path: &Path) -> Result<CiStatement> {
    read_json(path)
}

pub fn read_mvd(path: &Path) -> Result<Mvd> {
    read_json(path)
}

/// One node of a model file. CPT rows are keyed by the parent assignment,
/// written `"P1=v1,P2=v2"` (the empty string for a root).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub name: String,
    pub domain: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
    pub cpt: BTreeMap<String, Vec<serde_json::Value>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub nodes: Vec<NodeFile>,
}

pub fn read_model(path: &Path) -> Result<CausalModel> {
    let file: ModelFile = read_json(path)?;
    model_from_file(&file, path)
}

/// Converts a model file into a model. Errors name the node and the row.
pub fn model_from_file(file: &ModelFile, origin: &Path) -> Result<CausalModel> {
    let domains: BTreeMap<&str, &[String]> = file.nodes.iter().map(|n| (n.name.as_str(), n.domain.as_slice())).collect();
    let mut specs = Vec::with_capacity(file.nodes.len());
    for node in &file.nodes {
        let bad = |row: &str, msg: String| CliError::format(origin, format!("node `{}`, row `{row}`: {msg}", node.name));
        let mut parent_domains = Vec::with_capacity(node.parents.len());
        for p in &node.parents {
            let d = domains.get(p.as_str()).ok_or_else(|| CliError::format(origin, format!("node `{}`: unknown parent `{p}`", node.name)))?;
            parent_domains.push(*d);
        }
        // Parse every key into a parent assignment (value indices, parent order).
        let mut rows: BTreeMap<Vec<usize>, Vec<Rational>> = BTreeMap::new();
        for (key, entries) in &node.cpt {
            let mut assignment: Vec<Option<usize>> = vec![None; node.parents.len()];
            for part in key.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (name, label) = part.split_once('=').ok_or_else(|| bad(key, format!("`{part}` is not `parent=value`")))?;
                let (name, label) = (name.trim(), label.trim());
                let k = node.parents.iter().position(|p| p == name).ok_or_else(|| bad(key, format!("`{name}` is not a parent")))?;
                let v = parent_domains[k]
                    .iter()
                    .position(|d| d == label)
                    .ok_or_else(|| bad(key, format!("`{label}` is not in the domain of `{name}`")))?;
                if assignment[k].replace(v).is_some() {
                    return Err(bad(key, format!("`{name}` is assigned twice")));
                }
            }
            let assignment: Vec<usize> = assignment
                .iter()
                .zip(&node.parents)
                .map(|(a, p)| a.ok_or_else(|| bad(key, format!("parent `{p}` is not assigned"))))
                .collect::<Result<_>>()?;
            let mut probs = Vec::with_capacity(entries.len());
            for e in entries {
                let p = match e {
                    serde_json::Value::String(s) => rational::parse_fraction(s)
                        .ok_or_else(|| bad(key, format!("`{s}` is not an exact fraction \"p/q\"")))?,
                    other => return Err(bad(key, format!("entry {other} must be a string \"p/q\"; floating-point CPTs are rejected"))),
                };
                probs.push(p);
            }
            if rows.insert(assignment, probs).is_some() {
                return Err(bad(key, "the same parent assignment appears twice".into()));
            }
        }
        // Lay rows out in lexicographic order of the parent assignment.
        let expected: usize = parent_domains.iter().map(|d| d.len()).product();
        let mut cpt = Vec::with_capacity(expected);
        let sizes: Vec<usize> = parent_domains.iter().map(|d| d.len()).collect();
        let mut cur = vec![0usize; sizes.len()];
        for _ in 0..expected {
            match rows.remove(&cur) {
                Some(r) => cpt.push(r),
                None => {
                    let key: Vec<String> = node.parents.iter().zip(&cur).zip(&parent_domains).map(|((p, &v), d)| format!("{p}={}", d[v])).collect();
                    return Err(bad(&key.join(","), "row is missing".into()));
                }
            }
            for i in (0..sizes.len()).rev() {
                cur[i] += 1;
                if cur[i] < sizes[i] {
                    break;
                }
                cur[i] = 0;
            }
        }
        specs.push(NodeSpec { name: node.name.clone(), domain: node.domain.clone(), parents: node.parents.clone(), cpt });
    }
    CausalModel::new(specs).map_err(|e| CliError::format(origin, e.to_string()))
}

pub fn write_wcnf(path: &Path, problem: &WcnfProblem) -> Result<()> {
    write_text(path, &problem.to_wcnf())
}

pub fn read_wcnf(path: &Path) -> Result<WcnfProblem> {
    let text = read_text(path)?;
    WcnfProblem::parse_wcnf(&text).map_err(|e| CliError::format(path, e.to_string()))
}

/// Model reported by a MaxSAT solver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverOutput {
    /// `assignment[i]` is variable `i + 1`; unmentioned variables are false.
    pub assignment: Vec<bool>,
    pub optimal: bool,
}

/// Reads `s` and `v` lines. Accepts both the literal form (`v 1 -2 3 0`,
/// possibly over several lines) and the bit-string form (`v 101`).
pub fn parse_solver_output(text: &str, num_vars: usize) -> Result<SolverOutput> {
    let mut status: Option<&str> = None;
    let mut v_tokens: Vec<&str> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(s) = line.strip_prefix("s ") {
            status = Some(s.trim());
        } else if let Some(v) = line.strip_prefix("v ") {
            v_tokens.extend(v.split_whitespace());
        }
    }
    let optimal = match status {
        Some("OPTIMUM FOUND") => true,
        Some("SATISFIABLE") => false,
        Some("UNSATISFIABLE") => return Err(CliError::Solver("solver reports the hard clauses unsatisfiable".into())),
        Some(other) => return Err(CliError::Solver(format!("unexpected status `s {other}`"))),
        None => return Err(CliError::Solver("no `s` status line in solver output".into())),
    };
    let mut assignment = vec![false; num_vars];
    let bitstring = v_tokens.len() == 1 && v_tokens[0].len() == num_vars && v_tokens[0].bytes().all(|b| b == b'0' || b == b'1');
    if bitstring && num_vars > 1 {
        for (i, b) in v_tokens[0].bytes().enumerate() {
            assignment[i] = b == b'1';
        }
    } else {
        for tok in v_tokens {
            let l: i64 = tok.parse().map_err(|_| CliError::Solver(format!("bad literal `{tok}` in `v` line")))?;
            if l == 0 {
                continue;
            }
            let idx = l.unsigned_abs() as usize;
            if idx > num_vars {
                return Err(CliError::Solver(format!("literal {l} exceeds {num_vars} variables")));
            }
            assignment[idx - 1] = l > 0;
        }
    }
    Ok(SolverOutput { assignment, optimal })
}

/// Runs `command` (program then arguments) with the WCNF path appended.
/// The exit status is ignored because solvers use it to encode the result.
pub fn run_external_solver(command: &[String], wcnf: &Path, num_vars: usize) -> Result<SolverOutput> {
    let (program, args) = command.split_first().ok_or_else(|| CliError::Config("external solver command is empty".into()))?;
    let out = Command::new(program).args(args).arg(wcnf).output().map_err(|e| CliError::Solver(format!("cannot run `{program}`: {e}")))?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    parse_solver_output(&stdout, num_vars).map_err(|e| {
        let stderr = String::from_utf8_lossy(&out.stderr);
        let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
        if tail.is_empty() {
            e
        } else {
            CliError::Solver(format!("{e}; stderr: {tail}"))
        }
    })
}
