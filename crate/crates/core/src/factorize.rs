//! Rank-one repair of contingency tensors: independent coupling and
//! multiplicative-update NMF, followed by integer reconstruction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{for_each_assignment, pick, Bag, Distribution, Row, Schema, Value};
use crate::error::{Error, Result};
use crate::independence::{CiStatement, ResolvedCi};
use crate::maxsat::{stratum_seed, RepairResult, RepairStats};
use crate::rational::{self, Rational};

/// Cap on cells of one stratum matrix.
pub const DEFAULT_MATRIX_CAP: u128 = 1 << 20;
/// Cap on the common denominator used by integerization.
pub const DEFAULT_DENOMINATOR_CAP: u64 = 64;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix { rows, cols, data: alloc::vec![value; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[T]>::to_vec).collect()
    }
}

/// Per-stratum `x × y` count matrices over the full x and y domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTensor {
    pub schema: Schema,
    pub ci: ResolvedCi,
    /// Every x-part in domain order; row index of the matrices.
    pub x_values: Vec<Row>,
    /// Every y-part in domain order; column index of the matrices.
    pub y_values: Vec<Row>,
    /// Observed `z` values with their matrices.
    pub strata: BTreeMap<Row, Matrix<u64>>,
}

fn all_values(schema: &Schema, idx: &[usize]) -> Vec<Row> {
    let sizes: Vec<usize> = idx.iter().map(|&i| schema.domain_size(i)).collect();
    let mut out = Vec::new();
    for_each_assignment(&sizes, |a| out.push(a.to_vec()));
    out
}

/// One tensor stratum in dump form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDumpEntry {
    pub z: Vec<String>,
    pub matrix: Vec<Vec<u64>>,
}

impl ContingencyTensor {
    pub fn total(&self) -> u64 {
        self.strata.values().flat_map(|m| m.data.iter()).sum()
    }

    /// Matrix of a `z` value; all zeros when unobserved.
    pub fn matrix(&self, z: &[Value]) -> Matrix<u64> {
        self.strata.get(z).cloned().unwrap_or_else(|| Matrix::filled(self.x_values.len(), self.y_values.len(), 0))
    }

    pub fn dump(&self) -> Vec<TensorDumpEntry> {
        self.strata
            .iter()
            .map(|(z, m)| TensorDumpEntry {
                z: self.ci.z.iter().zip(z).map(|(&i, &v)| self.schema.label(i, v).into()).collect(),
                matrix: m.to_rows(),
            })
            .collect()
    }

    fn full_row(&self, i: usize, j: usize, z: &[Value]) -> Row {
        let mut row = alloc::vec![0; self.schema.len()];
        for (k, &a) in self.ci.x.iter().enumerate() {
            row[a] = self.x_values[i][k];
        }
        for (k, &a) in self.ci.y.iter().enumerate() {
            row[a] = self.y_values[j][k];
        }
        for (k, &a) in self.ci.z.iter().enumerate() {
            row[a] = z[k];
        }
        row
    }
}

fn index_of_value(schema: &Schema, idx: &[usize], v: &[Value]) -> usize {
    let mut r = 0usize;
    for (k, &a) in idx.iter().enumerate() {
        r = r * schema.domain_size(a) + v[k] as usize;
    }
    r
}

pub fn build_tensor(bag: &Bag, ci: &CiStatement) -> Result<ContingencyTensor> {
    build_tensor_capped(bag, ci, DEFAULT_MATRIX_CAP)
}

pub fn build_tensor_capped(bag: &Bag, ci: &CiStatement, cap: u128) -> Result<ContingencyTensor> {
    let schema = bag.schema().clone();
    let r = ci.resolve_saturated(&schema)?;
    let cells = schema.product_size(&r.x) * schema.product_size(&r.y);
    if cells > cap {
        return Err(Error::DomainTooLarge { size: cells, cap });
    }
    let x_values = all_values(&schema, &r.x);
    let y_values = all_values(&schema, &r.y);
    let mut strata: BTreeMap<Row, Matrix<u64>> = BTreeMap::new();
    for (row, n) in bag.iter() {
        let m = strata.entry(pick(row, &r.z)).or_insert_with(|| Matrix::filled(x_values.len(), y_values.len(), 0));
        let i = index_of_value(&schema, &r.x, &pick(row, &r.x));
        let j = index_of_value(&schema, &r.y, &pick(row, &r.y));
        m.data[i * m.cols + j] += n;
    }
    Ok(ContingencyTensor { schema, ci: r, x_values, y_values, strata })
}

/// Every 2×2 minor has `|ad - bc| ≤ tolerance`.
pub fn is_rank_one(m: &Matrix<u64>, tolerance: u128) -> bool {
    for i1 in 0..m.rows {
        for i2 in i1 + 1..m.rows {
            for j1 in 0..m.cols {
                for j2 in j1 + 1..m.cols {
                    let ad = *m.get(i1, j1) as u128 * *m.get(i2, j2) as u128;
                    let bc = *m.get(i1, j2) as u128 * *m.get(i2, j1) as u128;
                    if ad.abs_diff(bc) > tolerance {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Exact rank-one test for rational matrices.
pub fn is_rank_one_rational(m: &Matrix<Rational>) -> bool {
    for i1 in 0..m.rows {
        for i2 in i1 + 1..m.rows {
            for j1 in 0..m.cols {
                for j2 in j1 + 1..m.cols {
                    if m.get(i1, j1) * m.get(i2, j2) != m.get(i1, j2) * m.get(i2, j1) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn marginals(m: &Matrix<u64>) -> (Vec<u64>, Vec<u64>, u64) {
    let mut r = alloc::vec![0u64; m.rows];
    let mut c = alloc::vec![0u64; m.cols];
    for i in 0..m.rows {
        for j in 0..m.cols {
            let v = *m.get(i, j);
            r[i] += v;
            c[j] += v;
        }
    }
    let n = r.iter().sum();
    (r, c, n)
}

/// `m_X(i)·m_Y(j)/n` for one stratum.
pub fn coupling_matrix(m: &Matrix<u64>) -> Matrix<Rational> {
    let (r, c, n) = marginals(m);
    let mut out = Matrix::filled(m.rows, m.cols, rational::zero());
    if n == 0 {
        return out;
    }
    for i in 0..m.rows {
        for j in 0..m.cols {
            out.set(i, j, Rational::new(BigInt::from(r[i] as u128 * c[j] as u128), BigInt::from(n)));
        }
    }
    out
}

/// Independent coupling of every stratum, in exact rationals.
pub fn independent_coupling(t: &ContingencyTensor) -> BTreeMap<Row, Matrix<Rational>> {
    t.strata.iter().map(|(z, m)| (z.clone(), coupling_matrix(m))).collect()
}

/// Repaired rational counts as a distribution over full rows.
pub fn coupling_distribution(t: &ContingencyTensor) -> Distribution {
    let total = t.total();
    let mut probs = BTreeMap::new();
    if total > 0 {
        let n = Rational::from_integer(BigInt::from(total));
        for (z, m) in independent_coupling(t) {
            for i in 0..m.rows {
                for j in 0..m.cols {
                    let v = m.get(i, j);
                    if !v.is_zero() {
                        probs.insert(t.full_row(i, j, &z), v / &n);
                    }
                }
            }
        }
    }
    Distribution { schema: t.schema.clone(), probs }
}

/// Rank-one fit `u vᵀ` with its Frobenius error after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfFit {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub errors: Vec<f64>,
    pub converged: bool,
}

fn frobenius(m: &Matrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.rows {
        for j in 0..m.cols {
            let d = m.get(i, j) - u[i] * v[j];
            acc += d * d;
        }
    }
    libm::sqrt(acc)
}

/// Multiplicative updates `u ← u ∘ (M v)/(u vᵀ v)`, `v ← v ∘ (Mᵀ u)/(v uᵀ u)`
/// started from the marginal factors, optionally jittered.
pub fn rank_one_nmf(m: &Matrix<f64>, iters: usize, jitter: Option<(f64, u64)>) -> NmfFit {
    let n: f64 = m.data.iter().sum();
    let mut u: Vec<f64> = (0..m.rows).map(|i| (0..m.cols).map(|j| m.get(i, j)).sum()).collect();
    let mut v: Vec<f64> = (0..m.cols).map(|j| (0..m.rows).map(|i| m.get(i, j)).sum::<f64>() / if n > 0.0 { n } else { 1.0 }).collect();
    if let Some((eps, seed)) = jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in u.iter_mut().chain(v.iter_mut()) {
            *x *= 1.0 + eps * rng.gen_range(-1.0..1.0);
        }
    }
    let mut errors = alloc::vec![frobenius(m, &u, &v)];
    let mut converged = n == 0.0;
    for _ in 0..iters {
        if converged {
            break;
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv > 0.0 {
            for i in 0..m.rows {
                if u[i] > 0.0 {
                    let mv: f64 = (0..m.cols).map(|j| m.get(i, j) * v[j]).sum();
                    u[i] *= mv / (u[i] * vv);
                }
            }
        }
        let uu: f64 = u.iter().map(|x| x * x).sum();
        if uu > 0.0 {
            for j in 0..m.cols {
                if v[j] > 0.0 {
                    let mu: f64 = (0..m.rows).map(|i| m.get(i, j) * u[i]).sum();
                    v[j] *= mu / (v[j] * uu);
                }
            }
        }
        let e = frobenius(m, &u, &v);
        let prev = *errors.last().expect("errors starts non-empty");
        errors.push(e);
        if prev - e <= 1e-12 * prev.max(1.0) {
            converged = true;
        }
    }
    NmfFit { u, v, errors, converged }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorMethod {
    Ic,
    Nmf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizeOptions {
    pub method: FactorMethod,
    pub nmf_iters: usize,
    /// Relative jitter on the NMF starting point; requires a seed.
    pub nmf_jitter: Option<f64>,
    pub seed: u64,
    pub denominator_cap: u64,
    pub matrix_cap: u128,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        FactorizeOptions {
            method: FactorMethod::Ic,
            nmf_iters: 200,
            nmf_jitter: None,
            seed: 0,
            denominator_cap: DEFAULT_DENOMINATOR_CAP,
            matrix_cap: DEFAULT_MATRIX_CAP,
        }
    }
}

/// Fitted stratum before integerization.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumFit {
    pub z: Row,
    pub total: u64,
    /// Exact repaired counts (independent coupling only).
    pub exact: Option<Matrix<Rational>>,
    /// Repaired counts as floats, summing to `total`.
    pub approx: Matrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub errors: Vec<f64>,
}

pub fn fit_stratum(t: &ContingencyTensor, ordinal: usize, opts: &FactorizeOptions) -> StratumFit {
    let (z, m) = t.strata.iter().nth(ordinal).expect("ordinal within strata");
    let (_, _, n) = marginals(m);
    match opts.method {
        FactorMethod::Ic => {
            let exact = coupling_matrix(m);
            let approx = Matrix { rows: exact.rows, cols: exact.cols, data: exact.data.iter().map(rational::to_f64).collect() };
            StratumFit { z: z.clone(), total: n, exact: Some(exact), approx, converged: true, iterations: 0, errors: Vec::new() }
        }
        FactorMethod::Nmf => {
            let mf = Matrix { rows: m.rows, cols: m.cols, data: m.data.iter().map(|&x| x as f64).collect() };
            let jitter = opts.nmf_jitter.map(|e| (e, stratum_seed(opts.seed, ordinal)));
            let fit = rank_one_nmf(&mf, opts.nmf_iters, jitter);
            // Rescale both factors to sum to n, then M' = u vᵀ / n.
            let su: f64 = fit.u.iter().sum();
            let sv: f64 = fit.v.iter().sum();
            let mut approx = Matrix::filled(m.rows, m.cols, 0.0);
            if su > 0.0 && sv > 0.0 {
                for i in 0..m.rows {
                    for j in 0..m.cols {
                        approx.set(i, j, n as f64 * (fit.u[i] / su) * (fit.v[j] / sv));
                    }
                }
            }
            StratumFit {
                z: z.clone(),
                total: n,
                exact: None,
                approx,
                converged: fit.converged,
                iterations: fit.errors.len() - 1,
                errors: fit.errors,
            }
        }
    }
}

/// Integerized repair plus the distances that describe it.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizeResult {
    pub result: RepairResult,
    /// Every stratum total is multiplied by this scale.
    pub scale: u64,
    /// True when integerization lost nothing, so each stratum stays rank-one.
    pub exact: bool,
    /// Distributional L1 between the original and the repaired bag.
    pub l1: f64,
    pub converged: bool,
    pub max_iterations: usize,
}

fn lcm_of_denominators(fits: &[StratumFit], cap: u64) -> Option<u64> {
    let mut l = BigInt::from(1u32);
    let cap_big = BigInt::from(cap);
    for f in fits {
        let exact = f.exact.as_ref()?;
        for v in &exact.data {
            l = l.lcm(v.denom());
            if l > cap_big {
                return None;
            }
        }
    }
    l.to_u64()
}

/// Largest-remainder rounding of `values` (each scaled to sum to `target`).
fn largest_remainder_rational(values: &[Rational], target: u64) -> Vec<u64> {
    let mut floors: Vec<u64> = values.iter().map(|v| v.floor().to_integer().to_u64().unwrap_or(0)).collect();
    let assigned: u64 = floors.iter().sum();
    let mut rest: Vec<(Rational, usize)> = values.iter().enumerate().map(|(k, v)| (v - v.floor(), k)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in rest.iter().take(target.saturating_sub(assigned) as usize) {
        floors[k] += 1;
    }
    floors
}

fn largest_remainder_f64(values: &[f64], target: u64) -> Vec<u64> {
    let mut floors: Vec<u64> = values.iter().map(|v| libm::floor(v.max(0.0)) as u64).collect();
    let mut assigned: u64 = floors.iter().sum();
    // Rounding noise can push the floors past the target; trim from the
    // smallest fractional parts.
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = values[a] - libm::floor(values[a]);
        let fb = values[b] - libm::floor(values[b]);
        fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < target && !order.is_empty() {
        floors[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    let mut k = order.len();
    while assigned > target && k > 0 {
        k -= 1;
        let idx = order[k];
        if floors[idx] > 0 {
            floors[idx] -= 1;
            assigned -= 1;
        }
        if k == 0 && assigned > target {
            k = order.len();
        }
    }
    floors
}

/// Integerizes fitted strata into a bag and measures it against `original`.
pub fn assemble(t: &ContingencyTensor, original: &Bag, fits: &[StratumFit], opts: &FactorizeOptions) -> Result<FactorizeResult> {
    if opts.denominator_cap == 0 {
        return Err(Error::InvalidParameter("denominator_cap must be positive".into()));
    }
    let lcd = lcm_of_denominators(fits, opts.denominator_cap);
    let exact = lcd.is_some();
    let scale = lcd.unwrap_or(opts.denominator_cap);
    let mut repaired = Bag::empty(t.schema.clone());
    for f in fits {
        let target = f.total * scale;
        let counts = match &f.exact {
            Some(m) => {
                let s = Rational::from_integer(BigInt::from(scale));
                let scaled: Vec<Rational> = m.data.iter().map(|v| v * &s).collect();
                largest_remainder_rational(&scaled, target)
            }
            None => {
                let scaled: Vec<f64> = f.approx.data.iter().map(|v| v * scale as f64).collect();
                largest_remainder_f64(&scaled, target)
            }
        };
        let cols = f.approx.cols;
        for (k, &c) in counts.iter().enumerate() {
            if c > 0 {
                repaired.add_unchecked(t.full_row(k / cols, k % cols, &f.z), c);
            }
        }
    }
    let l1 = rational::to_f64(&original.l1_distance(&repaired));
    let converged = fits.iter().all(|f| f.converged);
    let exact = exact && fits.iter().all(|f| f.exact.is_some());
    let stats = RepairStats { strata: fits.len(), ..RepairStats::default() };
    Ok(FactorizeResult {
        result: RepairResult::from_bags(original, repaired, exact && converged, stats),
        scale,
        exact,
        l1,
        converged,
        max_iterations: fits.iter().map(|f| f.iterations).max().unwrap_or(0),
    })
}

/// Per-stratum rank-one repair of `bag` for a saturated CI.
pub fn factorize_repair(bag: &Bag, ci: &CiStatement, opts: &FactorizeOptions) -> Result<FactorizeResult> {
    let t = build_tensor_capped(bag, ci, opts.matrix_cap)?;
    let fits: Vec<StratumFit> = (0..t.strata.len()).map(|k| fit_stratum(&t, k, opts)).collect();
    assemble(&t, bag, &fits, opts)
}

/// `KL(p ‖ q)` in nats over the support of `p`; infinite when `q` misses it.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> f64 {
    let mut acc = 0.0;
    for (row, pv) in &p.probs {
        if pv.is_zero() {
            continue;
        }
        match q.probs.get(row) {
            Some(qv) if !qv.is_zero() => {
                let r = pv / qv;
                acc += rational::to_f64(pv) * libm::log(rational::to_f64(&r));
            }
            _ => return f64::INFINITY,
        }
    }
    acc
}

/// Empirical distribution of a bag.
pub fn empirical(bag: &Bag) -> Distribution {
    Distribution { schema: bag.schema().clone(), probs: bag.distribution().into_iter().collect() }
}
