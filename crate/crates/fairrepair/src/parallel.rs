//! Stratum-parallel drivers. Strata are independent jobs merged in stratum
//! order, so the output does not depend on the number of threads.

use fairrepair_core::dataset::{Bag, Mvd, Relation};
use fairrepair_core::factorize::{assemble, build_tensor_capped, fit_stratum, FactorizeOptions, FactorizeResult, StratumFit};
use fairrepair_core::independence::CiStatement;
use fairrepair_core::maxsat::{plan_ci_repair, plan_mvd_repair, solve_stratum, RepairOptions, RepairPlan, RepairResult, StratumOutcome};
use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Smallest number of strata handed to one worker at a time.
pub const MIN_STRATA_PER_JOB: usize = 64;

/// Worker pool with `threads` workers, or one per core when `None`.
pub fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("threads must be positive".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxsatRun {
    pub result: RepairResult,
    /// Some stratum hit the node budget while every clause was kept.
    pub budget_exhausted: bool,
    pub strata_not_optimal: usize,
}

pub fn solve_plan(plan: &RepairPlan, opts: &RepairOptions, threads: Option<usize>) -> Result<MaxsatRun> {
    opts.validate()?;
    let n = plan.plan.strata.len();
    let outcomes: Vec<StratumOutcome> = pool(threads)?.install(|| {
        (0..n)
            .into_par_iter()
            .with_min_len(MIN_STRATA_PER_JOB)
            .map(|k| solve_stratum(&plan.plan, k, opts, &|| false))
            .collect::<fairrepair_core::Result<Vec<_>>>()
    })?;
    let strata_not_optimal = outcomes.iter().filter(|o| !o.optimal).count();
    let budget_exhausted = opts.soft_fraction >= 1.0 && strata_not_optimal > 0;
    let result = plan.assemble(&outcomes)?;
    Ok(MaxsatRun { result, budget_exhausted, strata_not_optimal })
}

pub fn repair_ci(bag: &Bag, ci: &CiStatement, opts: &RepairOptions, threads: Option<usize>) -> Result<MaxsatRun> {
    solve_plan(&plan_ci_repair(bag, ci)?, opts, threads)
}

pub fn repair_mvd(relation: &Relation, mvd: &Mvd, opts: &RepairOptions, threads: Option<usize>) -> Result<MaxsatRun> {
    solve_plan(&plan_mvd_repair(relation, mvd)?, opts, threads)
}

pub fn factorize(bag: &Bag, ci: &CiStatement, opts: &FactorizeOptions, threads: Option<usize>) -> Result<FactorizeResult> {
    let t = build_tensor_capped(bag, ci, opts.matrix_cap)?;
    let n = t.strata.len();
    let fits: Vec<StratumFit> = pool(threads)?.install(|| {
        (0..n).into_par_iter().with_min_len(MIN_STRATA_PER_JOB).map(|k| fit_stratum(&t, k, opts)).collect()
    });
    Ok(assemble(&t, bag, &fits, opts)?)
}
