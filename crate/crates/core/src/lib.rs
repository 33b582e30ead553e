//! Repairing discrete training data so that a saturated conditional
//! independence holds, plus the causal and associational machinery needed to
//! argue that classifiers trained on the repaired data are fair.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function over immutable values; file formats, process spawning and thread
//! pools live in the `fairrepair` companion crate.
//!
//! Module map:
//!
//! - [`dataset`]: bags, relations, projections, joins, MVDs and the
//!   bag-to-keyed-set reduction.
//! - [`independence`]: exact CI tests, conditional mutual information,
//!   graphoid closure and Markov boundaries.
//! - [`causal`]: discrete causal DAGs with rational CPTs, d-separation,
//!   interventions and fairness verdicts.
//! - [`maxsat`]: the MVD lineage encoding, a branch-and-bound weighted MaxSAT
//!   solver and the end-to-end MVD/CI repair.
//! - [`factorize`]: contingency tensors, independent coupling and rank-one
//!   NMF repair.
//! - [`audit`]: fairness metrics, ROD and training-data certificates.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod audit;
pub mod causal;
pub mod dataset;
pub mod error;
pub mod factorize;
pub mod independence;
pub mod maxsat;
pub mod rational;

pub use error::{Error, Result};
pub use rational::Rational;
