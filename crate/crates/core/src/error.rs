use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("attribute `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("value `{value}` is outside the domain of `{attribute}`")]
    ValueOutsideDomain { attribute: String, value: String },
    #[error("row has {found} values but the schema has {expected} attributes")]
    ArityMismatch { expected: usize, found: usize },
    #[error("attribute `{0}` has different domains on the two join operands")]
    IncompatibleDomains(String),
    #[error("attribute sets are not disjoint: `{0}` appears twice")]
    OverlappingSets(String),
    #[error("attribute sets do not cover the schema: `{0}` is missing")]
    NotAPartition(String),
    #[error("CI statement is not saturated: `{0}` is not mentioned")]
    NotSaturated(String),
    #[error("schema has {size} attributes, above the configured bound of {bound}")]
    SchemaTooLarge { size: usize, bound: usize },
    #[error("joint domain has {size} cells, above the configured cap of {cap}")]
    DomainTooLarge { size: u128, cap: u128 },
    #[error("encoding needs {count} hard clauses, above the configured cap of {cap}")]
    TooManyClauses { count: u128, cap: u128 },
    #[error("graph has a cycle through `{0}`")]
    Cyclic(String),
    #[error("invalid CPT for `{variable}`: {reason}")]
    InvalidCpt { variable: String, reason: String },
    #[error("interventions out of order: `{earlier}` is a descendant of `{later}`")]
    InterventionOrder { earlier: String, later: String },
    #[error("positivity fails: {0}")]
    Positivity(String),
    #[error("invalid fairness roles: {0}")]
    InvalidRoles(String),
    #[error("attribute `{0}` must be binary")]
    NotBinary(String),
    #[error("group `{0}` is absent from the data")]
    AbsentGroup(String),
    #[error("hard clauses are unsatisfiable")]
    Unsatisfiable,
    #[error("literal references undeclared variable {0}")]
    UndeclaredVariable(u32),
    #[error("only unit soft clauses are supported")]
    NonUnitSoftClause,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
