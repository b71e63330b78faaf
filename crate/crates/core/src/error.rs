use alloc::boxed::Box;
use alloc::string::String;

use crate::data::DecisionRule;
use crate::learn::SolveReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} covariates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid observation at row {row}: {reason}")]
    InvalidObservation { row: usize, reason: &'static str },
    #[error("rank-deficient design: column `{column}` is collinear with earlier columns")]
    RankDeficient { column: String },
    #[error("complete separation in the {0} model")]
    Separation(&'static str),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("missing nuisance component: {0}")]
    MissingComponent(&'static str),
    #[error("weak instrument: marginal compliance {compliance:.6} is below the floor {floor}")]
    WeakInstrument { compliance: f64, floor: f64 },
    #[error("solver did not reach duality gap {tol:e} within {passes} passes (gap {gap:e})")]
    NonConvergence {
        passes: usize,
        gap: f64,
        tol: f64,
        best: Box<(DecisionRule, SolveReport)>,
    },
    #[error("cross-validation fold {fold} is empty")]
    EmptyFold { fold: usize },
    #[error("invalid probability table: {0}")]
    InvalidTable(String),
    #[error("{failed} of {total} replications failed, above the tolerated share")]
    TooManyFailures { failed: usize, total: usize },
}
