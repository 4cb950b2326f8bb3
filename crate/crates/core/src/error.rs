use thiserror::Error;

use crate::boundary::AdmissibilityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("grid too coarse: nx = {nx}, need at least {min}")]
    GridTooCoarse { nx: usize, min: usize },

    #[error("boundary operator has eigenvalue {eigenvalue:e} near zero (mode {mode}, t = {t}); kernel crossings are not supported")]
    SpectralFlowUnsupported { t: f64, mode: i32, eigenvalue: f64 },

    #[error("clifford convention error: {0}")]
    Convention(String),

    #[error("degenerate boundary constraints: singular value {singular_value:e} is neither zero nor bounded away from zero")]
    DegenerateConstraints { singular_value: f64 },

    #[error("constrained operator is not self-adjoint (defect {defect:e})")]
    SelfadjointnessViolation { defect: f64 },

    #[error("linear solve did not converge: relative residual {residual:e}")]
    NonConvergedLinearSolve { residual: f64 },

    #[error("step size {dt} exceeds the RK4 stability bound {bound}")]
    StepSizeTooLarge { dt: f64, bound: f64 },

    #[error("source support touches the timelike boundary")]
    SourceTouchesBoundary,

    #[error("boundary family is not admissible")]
    Inadmissible(Box<AdmissibilityReport>),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numerical backend failure: {0}")]
    Backend(String),
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
