//! Spectral analysis of scaled birth-and-death generators.
//!
//! The killed generator of a birth-and-death chain with rates `K b(n/K)` and
//! `K d(n/K)` is conjugated to a symmetric tridiagonal (Jacobi) operator whose
//! low-lying spectrum is computed by bisection and twisted factorizations.
//! The limiting spectra and the quasi-stationary distribution build on it, and
//! a Gillespie simulator provides an independent Monte-Carlo check.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod analysis;
pub mod eigensolve;
pub mod exec;
pub mod limit_spectra;
pub mod model;
pub mod operator;
pub mod qsd;
pub mod quadrature;
pub mod simulate;
pub mod validate;

use thiserror::Error;

pub use eigensolve::{top_eigenpairs, SolverOptions, SpectralResult};
pub use exec::Execution;
pub use model::{model_constants, ModelConstants, RateModel};
pub use operator::{build_operator, choose_truncation, TridiagonalOperator, TruncationSpec};

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Operator(#[from] operator::OperatorError),
    #[error(transparent)]
    Solver(#[from] eigensolve::SolverError),
    #[error(transparent)]
    Limit(#[from] limit_spectra::LimitError),
    #[error(transparent)]
    Qsd(#[from] qsd::QsdError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Simulation(#[from] simulate::SimulationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid input rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Model(_) | Error::Operator(operator::OperatorError::InvalidK) => true,
            Error::Limit(e) => e.is_domain_error(),
            Error::Analysis(analysis::AnalysisError::InvalidInput(_)) => true,
            Error::Simulation(simulate::SimulationError::InvalidConfig(_)) => true,
            Error::Solver(eigensolve::SolverError::InvalidRequest(_)) => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
