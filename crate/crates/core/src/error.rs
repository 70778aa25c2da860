use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(&'static str),

    /// Adaptive quadrature ran out of subdivisions before meeting its tolerance.
    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error:e}")]
    QuadratureNonconvergence { estimate: f64, error: f64 },

    /// The backward integrator needed a step below the configured minimum.
    #[error("step size underflow at t = {t:e} after {steps} steps")]
    StepUnderflow { t: f64, steps: usize },

    /// A bisection predicate did not change sign on the initial bracket.
    #[error("bracket failure: {0}")]
    BracketFailure(&'static str),

    /// A search was asked to run over an empty set.
    #[error("empty search lattice")]
    EmptyLattice,
}

pub type Result<T> = core::result::Result<T, Error>;
