//! Error types shared across the solver.

use std::fmt;

/// Errors produced by mesh construction, assembly, linear solves and the
/// iteration drivers.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration (bad element order, degenerate rectangle, ...).
    Config(String),
    /// Two fields / operators were built on different finite-element spaces.
    SpaceMismatch,
    /// An operation that divides by the field norm received the zero field.
    ZeroField,
    /// The operation requires a unit-mass field.
    NotNormalized { mass: f64 },
    /// A point passed to `eval_at_points` lies outside the closed domain.
    PointOutsideDomain { x: f64, y: f64 },
    /// Matrix / vector dimensions do not match.
    DimensionMismatch { expected: usize, got: usize },
    /// The matrix is numerically singular. For shifted operators this signals
    /// that the shift sits on the discrete spectrum.
    SingularMatrix { pivot: f64 },
    /// The shift of the J-operator coincides with an eigenvalue.
    ShiftOnSpectrum { sigma: f64, pivot: f64 },
    /// A solve finished with a residual above the contract.
    ResidualTooLarge { residual: f64, bound: f64 },
    /// The A-inner product `(A^-1 M u, u)` came out non-positive, which
    /// violates coercivity and signals an assembly or configuration bug.
    NonPositiveGamma { value: f64 },
    /// The energy increased for several consecutive steps outside the basin
    /// of attraction.
    Diverged { energy_increase: f64 },
    /// An eigensolver failed to reduce its residual.
    EigenStagnation { residual: f64 },
    /// A spectral diagnostic was requested for a state that has not converged.
    NotConverged { residual: f64 },
    /// Filesystem error while exporting run artifacts.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::SpaceMismatch => write!(f, "fields live on different finite-element spaces"),
            Error::ZeroField => write!(f, "operation undefined for the zero field"),
            Error::NotNormalized { mass } => {
                write!(f, "field is not unit-mass (got mass {mass:.3e})")
            }
            Error::PointOutsideDomain { x, y } => {
                write!(f, "point ({x}, {y}) lies outside the computational domain")
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::SingularMatrix { pivot } => {
                write!(f, "matrix is numerically singular (pivot estimate {pivot:.3e})")
            }
            Error::ShiftOnSpectrum { sigma, pivot } => write!(
                f,
                "shift {sigma} lies on the discrete spectrum (pivot estimate {pivot:.3e})"
            ),
            Error::ResidualTooLarge { residual, bound } => {
                write!(f, "solve residual {residual:.3e} exceeds bound {bound:.3e}")
            }
            Error::NonPositiveGamma { value } => {
                write!(f, "non-positive inverse-iteration normalization {value:.3e}")
            }
            Error::Diverged { energy_increase } => {
                write!(f, "energy increased by {energy_increase:.3e} for several steps; aborting")
            }
            Error::EigenStagnation { residual } => {
                write!(f, "eigensolver stagnated at residual {residual:.3e}")
            }
            Error::NotConverged { residual } => {
                write!(f, "state has not converged (residual {residual:.3e})")
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
