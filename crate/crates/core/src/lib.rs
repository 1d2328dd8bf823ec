//! Simulation and verification of measure-valued stochastic equations
//! `dC_t = K_t(C_-)ᵀ dY_t` on dyadic partitions of `[0, T]^ℓ`.
//!
//! ```
//! use mvsde::{scenario, solver::Scheme};
//!
//! let sc = scenario::two_cell(0.1, mvsde::DriverConfig::brownian(100, 1.0, 7));
//! let sol = sc.solve(0, &[0.5, 1.0]).unwrap();
//! assert!((sol.last().mass() - 1.0).abs() < 1e-12);
//! assert_eq!(sc.scheme, Scheme::linear());
//! ```

pub mod catalog;
pub mod measure;
pub mod quadrature;
pub mod coefficient;
pub mod driver;
pub mod solver;
pub mod ibp;
pub mod scenario;
pub mod verification;

pub use catalog::{CatalogError, CellMap, Cutoff, XFunction, YFunction};
pub use coefficient::{CoefficientError, CoefficientSpec, CoefficientSum};
pub use driver::{DriverConfig, DriverError, DriverKind, DriverPath};
pub use ibp::{GridFunction, IbpError};
pub use measure::{InitialLaw, MeasureError, MuSpec, Partition, PartitionMeasure, Space, TestFunction};
pub use scenario::Scenario;
pub use solver::{Scheme, SchemeKind, SolutionPath, Solver, SolverError};
pub use verification::{VerificationError, VerificationReport};

use thiserror::Error;

/// Any error the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Ibp(#[from] IbpError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
}

impl Error {
    /// True for failures of the numerics (non-finite values, collapsed mass)
    /// rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver(SolverError::NonFinite { .. } | SolverError::MassCollapse { .. })
                | Error::Verification(VerificationError::Solver(
                    SolverError::NonFinite { .. } | SolverError::MassCollapse { .. }
                ))
        )
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/drivers.md")]
    mod drivers {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/ibp.md")]
    mod ibp {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
