//! Config-driven experiments over the `mvsde` library: every run writes
//! `report.json`, `paths/*.csv` and `tables/*.csv` under the output directory.

pub mod artifacts;
pub mod config;
mod experiments;

use std::fmt::Write as _;

use mvsde::driver::DriverError;
use mvsde::ibp::IbpError;
use mvsde::verification::{ineq1_factor, VerificationError};
use mvsde::{Error, SolverError};
use serde::Serialize;
use thiserror::Error;

pub use artifacts::Artifacts;
pub use config::{Experiment, RunConfig};
pub use experiments::shift_amplitude;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn numerical(e: &Error) -> bool {
    e.is_numerical()
        || matches!(
            e,
            Error::Driver(DriverError::StepTooActive { .. })
                | Error::Verification(VerificationError::Invalid(_))
                | Error::Verification(VerificationError::Driver(DriverError::StepTooActive { .. }))
                | Error::Verification(VerificationError::Solver(SolverError::NonFinite { .. }))
        )
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if numerical(&e) {
            CliError::Numerical(e.to_string())
        } else if let Error::Driver(DriverError::Io(m)) = &e {
            CliError::Io(m.clone())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

macro_rules! via_library_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}

via_library_error!(
    VerificationError,
    SolverError,
    DriverError,
    IbpError,
    mvsde::CoefficientError,
    mvsde::MeasureError,
    mvsde::CatalogError
);

/// One pass/fail line of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub experiment: Experiment,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.passed {
            0
        } else {
            4
        }
    }
}

/// Runs `experiment` on a pool of `config.threads` workers and writes artifacts.
pub fn run(config: &RunConfig, experiment: Experiment) -> Result<Outcome, CliError> {
    let mut config = config.clone();
    config.experiment = Some(experiment);
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| experiments::run(&config, experiment))
}

/// Human-readable plan: resolved parameters, constants, contraction factor and
/// the segment plan of a probe path. Simulates nothing but the probe path.
pub fn describe(config: &RunConfig, experiment: Experiment) -> Result<String, CliError> {
    let mut s = String::new();
    let w = |s: &mut String, line: String| {
        let _ = writeln!(s, "{line}");
    };
    w(&mut s, format!("experiment: {}", experiment.name()));
    if experiment == Experiment::IbpCheck {
        let i = &config.ibp;
        w(&mut s, format!("grid: {} nodes per axis, {} random cases per identity", i.nodes, i.cases));
        w(&mut s, format!("refinement: {} and {} nodes per axis", i.refinement_nodes, 2 * i.refinement_nodes - 1));
        return Ok(s);
    }
    let sc = config.scenario()?;
    let p = sc.partition()?;
    let space = p.space();
    w(&mut s, format!("space: [0, {}]^{}", space.side, space.dim));
    w(&mut s, format!("partition: level {}, {} cells", p.level(), p.len()));
    w(&mut s, format!("coefficient terms: {}, d = {}, k = {}", sc.coefficient.terms().len(), sc.coefficient.d(), sc.coefficient.first().k_h()));
    w(&mut s, format!("driver: {:?}, {} steps on [0, {}], seed {}", sc.driver.kind, sc.driver.steps, sc.driver.horizon, sc.driver.seed));
    w(&mut s, format!("scheme: {:?}", sc.scheme.kind));
    w(&mut s, format!("paths: {}", config.n_paths));
    let constants = sc.coefficient.estimate_constants(4000, config.seed)?;
    for (i, c) in constants.iter().enumerate() {
        w(&mut s, format!(
            "term {i}: eps' empirical {:.4} analytic {:.4} (with cutoff {:.4}); eps'' empirical {:.4}, sup bound {:.4}{}",
            c.eps_prime_emp,
            c.eps_prime_analytic,
            c.eps_prime_with_cutoff,
            c.eps_dblprime_emp,
            c.sup_bound_analytic,
            c.derivative_bound.map(|b| format!(", derivative bound {b:.4}")).unwrap_or_default()
        ));
    }
    let (d, k) = (sc.coefficient.d(), sc.coefficient.first().k_h());
    let eps1 = sc.coefficient.eps_prime();
    let eps2 = sc.coefficient.eps_dblprime();
    let factor = ineq1_factor(d, k, eps1, eps2, config.a, config.a_prime);
    w(&mut s, format!(
        "contraction factor 1 - d a' a (2 k eps' + 3 eps'') = {factor:.4} (a = {}, a' = {}, eps' = {eps1}, eps'' = {eps2})",
        config.a, config.a_prime
    ));
    if factor <= 0.5 {
        w(&mut s, "warning: contraction factor is not above 1/2, which the existence argument requires; \
                   reduce a or the coefficient constants".to_string());
    }
    let probe = sc.driver.sample(d, 0)?;
    match probe.segment(config.a) {
        Ok(seg) => {
            let shown: Vec<String> = seg.breakpoints.iter().take(8).map(|b| format!("{b:.4}")).collect();
            w(&mut s, format!(
                "segment plan (probe path 0, a = {}): {} segments, breakpoints {}{}",
                config.a,
                seg.segments(),
                shown.join(", "),
                if seg.breakpoints.len() > 8 { ", ..." } else { "" }
            ));
        }
        Err(e) => w(&mut s, format!("segment plan unavailable: {e}")),
    }
    Ok(s)
}
