//! Monte-Carlo checks on ensembles of solutions driven by common paths:
//! seminorm estimates, the two comparison inequalities, convergence and
//! uniqueness studies, martingale z-scores and pathwise diagnostics.

mod inequality;
mod stats;
mod studies;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inequality::{
    check_ineq1, check_ineq2, ineq1_factor, ineq1_terms, ineq2_factor, sample_grid, sup_distance, InequalityReport,
    Term,
};
pub use stats::{KahanSum, Summary};
pub use studies::{
    approximant, approximation_error, convergence_study, martingale_zscores, scheme_gap, uniqueness_probe, ConvergenceRow,
    ConvergenceTable, RatioTest, UniquenessReport, CONVERGENCE_RATIO, ZScore, ZScoreTable,
};

use crate::coefficient::{CoefficientError, CoefficientSum, PreparedSum};
use crate::driver::{DriverConfig, DriverError, DriverPath};
use crate::measure::{InitialLaw, MeasureError, Space, TestFunction};
use crate::solver::{checkpoint_indices, Scheme, Solver, SolverError, TrajectoryRecorder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerificationError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("{0}")]
    Invalid(String),
    #[error("mismatched grids: {0}")]
    Mismatch(String),
}

/// Named test function in the family `(f_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub name: String,
    pub f: TestFunction,
}

/// Finite truncation of the family used in the seminorm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub members: Vec<FamilyMember>,
}

impl TestFamily {
    /// Eight diagonal lower boxes `[0, kT/8)^ℓ` and four coordinate monomials.
    pub fn standard(space: Space) -> Self {
        let mut members = Vec::new();
        for k in 1..=8 {
            let b = k as f64 / 8.0 * space.side;
            members.push(FamilyMember { name: format!("box_{k}/8"), f: TestFunction::lower_box(vec![b; space.dim]) });
        }
        for m in 0..4 {
            let axis = m % space.dim;
            let power = 1 + (m / space.dim) as u32;
            let mut powers = vec![0; space.dim];
            powers[axis] = power;
            members.push(FamilyMember { name: format!("x{}^{power}", axis + 1), f: TestFunction::monomial(powers) });
        }
        Self { members }
    }

    pub fn with(mut self, name: impl Into<String>, f: TestFunction) -> Self {
        self.members.push(FamilyMember { name: name.into(), f });
        self
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn project(&self, law: &InitialLaw) -> Result<ProjectedFamily, VerificationError> {
        let means = self.members.iter().map(|m| law.conditional_means(&m.f)).collect::<Result<Vec<_>, _>>()?;
        let mu_values = means.iter().map(|row| law.extended_pairing(law.measure().weights(), row)).collect();
        Ok(ProjectedFamily { names: self.names(), means, mu_values })
    }
}

/// Family members reduced to per-cell conditional means under `μ`, so that
/// `C[f] = Σ_B C(B) E_μ[f | B]` for any state on the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedFamily {
    pub names: Vec<String>,
    means: Vec<Vec<f64>>,
    /// `μ[f_j]`.
    pub mu_values: Vec<f64>,
}

impl ProjectedFamily {
    pub fn values(&self, weights: &[f64]) -> Vec<f64> {
        self.means.iter().map(|row| row.iter().zip(weights).map(|(m, w)| m * w).sum()).collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One discretisation to be run on shared driver paths.
#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub coefficient: CoefficientSum,
    pub kernel: PreparedSum,
    pub law: InitialLaw,
    pub scheme: Scheme,
    /// Coarsening factor applied to the sampled path.
    pub coarsen: usize,
    pub family: ProjectedFamily,
}

impl Arm {
    pub fn new(
        label: impl Into<String>,
        coefficient: CoefficientSum,
        law: InitialLaw,
        scheme: Scheme,
        coarsen: usize,
        family: &TestFamily,
    ) -> Result<Self, VerificationError> {
        let kernel = coefficient.prepare(law.partition())?;
        let family = family.project(&law)?;
        Ok(Self { label: label.into(), coefficient, kernel, law, scheme, coarsen, family })
    }

    /// Weights at every grid time strictly before `until` (all times if `None`).
    pub fn run(&self, fine: &DriverPath, until: Option<f64>) -> Result<ArmRun, VerificationError> {
        let path = fine.coarsen(self.coarsen)?;
        let n = match until {
            Some(r) => path.times().partition_point(|&t| t < r - 1e-12 * path.horizon()),
            None => path.steps() + 1,
        };
        let mut rec = TrajectoryRecorder::new(n);
        let sol = Solver::new(&self.kernel, self.scheme).solve_observed(self.law.measure(), &path, &[], &mut rec)?;
        if let Some(step) = sol.diagnostics.invalid_at {
            return Err(VerificationError::Invalid(format!("{}: negative weight at step {step}", self.label)));
        }
        Ok(ArmRun { times: path.times()[..rec.states.len()].to_vec(), weights: rec.states })
    }
}

/// Recorded trajectory of one arm on one path.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub times: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl ArmRun {
    /// State at time `t`, which must be a grid time of this run.
    pub fn at(&self, t: f64) -> Result<&[f64], VerificationError> {
        let i = self.times.partition_point(|&s| s <= t + 1e-12);
        match i.checked_sub(1) {
            Some(i) if (self.times[i] - t).abs() <= 1e-12 => Ok(&self.weights[i]),
            _ => Err(VerificationError::Mismatch(format!("time {t} is not a grid time"))),
        }
    }
}

/// Per family member, `sup_u |C′_u[f_j] − C″_u[f_j]|` over the grid times of
/// the run with fewer points.
pub fn sup_differences(
    a: &ArmRun,
    fa: &ProjectedFamily,
    b: &ArmRun,
    fb: &ProjectedFamily,
) -> Result<Vec<f64>, VerificationError> {
    if fa.len() != fb.len() {
        return Err(VerificationError::Mismatch("families differ in size".into()));
    }
    let (sparse, fs, dense, fd) = if a.times.len() <= b.times.len() { (a, fa, b, fb) } else { (b, fb, a, fa) };
    let mut sup = vec![0.0f64; fa.len()];
    for (t, w) in sparse.times.iter().zip(&sparse.weights) {
        let u = fs.values(w);
        let v = fd.values(dense.at(*t)?);
        for ((s, x), y) in sup.iter_mut().zip(&u).zip(&v) {
            *s = s.max((x - y).abs());
        }
    }
    Ok(sup)
}

/// Where the running supremum stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    /// Up to (not including) the first breakpoint of the greedy segmentation
    /// with activity bound `a`, computed on the finest path.
    FirstSegment { a: f64 },
    /// The whole horizon.
    Horizon,
}

impl Window {
    pub fn end(&self, fine: &DriverPath) -> Result<Option<f64>, VerificationError> {
        match self {
            Window::Horizon => Ok(None),
            Window::FirstSegment { a } => Ok(Some(fine.segment(*a)?.breakpoints[1])),
        }
    }
}

/// Paths shared by every arm of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub driver: DriverConfig,
    pub n_paths: usize,
    pub window: Window,
}

impl Ensemble {
    pub fn sample(&self, d: usize, index: u64) -> Result<DriverPath, VerificationError> {
        Ok(self.driver.sample(d, index)?)
    }
}

/// Runs `f` on every path index in parallel and returns results in index order.
pub fn for_each_path<T: Send>(
    n_paths: usize,
    f: impl Fn(u64) -> Result<T, VerificationError> + Sync,
) -> Result<Vec<T>, VerificationError> {
    (0..n_paths as u64).into_par_iter().map(&f).collect()
}

fn common_d(arms: &[&Arm]) -> Result<usize, VerificationError> {
    let d = arms.first().ok_or_else(|| VerificationError::Invalid("no arms".into()))?.coefficient.d();
    if arms.iter().any(|a| a.coefficient.d() != d) {
        return Err(VerificationError::Mismatch("arms need the same driver dimension".into()));
    }
    Ok(d)
}

/// Estimate of `‖C′ − C″‖_{R−} = sup_j E[sup_{u<R} |C′_u[f_j] − C″_u[f_j]|]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormEstimate {
    pub label: String,
    pub value: f64,
    pub se: f64,
    /// Family member attaining the maximum.
    pub argmax: usize,
    pub names: Vec<String>,
    pub per_function: Vec<Summary>,
    pub n_paths: usize,
    pub window: Window,
    /// Per path, per family member running suprema.
    #[serde(skip)]
    pub per_path: Vec<Vec<f64>>,
}

impl SeminormEstimate {
    fn from_samples(label: String, names: Vec<String>, per_path: Vec<Vec<f64>>, window: Window) -> Self {
        let m = names.len();
        let per_function: Vec<Summary> =
            (0..m).map(|j| Summary::of(&per_path.iter().map(|row| row[j]).collect::<Vec<_>>())).collect();
        let argmax = (0..m).fold(0, |best, j| if per_function[j].mean > per_function[best].mean { j } else { best });
        let (value, se) = per_function.get(argmax).map(|s| (s.mean, s.se)).unwrap_or((0.0, 0.0));
        Self { label, value, se, argmax, names, per_function, n_paths: per_path.len(), window, per_path }
    }

    /// Samples of member `j`, one per path.
    pub fn samples(&self, j: usize) -> Vec<f64> {
        self.per_path.iter().map(|row| row[j]).collect()
    }
}

/// Seminorm estimates for each requested pair of arms, all on the same paths.
pub fn compare(
    arms: &[&Arm],
    pairs: &[(usize, usize)],
    ensemble: &Ensemble,
) -> Result<Vec<SeminormEstimate>, VerificationError> {
    let d = common_d(arms)?;
    let names = arms[0].family.names.clone();
    let per_path = for_each_path(ensemble.n_paths, |i| {
        let fine = ensemble.sample(d, i)?;
        let until = ensemble.window.end(&fine)?;
        let runs = arms.iter().map(|a| a.run(&fine, until)).collect::<Result<Vec<_>, _>>()?;
        pairs
            .iter()
            .map(|&(x, y)| sup_differences(&runs[x], &arms[x].family, &runs[y], &arms[y].family))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(p, &(x, y))| {
            let samples = per_path.iter().map(|row| row[p].clone()).collect();
            SeminormEstimate::from_samples(
                format!("{} vs {}", arms[x].label, arms[y].label),
                names.clone(),
                samples,
                ensemble.window,
            )
        })
        .collect())
}

pub fn estimate_seminorm(a: &Arm, b: &Arm, ensemble: &Ensemble) -> Result<SeminormEstimate, VerificationError> {
    Ok(compare(&[a, b], &[(0, 1)], ensemble)?.remove(0))
}

/// Pathwise diagnostics over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnsembleDiagnostics {
    pub n_paths: usize,
    pub max_mass_error: f64,
    pub min_weight: f64,
    pub scaling_events: usize,
    pub max_condition2_residual: f64,
    pub max_reconciliation_error: f64,
    pub invalid_paths: usize,
    pub total_jumps: usize,
}

/// Solves every path and folds the per-path diagnostics.
pub fn ensemble_diagnostics(
    arm: &Arm,
    driver: &DriverConfig,
    n_paths: usize,
    checkpoint_times: &[f64],
) -> Result<EnsembleDiagnostics, VerificationError> {
    let d = arm.coefficient.d();
    let per_path = for_each_path(n_paths, |i| {
        let path = driver.sample(d, i)?.coarsen(arm.coarsen)?;
        let cps = checkpoint_indices(&path, checkpoint_times, None);
        let sol = Solver::new(&arm.kernel, arm.scheme).solve(arm.law.measure(), &path, &cps)?;
        Ok((sol.diagnostics.clone(), sol.reconciliation_error(), path.jump_count()))
    })?;
    let mut out = EnsembleDiagnostics { n_paths, min_weight: f64::INFINITY, ..Default::default() };
    for (diag, rec, jumps) in per_path {
        out.max_mass_error = out.max_mass_error.max(diag.max_mass_error);
        out.min_weight = out.min_weight.min(diag.min_weight);
        out.scaling_events += diag.scaling_events;
        out.max_condition2_residual = out.max_condition2_residual.max(diag.max_condition2_residual);
        out.max_reconciliation_error = out.max_reconciliation_error.max(rec);
        out.invalid_paths += usize::from(diag.invalid_at.is_some());
        out.total_jumps += jumps;
    }
    Ok(out)
}

/// Everything a verification run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VerificationReport {
    pub family: Vec<String>,
    pub seminorms: Vec<SeminormEstimate>,
    pub inequalities: Vec<InequalityReport>,
    pub zscores: Vec<ZScore>,
    pub diagnostics: Option<EnsembleDiagnostics>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.inequalities.iter().all(|r| r.pass) && self.zscores.iter().all(|z| z.pass())
    }
}
