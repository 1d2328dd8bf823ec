//! Time stepping of `dC = K(C_−)ᵀ dY` on a partition, with per-cell
//! stochastic-exponential factors tracked alongside the weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficient::{dot, CellKernel, CoefficientError, CoefficientSum, MASS_FLOOR};
use crate::driver::{DriverError, DriverPath, Segmentation};
use crate::measure::{InitialLaw, MeasureError, Partition, PartitionMeasure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite weight at step {step}")]
    NonFinite { step: usize },
    #[error("mass {mass} fell below 1/3 at step {step}")]
    MassCollapse { step: usize, mass: f64 },
    #[error("{0}")]
    Mismatch(String),
    #[error("coefficient is not measurable with respect to the level-{level} partition")]
    NotMeasurable { level: u32 },
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// `w ← w (1 + kᵀ dY)`: exact mass.
    #[default]
    Linear,
    /// `w ← w exp(kᵀ dW − ½ Σ k² d⟨W⟩)` on continuous increments: exact positivity.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub kind: SchemeKind,
    /// Apply the "scale" policy when `kᵀ dY ≤ −1 + δ` on a linear update.
    #[serde(default = "yes")]
    pub jump_scaling: bool,
}

fn yes() -> bool {
    true
}

impl Scheme {
    pub fn linear() -> Self {
        Self { kind: SchemeKind::Linear, jump_scaling: true }
    }

    pub fn exponential() -> Self {
        Self { kind: SchemeKind::Exponential, jump_scaling: true }
    }
}

impl From<SchemeKind> for Scheme {
    fn from(kind: SchemeKind) -> Self {
        Self { kind, jump_scaling: true }
    }
}

/// Scale factor `λ ∈ (0, 1]` keeping `λ kᵀdY ≥ −1 + δ` for every cell.
pub fn admissible_scale(worst: f64, margin: f64) -> f64 {
    if worst <= -1.0 + margin {
        (-1.0 + margin) / worst
    } else {
        1.0
    }
}

/// Linear update of `weights` with kernels `k` (cells × d). Returns the scale
/// applied and writes `ln(1 + λ kᵀdY)` per cell into `log_inc`.
pub fn step_linear(
    weights: &mut [f64],
    k: &[f64],
    dy: &[f64],
    margin: f64,
    scaling: bool,
    log_inc: &mut [f64],
) -> f64 {
    let d = dy.len();
    let worst = k.chunks_exact(d).map(|row| dot(row, dy)).fold(f64::INFINITY, f64::min);
    let lambda = if scaling { admissible_scale(worst, margin) } else { 1.0 };
    for ((w, row), l) in weights.iter_mut().zip(k.chunks_exact(d)).zip(log_inc.iter_mut()) {
        let x = lambda * dot(row, dy);
        *w *= 1.0 + x;
        *l = if x > -1.0 { x.ln_1p() } else { f64::NEG_INFINITY };
    }
    lambda
}

/// Exponential update; writes the exponent per cell into `log_inc`.
pub fn step_exponential(weights: &mut [f64], k: &[f64], dw: &[f64], qv: &[f64], log_inc: &mut [f64]) {
    let d = dw.len();
    for ((w, row), l) in weights.iter_mut().zip(k.chunks_exact(d)).zip(log_inc.iter_mut()) {
        let z = dot(row, dw) - 0.5 * row.iter().zip(qv).map(|(k, q)| k * k * q).sum::<f64>();
        *w *= z.exp();
        *l = z;
    }
}

/// One increment applied inside a grid step, as seen by observers.
#[derive(Debug, Clone, Copy)]
pub struct SubStep<'a> {
    pub step: usize,
    /// Weights the kernels were evaluated at.
    pub left: &'a [f64],
    pub increment: &'a [f64],
    pub qv: &'a [f64],
    /// Scale applied by the jump policy (1 when inactive).
    pub lambda: f64,
    pub jump: bool,
    pub kind: SchemeKind,
}

/// Hooks into a solve; all methods default to doing nothing.
pub trait Observer {
    fn start(&mut self, _weights: &[f64]) {}
    fn sub_step(&mut self, _sub: &SubStep<'_>) {}
    /// Called with the state at grid index `step + 1`.
    fn step_end(&mut self, _step: usize, _weights: &[f64]) {}
}

impl Observer for () {}

/// Records the weights at every grid index `< until`.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    pub until: usize,
    pub states: Vec<Vec<f64>>,
}

impl TrajectoryRecorder {
    pub fn new(until: usize) -> Self {
        Self { until, states: Vec::new() }
    }
}

impl Observer for TrajectoryRecorder {
    fn start(&mut self, weights: &[f64]) {
        if self.until > 0 {
            self.states.push(weights.to_vec());
        }
    }

    fn step_end(&mut self, step: usize, weights: &[f64]) {
        if step + 1 < self.until {
            self.states.push(weights.to_vec());
        }
    }
}

/// Runs two observers side by side.
pub struct Both<'a, A: Observer + ?Sized, B: Observer + ?Sized>(pub &'a mut A, pub &'a mut B);

impl<A: Observer + ?Sized, B: Observer + ?Sized> Observer for Both<'_, A, B> {
    fn start(&mut self, weights: &[f64]) {
        self.0.start(weights);
        self.1.start(weights);
    }

    fn sub_step(&mut self, sub: &SubStep<'_>) {
        self.0.sub_step(sub);
        self.1.sub_step(sub);
    }

    fn step_end(&mut self, step: usize, weights: &[f64]) {
        self.0.step_end(step, weights);
        self.1.step_end(step, weights);
    }
}

/// State at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub index: usize,
    pub time: f64,
    pub weights: Vec<f64>,
    /// `ln E(k(C_−, A)ᵀ·Y)_t` per cell.
    pub log_factors: Vec<f64>,
}

impl Checkpoint {
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `E(k(C_−, A)ᵀ·Y)_t` per cell.
    pub fn factors(&self) -> Vec<f64> {
        self.log_factors.iter().map(|l| l.exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub steps: usize,
    pub max_mass_error: f64,
    pub min_weight: f64,
    pub scaling_events: usize,
    pub max_condition2_residual: f64,
    /// First step that produced a negative weight (scaling disabled).
    pub invalid_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub partition: Partition,
    pub mu: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub diagnostics: Diagnostics,
}

impl SolutionPath {
    pub fn is_valid(&self) -> bool {
        self.diagnostics.invalid_at.is_none()
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a solution has at least one checkpoint")
    }

    pub fn at_time(&self, t: f64) -> Option<&Checkpoint> {
        self.checkpoints.iter().rev().find(|c| c.time <= t + 1e-12)
    }

    /// Largest relative gap between `w_A` and `μ(A) E_A` over checkpoints and cells.
    pub fn reconciliation_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.checkpoints {
            for ((w, m), l) in c.weights.iter().zip(&self.mu).zip(&c.log_factors) {
                let target = m * l.exp();
                let scale = w.abs().max(target.abs());
                if scale > 0.0 {
                    worst = worst.max((w - target).abs() / scale);
                }
            }
        }
        worst
    }
}

/// Grid indices for the requested times (largest grid time not after each),
/// plus index 0, every jump point and the segmentation breakpoints.
pub fn checkpoint_indices(path: &DriverPath, times: &[f64], segmentation: Option<&Segmentation>) -> Vec<usize> {
    let grid = path.times();
    let mut idx = vec![0];
    for &t in times {
        let i = grid.partition_point(|&g| g <= t + 1e-12 * path.horizon());
        idx.push(i.saturating_sub(1));
    }
    idx.extend(path.jump_points());
    if let Some(s) = segmentation {
        idx.extend(&s.indices);
    }
    idx.sort_unstable();
    idx.dedup();
    idx
}

pub struct Solver<'a, K: CellKernel + ?Sized> {
    kernel: &'a K,
    scheme: Scheme,
}

impl<'a, K: CellKernel + ?Sized> Solver<'a, K> {
    pub fn new(kernel: &'a K, scheme: Scheme) -> Self {
        Self { kernel, scheme }
    }

    pub fn solve(
        &self,
        mu: &PartitionMeasure,
        path: &DriverPath,
        checkpoints: &[usize],
    ) -> Result<SolutionPath, SolverError> {
        self.solve_observed(mu, path, checkpoints, &mut ())
    }

    pub fn solve_observed(
        &self,
        mu: &PartitionMeasure,
        path: &DriverPath,
        checkpoints: &[usize],
        observer: &mut dyn Observer,
    ) -> Result<SolutionPath, SolverError> {
        let kernel = self.kernel;
        let partition = kernel.partition();
        if mu.partition() != partition {
            return Err(SolverError::Mismatch("initial measure lives on a different partition".into()));
        }
        let d = kernel.driver_dim();
        if path.d() != d {
            return Err(SolverError::Mismatch(format!("driver has {} components, coefficient needs {d}", path.d())));
        }
        let cells = partition.len();
        let margin = kernel.jump_margin();
        let mut w = mu.weights().to_vec();
        let mut logf = vec![0.0; cells];
        let mut log_inc = vec![0.0; cells];
        let mut k = vec![0.0; cells * d];
        let mut left = vec![0.0; cells];
        let mut diag = Diagnostics { min_weight: mu.min_weight(), ..Diagnostics::default() };
        let mut out = Vec::new();
        let mut next_cp = 0;
        let record = |out: &mut Vec<Checkpoint>, next_cp: &mut usize, index: usize, w: &[f64], l: &[f64]| {
            while *next_cp < checkpoints.len() && checkpoints[*next_cp] < index {
                *next_cp += 1;
            }
            if *next_cp < checkpoints.len() && checkpoints[*next_cp] == index {
                out.push(Checkpoint { index, time: path.times()[index], weights: w.to_vec(), log_factors: l.to_vec() });
                *next_cp += 1;
            }
        };
        observer.start(&w);
        record(&mut out, &mut next_cp, 0, &w, &logf);

        for step in 0..path.steps() {
            diag.steps = step + 1;
            // continuous part, kernels at the left limit
            kernel.kernels(&w, &mut k);
            track_condition2(&w, &k, d, &mut diag);
            left.copy_from_slice(&w);
            let dy = path.continuous(step);
            let qv = path.qv(step);
            let lambda = match self.scheme.kind {
                SchemeKind::Linear => step_linear(&mut w, &k, dy, margin, self.scheme.jump_scaling, &mut log_inc),
                SchemeKind::Exponential => {
                    step_exponential(&mut w, &k, dy, qv, &mut log_inc);
                    1.0
                }
            };
            if lambda < 1.0 {
                diag.scaling_events += 1;
            }
            logf.iter_mut().zip(&log_inc).for_each(|(a, b)| *a += b);
            observer.sub_step(&SubStep {
                step,
                left: &left,
                increment: dy,
                qv,
                lambda,
                jump: false,
                kind: self.scheme.kind,
            });

            if let Some(jump) = path.jump(step) {
                kernel.kernels(&w, &mut k);
                track_condition2(&w, &k, d, &mut diag);
                left.copy_from_slice(&w);
                let lambda = step_linear(&mut w, &k, jump, margin, self.scheme.jump_scaling, &mut log_inc);
                if lambda < 1.0 {
                    diag.scaling_events += 1;
                }
                logf.iter_mut().zip(&log_inc).for_each(|(a, b)| *a += b);
                observer.sub_step(&SubStep {
                    step,
                    left: &left,
                    increment: jump,
                    qv,
                    lambda,
                    jump: true,
                    kind: SchemeKind::Linear,
                });
            }

            if w.iter().any(|v| !v.is_finite()) {
                return Err(SolverError::NonFinite { step });
            }
            let mass: f64 = w.iter().sum();
            diag.max_mass_error = diag.max_mass_error.max((mass - 1.0).abs());
            let min = w.iter().copied().fold(f64::INFINITY, f64::min);
            diag.min_weight = diag.min_weight.min(min);
            observer.step_end(step, &w);
            record(&mut out, &mut next_cp, step + 1, &w, &logf);
            if min < 0.0 {
                diag.invalid_at = Some(step);
                break;
            }
            if mass < MASS_FLOOR {
                return Err(SolverError::MassCollapse { step, mass });
            }
        }
        Ok(SolutionPath { partition: partition.clone(), mu: mu.weights().to_vec(), checkpoints: out, diagnostics: diag })
    }
}

fn track_condition2(w: &[f64], k: &[f64], d: usize, diag: &mut Diagnostics) {
    let mass: f64 = w.iter().sum();
    if mass < MASS_FLOOR {
        return;
    }
    for e in 0..d {
        let r: f64 = w.iter().zip(k.chunks_exact(d)).map(|(w, row)| w * row[e]).sum();
        diag.max_condition2_residual = diag.max_condition2_residual.max(r.abs());
    }
}

/// Follows `dC_t/dμ(x)` at fixed points by applying, at every sub-step, the
/// same update the solver applies to cells, with the kernel evaluated at `x`.
pub struct DensityTracker<'a, K: CellKernel + ?Sized> {
    kernel: &'a K,
    points: Vec<Vec<f64>>,
    checkpoints: Vec<usize>,
    next: usize,
    current: Vec<f64>,
    k: Vec<f64>,
    /// `(grid index, density per point)` at each checkpoint.
    pub recorded: Vec<(usize, Vec<f64>)>,
    /// Points whose factor became non-positive at a jump.
    pub flagged: Vec<usize>,
}

impl<'a, K: CellKernel + ?Sized> DensityTracker<'a, K> {
    pub fn new(kernel: &'a K, points: Vec<Vec<f64>>, checkpoints: Vec<usize>) -> Self {
        let n = points.len();
        Self {
            kernel,
            k: vec![0.0; n * kernel.driver_dim()],
            points,
            checkpoints,
            next: 0,
            current: vec![1.0; n],
            recorded: Vec::new(),
            flagged: Vec::new(),
        }
    }

    fn record(&mut self, index: usize) {
        while self.next < self.checkpoints.len() && self.checkpoints[self.next] < index {
            self.next += 1;
        }
        if self.next < self.checkpoints.len() && self.checkpoints[self.next] == index {
            self.recorded.push((index, self.current.clone()));
            self.next += 1;
        }
    }
}

impl<K: CellKernel + ?Sized> Observer for DensityTracker<'_, K> {
    fn start(&mut self, _weights: &[f64]) {
        self.record(0);
    }

    fn sub_step(&mut self, sub: &SubStep<'_>) {
        let d = self.kernel.driver_dim();
        self.kernel.point_kernels(sub.left, &self.points, &mut self.k);
        for (i, (row, dens)) in self.k.chunks_exact(d).zip(self.current.iter_mut()).enumerate() {
            let factor = match sub.kind {
                SchemeKind::Linear => 1.0 + sub.lambda * dot(row, sub.increment),
                SchemeKind::Exponential => {
                    let z = dot(row, sub.increment) - 0.5 * row.iter().zip(sub.qv).map(|(k, q)| k * k * q).sum::<f64>();
                    z.exp()
                }
            };
            if factor <= 0.0 && !self.flagged.contains(&i) {
                self.flagged.push(i);
            }
            *dens *= factor;
        }
    }

    fn step_end(&mut self, step: usize, _weights: &[f64]) {
        self.record(step + 1);
    }
}

/// Densities `dC_t/dμ` at `points` for each checkpoint, alongside the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPath {
    pub solution: SolutionPath,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub flagged: Vec<usize>,
}

pub fn density_at<K: CellKernel + ?Sized>(
    kernel: &K,
    mu: &PartitionMeasure,
    points: Vec<Vec<f64>>,
    path: &DriverPath,
    scheme: Scheme,
    checkpoints: &[usize],
) -> Result<DensityPath, SolverError> {
    let mut tracker = DensityTracker::new(kernel, points, checkpoints.to_vec());
    let solution = Solver::new(kernel, scheme).solve_observed(mu, path, checkpoints, &mut tracker)?;
    let times = tracker.recorded.iter().map(|(i, _)| path.times()[*i]).collect();
    let values = tracker.recorded.into_iter().map(|(_, v)| v).collect();
    Ok(DensityPath { solution, times, values, flagged: tracker.flagged })
}

/// Coarse and fine solutions on one path and how far the aggregated fine
/// weights stray from the coarse ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedComparison {
    pub coarse: SolutionPath,
    pub fine: SolutionPath,
    pub max_discrepancy: f64,
    /// First grid index where the discrepancy exceeds `1e-10`.
    pub first_divergent: Option<usize>,
}

pub const REFINE_TOLERANCE: f64 = 1e-10;

/// Solves on the coarse and the fine partition with the same path and compares
/// `aggregate(fine)` with the coarse state at every grid time.
pub fn solve_refined(
    coefficient: &CoefficientSum,
    coarse_level: u32,
    fine: &InitialLaw,
    path: &DriverPath,
    scheme: Scheme,
    checkpoints: &[usize],
) -> Result<RefinedComparison, SolverError> {
    let fine_p = fine.partition();
    let coarse_p = Partition::with_max_level(fine_p.space(), coarse_level, fine_p.max_level())?;
    if coarse_level > fine_p.level() {
        return Err(MeasureError::NotNested { fine: fine_p.level(), coarse: coarse_level }.into());
    }
    if !coefficient.is_measurable(&coarse_p) {
        return Err(SolverError::NotMeasurable { level: coarse_level });
    }
    let coarse_mu = fine.measure().aggregate(&coarse_p)?;
    let steps = path.steps() + 1;
    let coarse_k = coefficient.prepare(&coarse_p)?;
    let fine_k = coefficient.prepare(fine_p)?;
    let mut rc = TrajectoryRecorder::new(steps);
    let mut rf = TrajectoryRecorder::new(steps);
    let coarse = Solver::new(&coarse_k, scheme).solve_observed(&coarse_mu, path, checkpoints, &mut rc)?;
    let fine_sol = Solver::new(&fine_k, scheme).solve_observed(fine.measure(), path, checkpoints, &mut rf)?;
    let mut max_discrepancy = 0.0f64;
    let mut first_divergent = None;
    for (i, (c, f)) in rc.states.iter().zip(&rf.states).enumerate() {
        let agg = PartitionMeasure::new(fine_p.clone(), f.clone())?.aggregate(&coarse_p)?;
        let gap = agg.weights().iter().zip(c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > REFINE_TOLERANCE && first_divergent.is_none() {
            first_divergent = Some(i);
        }
        max_discrepancy = max_discrepancy.max(gap);
    }
    Ok(RefinedComparison { coarse, fine: fine_sol, max_discrepancy, first_divergent })
}
