use serde::{Deserialize, Serialize};

use super::{
    compare, for_each_path, ineq1_factor, ineq1_terms, sample_grid, sup_distance, Arm, Ensemble, SeminormEstimate,
    Summary, TestFamily, VerificationError, Window,
};
use crate::catalog::CellMap;
use crate::coefficient::{CoefficientSpec, CoefficientSum};
use crate::driver::DriverConfig;
use crate::measure::InitialLaw;
use crate::solver::{checkpoint_indices, Scheme, Solver};

fn snap_level(v: CellMap, level: u32) -> CellMap {
    match v {
        CellMap::Identity => CellMap::CellSnap { level },
        CellMap::CellSnap { level: l } => CellMap::CellSnap { level: l.min(level) },
    }
}

/// The target with `v` replaced by snapping to `level` (or its own coarser snap).
pub fn approximant(target: &CoefficientSpec, level: u32) -> CoefficientSpec {
    CoefficientSpec { v: snap_level(target.v, level), ..target.clone() }
}

/// `Σ_e ‖ǧ_e∘v − ǧ_e∘v_n‖∞` on the sample grid, `v_n` snapping to `level`.
pub fn approximation_error(target: &CoefficientSpec, level: u32, points: &[Vec<f64>]) -> f64 {
    let approx = approximant(target, level);
    (0..target.d).map(|e| sup_distance(points, |x| target.gcheck_at(e, x), |x| approx.gcheck_at(e, x))).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// Nominal levels `n` and `n + 1`.
    pub n: u32,
    /// Snap levels actually used for the two approximants.
    pub snap: (u32, u32),
    pub approximation_error: f64,
    pub seminorm: SeminormEstimate,
    pub factor: f64,
    /// Bound implied by the first inequality: `rhs / factor`.
    pub bound: f64,
    pub within_bound: bool,
}

/// Paired test of `s_{n+1} ≤ ratio · s_n` on the family member attaining `s_{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTest {
    pub from: u32,
    pub to: u32,
    pub ratio: f64,
    pub threshold: f64,
    pub paired_mean: f64,
    pub paired_se: f64,
    /// `s_{n+1} − s_n` is not positive beyond 3 standard errors.
    pub decreasing: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub ratios: Vec<RatioTest>,
}

impl ConvergenceTable {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.within_bound) && self.ratios.iter().all(|r| r.pass && r.decreasing)
    }
}

pub const CONVERGENCE_RATIO: f64 = 0.75;

fn paired(a: &[f64], b: &[f64], c: f64) -> Summary {
    Summary::of(&a.iter().zip(b).map(|(x, y)| x - c * y).collect::<Vec<_>>())
}

/// Solves the dyadic approximants `v_n` for `n = n0..=n1` on the law's
/// partition with common paths and reports consecutive seminorms.
///
/// For each `n` the snap level is the smallest `m ≥ n` with approximation
/// error at most `2⁻ⁿ`; `h` must already be measurable on the partition.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    target: &CoefficientSpec,
    n0: u32,
    n1: u32,
    law: &InitialLaw,
    scheme: Scheme,
    driver: &DriverConfig,
    n_paths: usize,
    a: f64,
    a_prime: f64,
    family: &TestFamily,
    grid_per_axis: usize,
) -> Result<ConvergenceTable, VerificationError> {
    if n1 <= n0 {
        return Err(VerificationError::Invalid("need at least two levels".into()));
    }
    let partition = law.partition();
    if !target.h.iter().all(|h| h.is_measurable(partition)) {
        return Err(VerificationError::Invalid("h must be measurable on the solution partition".into()));
    }
    let points = sample_grid(target.space(), grid_per_axis);
    let mut levels = Vec::new();
    for n in n0..=n1 {
        let m = (n..=partition.level())
            .find(|&m| approximation_error(target, m, &points) <= 0.5f64.powi(n as i32))
            .ok_or_else(|| {
                VerificationError::Invalid(format!("no snap level up to {} reaches 2^-{n}", partition.level()))
            })?;
        levels.push((n, m));
    }
    let specs: Vec<CoefficientSpec> = levels.iter().map(|&(_, m)| approximant(target, m)).collect();
    let arms = specs
        .iter()
        .zip(&levels)
        .map(|(s, (n, _))| Arm::new(format!("n={n}"), CoefficientSum::single(s.clone()), law.clone(), scheme, 1, family))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Arm> = arms.iter().collect();
    let pairs: Vec<(usize, usize)> = (0..arms.len() - 1).map(|i| (i, i + 1)).collect();
    let ensemble = Ensemble { driver: driver.clone(), n_paths, window: Window::FirstSegment { a } };
    let estimates = compare(&refs, &pairs, &ensemble)?;

    let (d, k) = (target.d, target.k_h());
    let factor = ineq1_factor(d, k, target.eps_prime, target.eps_dblprime, a, a_prime);
    let mut rows = Vec::new();
    for (i, s) in estimates.into_iter().enumerate() {
        let terms = ineq1_terms(target, &specs[i], &specs[i + 1], a, a_prime, &points)?;
        let rhs: f64 = terms.iter().map(|t| t.value).sum();
        let within_bound = factor > 0.0 && factor * s.value <= rhs + 3.0 * factor * s.se;
        rows.push(ConvergenceRow {
            n: levels[i].0,
            snap: (levels[i].1, levels[i + 1].1),
            approximation_error: approximation_error(target, levels[i].1, &points),
            factor,
            bound: if factor > 0.0 { rhs / factor } else { f64::INFINITY },
            within_bound,
            seminorm: s,
        });
    }
    let ratios = rows
        .windows(2)
        .map(|w| {
            let (prev, next) = (&w[0].seminorm, &w[1].seminorm);
            let j = next.argmax;
            let (sn, sp) = (next.samples(j), prev.samples(j));
            let t = paired(&sn, &sp, CONVERGENCE_RATIO);
            let diff = paired(&sn, &sp, 1.0);
            RatioTest {
                from: w[0].n,
                to: w[1].n,
                ratio: if prev.value > 0.0 { next.value / prev.value } else { f64::NAN },
                threshold: CONVERGENCE_RATIO,
                paired_mean: t.mean,
                paired_se: t.se,
                decreasing: diff.mean <= 3.0 * diff.se,
                pass: t.mean <= 3.0 * t.se,
            }
        })
        .collect();
    Ok(ConvergenceTable { rows, ratios })
}

/// Seminorms between three discretisations of one problem, `coarse` vs
/// `middle` and `middle` vs `fine`, and the observed order `log₂` of their ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub label: String,
    pub coarse: SeminormEstimate,
    pub fine: SeminormEstimate,
    pub ratio: f64,
    pub order: f64,
    /// Seminorm of a discretisation against itself.
    pub identical: f64,
}

impl UniquenessReport {
    fn new(label: String, coarse: SeminormEstimate, fine: SeminormEstimate, identical: f64) -> Self {
        let ratio = coarse.value / fine.value;
        Self { label, ratio, order: ratio.log2(), coarse, fine, identical }
    }
}

/// Step sizes `4·dt`, `2·dt` and `dt` where `dt` is the driver's own step:
/// seminorm `(4dt, 2dt)` over seminorm `(2dt, dt)`.
pub fn uniqueness_probe(
    coefficient: &CoefficientSum,
    law: &InitialLaw,
    scheme: Scheme,
    driver: &DriverConfig,
    n_paths: usize,
    window: Window,
    family: &TestFamily,
) -> Result<UniquenessReport, VerificationError> {
    if driver.steps % 4 != 0 {
        return Err(VerificationError::Invalid("step count must be divisible by 4".into()));
    }
    let arm = |c| Arm::new(format!("dt/{}", 4 / c), coefficient.clone(), law.clone(), scheme, c, family);
    let (a4, a2, a1) = (arm(4)?, arm(2)?, arm(1)?);
    let ensemble = Ensemble { driver: driver.clone(), n_paths, window };
    let mut est = compare(&[&a4, &a2, &a1, &a1], &[(0, 1), (1, 2), (2, 3)], &ensemble)?;
    let identical = est.pop().map(|s| s.value).unwrap_or_default();
    let fine = est.pop().expect("two estimates");
    let coarse = est.pop().expect("two estimates");
    Ok(UniquenessReport::new(format!("{:?} step halving", scheme.kind), coarse, fine, identical))
}

/// Linear against exponential scheme at `2·dt` and at `dt`.
pub fn scheme_gap(
    coefficient: &CoefficientSum,
    law: &InitialLaw,
    driver: &DriverConfig,
    n_paths: usize,
    window: Window,
    family: &TestFamily,
) -> Result<UniquenessReport, VerificationError> {
    if driver.steps % 2 != 0 {
        return Err(VerificationError::Invalid("step count must be even".into()));
    }
    let arm = |s: Scheme, c| Arm::new(format!("{:?}/{c}", s.kind), coefficient.clone(), law.clone(), s, c, family);
    let (l2, e2) = (arm(Scheme::linear(), 2)?, arm(Scheme::exponential(), 2)?);
    let (l1, e1) = (arm(Scheme::linear(), 1)?, arm(Scheme::exponential(), 1)?);
    let ensemble = Ensemble { driver: driver.clone(), n_paths, window };
    let mut est = compare(&[&l2, &e2, &l1, &e1], &[(0, 1), (2, 3), (2, 2)], &ensemble)?;
    let identical = est.pop().map(|s| s.value).unwrap_or_default();
    let fine = est.pop().expect("two estimates");
    let coarse = est.pop().expect("two estimates");
    Ok(UniquenessReport::new("linear vs exponential".into(), coarse, fine, identical))
}

/// `(mean C_t[f] − μ[f]) / SE` for one family member and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub function: String,
    pub time: f64,
    pub mean: f64,
    pub se: f64,
    pub mu_value: f64,
    /// `None` when the pairing is deterministic and disagrees with `μ[f]`.
    pub z: Option<f64>,
    /// The pairing did not vary across paths.
    pub exact: bool,
}

impl ZScore {
    pub const THRESHOLD: f64 = 4.0;

    pub fn pass(&self) -> bool {
        match self.z {
            Some(z) => z.abs() <= Self::THRESHOLD,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreTable {
    pub n_paths: usize,
    pub entries: Vec<ZScore>,
    pub max_abs_z: f64,
}

impl ZScoreTable {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(ZScore::pass)
    }
}

const EXACT_TOL: f64 = 1e-12;

/// Martingale check of `t ↦ C_t[f_j]` at the given times.
pub fn martingale_zscores(
    arm: &Arm,
    driver: &DriverConfig,
    n_paths: usize,
    times: &[f64],
) -> Result<ZScoreTable, VerificationError> {
    if n_paths < 100 {
        return Err(VerificationError::Invalid("martingale z-scores need at least 100 paths".into()));
    }
    let d = arm.coefficient.d();
    let per_path = for_each_path(n_paths, |i| {
        let path = driver.sample(d, i)?.coarsen(arm.coarsen)?;
        let cps = checkpoint_indices(&path, times, None);
        let sol = Solver::new(&arm.kernel, arm.scheme).solve(arm.law.measure(), &path, &cps)?;
        if let Some(step) = sol.diagnostics.invalid_at {
            return Err(VerificationError::Invalid(format!("negative weight at step {step} on path {i}")));
        }
        times
            .iter()
            .map(|&t| {
                sol.at_time(t)
                    .map(|c| arm.family.values(&c.weights))
                    .ok_or_else(|| VerificationError::Mismatch(format!("no checkpoint at {t}")))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut entries = Vec::new();
    for (j, name) in arm.family.names.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            let samples: Vec<f64> = per_path.iter().map(|row| row[ti][j]).collect();
            let s = Summary::of(&samples);
            let mu = arm.family.mu_values[j];
            let scale = 1.0 + mu.abs();
            let exact = s.se <= EXACT_TOL * scale;
            let z = if exact {
                ((s.mean - mu).abs() <= EXACT_TOL * scale).then_some(0.0)
            } else {
                Some((s.mean - mu) / s.se)
            };
            entries.push(ZScore { function: name.clone(), time: t, mean: s.mean, se: s.se, mu_value: mu, z, exact });
        }
    }
    let max_abs_z = entries.iter().filter_map(|e| e.z).fold(0.0, |m: f64, z| m.max(z.abs()));
    Ok(ZScoreTable { n_paths, entries, max_abs_z })
}
