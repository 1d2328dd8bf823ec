//! The structured coefficient
//! `k_e(c, x) = g_e(c[h], x) − c[g_e(c[h], ·)] / (⅓ ∨ c(X))` with separated
//! `g_e(y, x) = χ(y₁) ḡ_e(y) ǧ_e(v(x))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, CellMap, Cutoff, XFunction, YFunction};
use crate::measure::{MeasureError, Partition, PartitionMeasure, Space, TestFunction};

/// Threshold below which the mean-subtraction denominator is frozen.
pub const MASS_FLOOR: f64 = 1.0 / 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("invalid coefficient: {0}")]
    Invalid(String),
    #[error("{what}: expected {expected} entries, found {found}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("declared {constant} = {declared} exceeded: sampled {found} at {sample}")]
    ConstantExceeded { constant: &'static str, declared: f64, found: f64, sample: String },
    #[error("cannot sum coefficients: {0}")]
    Mismatch(String),
}

fn default_dim() -> usize {
    1
}

fn default_side() -> f64 {
    1.0
}

fn default_margin() -> f64 {
    0.1
}

/// Serializable description of a separated coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_side")]
    pub side: f64,
    pub d: usize,
    /// Test vector; `h[0]` must be the constant one.
    pub h: Vec<TestFunction>,
    pub gbar: Vec<YFunction>,
    pub gcheck: Vec<XFunction>,
    #[serde(default)]
    pub v: CellMap,
    #[serde(default)]
    pub cutoff: Cutoff,
    pub eps_prime: f64,
    pub eps_dblprime: f64,
    #[serde(default = "default_margin")]
    pub jump_margin: f64,
}

/// Where to evaluate a kernel.
#[derive(Debug, Clone, Copy)]
pub enum Location<'a> {
    Cell(usize),
    Point(&'a [f64]),
}

impl CoefficientSpec {
    /// One-dimensional spec with `h = (1)`, constant `ḡ ≡ gamma` and the given `ǧ`.
    pub fn constant_amplitude(gamma: f64, gcheck: XFunction, eps_dblprime: f64) -> Self {
        Self {
            dim: gcheck_dim(&gcheck),
            side: 1.0,
            d: 1,
            h: vec![TestFunction::one()],
            gbar: vec![YFunction::constant(gamma)],
            gcheck: vec![gcheck],
            v: CellMap::Identity,
            cutoff: Cutoff::default(),
            eps_prime: 0.0,
            eps_dblprime,
            jump_margin: default_margin(),
        }
    }

    pub fn space(&self) -> Space {
        Space { dim: self.dim, side: self.side }
    }

    pub fn k_h(&self) -> usize {
        self.h.len()
    }

    pub fn validate(&self) -> Result<(), CoefficientError> {
        let space = Space::new(self.dim, self.side)?;
        if self.d == 0 {
            return Err(CoefficientError::Invalid("driver dimension must be positive".into()));
        }
        if self.h.is_empty() || !self.h[0].is_one() {
            return Err(CoefficientError::Invalid("h[0] must be the constant 1".into()));
        }
        for f in &self.h {
            f.validate(space)?;
        }
        if self.gbar.len() != self.d {
            return Err(CoefficientError::Length { what: "gbar", expected: self.d, found: self.gbar.len() });
        }
        if self.gcheck.len() != self.d {
            return Err(CoefficientError::Length { what: "gcheck", expected: self.d, found: self.gcheck.len() });
        }
        for g in &self.gbar {
            g.validate(self.k_h())?;
        }
        for g in &self.gcheck {
            g.validate(self.dim)?;
        }
        self.cutoff.validate()?;
        if !(self.eps_prime >= 0.0 && self.eps_prime.is_finite()) {
            return Err(CoefficientError::Invalid(format!("eps_prime must be >= 0, got {}", self.eps_prime)));
        }
        if !(self.eps_dblprime > 0.0 && self.eps_dblprime.is_finite()) {
            return Err(CoefficientError::Invalid(format!(
                "eps_dblprime must be > 0, got {}",
                self.eps_dblprime
            )));
        }
        if !(self.jump_margin > 0.0 && self.jump_margin < 1.0) {
            return Err(CoefficientError::Invalid(format!(
                "jump_margin must lie in (0, 1), got {}",
                self.jump_margin
            )));
        }
        Ok(())
    }

    /// Same spec with every `ḡ_e` negated.
    pub fn negated(&self) -> Self {
        Self { gbar: self.gbar.iter().map(YFunction::negated).collect(), ..self.clone() }
    }

    /// `ǧ_e(v(x))`.
    pub fn gcheck_at(&self, e: usize, x: &[f64]) -> f64 {
        let space = self.space();
        self.gcheck[e].eval(&self.v.apply(x, space), space)
    }

    /// `ǧ_e ∘ v` is constant on the cells of `partition`.
    pub fn gcheck_measurable(&self, partition: &Partition) -> bool {
        match self.v {
            CellMap::CellSnap { level } if level <= partition.level() => true,
            _ => self.gcheck.iter().all(|g| g.is_measurable(partition)),
        }
    }

    /// `h` and `ǧ ∘ v` are both constant on the cells of `partition`.
    pub fn is_measurable(&self, partition: &Partition) -> bool {
        self.h.iter().all(|f| f.is_measurable(partition)) && self.gcheck_measurable(partition)
    }

    /// `|k| ≤ 2 sup|χ ḡ| sup|ǧ|` for measures of any mass.
    pub fn analytic_sup_bound(&self) -> f64 {
        let space = self.space();
        (0..self.d)
            .map(|e| 2.0 * self.gbar[e].sup_bound() * self.gcheck[e].sup_bound(space))
            .fold(0.0, f64::max)
    }

    /// Lipschitz constant in `y` of `g` on the plateau of the cutoff, and over all `y`
    /// once the cutoff's own slope is included.
    pub fn analytic_lipschitz(&self) -> (f64, f64) {
        let space = self.space();
        let mut plateau = 0.0f64;
        let mut full = 0.0f64;
        for e in 0..self.d {
            let gc = self.gcheck[e].sup_bound(space);
            plateau = plateau.max(self.gbar[e].lipschitz() * gc);
            full = full.max((self.gbar[e].lipschitz() + self.cutoff.lipschitz() * self.gbar[e].sup_bound()) * gc);
        }
        (plateau, full)
    }

    /// `max_e sup|χ ḡ_e| · max_J sup|∂_J ǧ_e|` over all coordinate subsets `J`,
    /// or `None` if some `ǧ_e` has no bounded mixed partials.
    pub fn derivative_bound(&self) -> Option<f64> {
        let space = self.space();
        let mut best = 0.0f64;
        for e in 0..self.d {
            let mut m = 0.0f64;
            for mask in 0..(1u32 << self.dim) {
                m = m.max(self.gcheck[e].partial_bound(mask, space)?);
            }
            best = best.max(self.gbar[e].sup_bound() * m);
        }
        Some(best)
    }

    /// `ε″` used in the second inequality: the declared bound or the derivative
    /// bound, whichever is larger.
    pub fn effective_eps_dblprime(&self) -> f64 {
        self.eps_dblprime.max(self.derivative_bound().unwrap_or(0.0))
    }

    pub fn prepare(&self, partition: &Partition) -> Result<PreparedSpec, CoefficientError> {
        self.validate()?;
        if partition.space() != self.space() {
            return Err(CoefficientError::Measure(MeasureError::DimensionMismatch {
                expected: self.dim,
                found: partition.dim(),
            }));
        }
        let space = self.space();
        let cells = partition.len();
        let k_h = self.k_h();
        let mut h_table = Vec::with_capacity(cells * k_h);
        let mut gv_table = Vec::with_capacity(cells * self.d);
        for cell in 0..cells {
            let x = partition.lower_corner(cell);
            h_table.extend(self.h.iter().map(|f| f.eval(&x, space)));
            gv_table.extend((0..self.d).map(|e| self.gcheck_at(e, &x)));
        }
        Ok(PreparedSpec { spec: self.clone(), partition: partition.clone(), h_table, gv_table })
    }

    /// Direct evaluation of `k(c, ·)` from the definition, without tables.
    pub fn eval_k(&self, c: &PartitionMeasure, at: Location<'_>) -> Result<Vec<f64>, CoefficientError> {
        let p = c.partition();
        if p.space() != self.space() {
            return Err(CoefficientError::Measure(MeasureError::DimensionMismatch {
                expected: self.dim,
                found: p.dim(),
            }));
        }
        let y: Vec<f64> = self.h.iter().map(|f| c.pairing(f).map(|r| r.value)).collect::<Result<_, _>>()?;
        let x = match at {
            Location::Cell(cell) => {
                if cell >= p.len() {
                    return Err(MeasureError::CellOutOfRange { cell, cells: p.len() }.into());
                }
                p.lower_corner(cell)
            }
            Location::Point(x) => {
                if !self.space().contains(x) {
                    return Err(MeasureError::OutsideSpace(x.to_vec()).into());
                }
                x.to_vec()
            }
        };
        let chi = self.cutoff.eval(y[0]);
        let denom = MASS_FLOOR.max(c.mass());
        Ok((0..self.d)
            .map(|e| {
                let amp = chi * self.gbar[e].eval(&y);
                let g_at_x = amp * self.gcheck_at(e, &x);
                let c_g: f64 = (0..p.len())
                    .map(|b| c.weights()[b] * amp * self.gcheck_at(e, &p.lower_corner(b)))
                    .sum();
                g_at_x - c_g / denom
            })
            .collect())
    }

    /// `max_e |Σ_A k_e(A) c(A)|`.
    pub fn condition2_residual(&self, c: &PartitionMeasure) -> Result<f64, CoefficientError> {
        let prepared = self.prepare(c.partition())?;
        Ok(prepared.condition2_residual(c.weights()))
    }

    /// Randomized check of the declared `ε′` and `ε″`.
    ///
    /// `ε′` is compared with `|g(y, x) − g(y′, x)| / ‖y − y′‖₁` for `y₁, y′₁` on
    /// the plateau of the cutoff and the other coordinates in `[−1, 1]`; `ε″`
    /// with `|k(c, x)|` for random positive measures of mass in `(0, 2]` on a
    /// level-3 partition.
    pub fn estimate_constants(&self, n_samples: usize, seed: u64) -> Result<Constants, CoefficientError> {
        self.validate()?;
        if n_samples == 0 {
            return Err(CoefficientError::Invalid("need at least one sample".into()));
        }
        let space = self.space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k_h = self.k_h();
        let sample_y = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut y: Vec<f64> = (0..k_h).map(|_| rng.random_range(-1.0..=1.0)).collect();
            y[0] = rng.random_range(self.cutoff.c_lo..=self.cutoff.c_hi);
            y
        };
        let sample_x = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..self.dim).map(|_| rng.random_range(0.0..=self.side)).collect()
        };

        let mut eps_prime = 0.0f64;
        let mut worst_prime = String::new();
        for _ in 0..n_samples {
            let y = sample_y(&mut rng);
            let y2 = sample_y(&mut rng);
            let x = sample_x(&mut rng);
            let dist: f64 = y.iter().zip(&y2).map(|(a, b)| (a - b).abs()).sum();
            if dist == 0.0 {
                continue;
            }
            for e in 0..self.d {
                let gx = self.gcheck_at(e, &x);
                let g1 = self.cutoff.eval(y[0]) * self.gbar[e].eval(&y) * gx;
                let g2 = self.cutoff.eval(y2[0]) * self.gbar[e].eval(&y2) * gx;
                let ratio = (g1 - g2).abs() / dist;
                if ratio > eps_prime {
                    eps_prime = ratio;
                    worst_prime = format!("e={e}, y={y:?}, y'={y2:?}, x={x:?}");
                }
            }
        }

        let partition = Partition::new(space, 3)?;
        let prepared = self.prepare(&partition)?;
        let mut eps_dbl = 0.0f64;
        let mut worst_dbl = String::new();
        let mut out = vec![0.0; self.d];
        for _ in 0..n_samples {
            let mass = rng.random_range(1e-3..=2.0);
            let mut w: Vec<f64> = (0..partition.len()).map(|_| rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v *= mass / s);
            let x = sample_x(&mut rng);
            prepared.point_kernels(&w, std::slice::from_ref(&x), &mut out);
            for (e, &k) in out.iter().enumerate() {
                if k.abs() > eps_dbl {
                    eps_dbl = k.abs();
                    worst_dbl = format!("e={e}, mass={mass}, x={x:?}");
                }
            }
        }

        let tol = 1e-12;
        if eps_prime > self.eps_prime * (1.0 + tol) + tol {
            return Err(CoefficientError::ConstantExceeded {
                constant: "eps_prime",
                declared: self.eps_prime,
                found: eps_prime,
                sample: worst_prime,
            });
        }
        if eps_dbl > self.eps_dblprime * (1.0 + tol) + tol {
            return Err(CoefficientError::ConstantExceeded {
                constant: "eps_dblprime",
                declared: self.eps_dblprime,
                found: eps_dbl,
                sample: worst_dbl,
            });
        }
        let (lip_plateau, lip_full) = self.analytic_lipschitz();
        Ok(Constants {
            eps_prime_emp: eps_prime,
            eps_dblprime_emp: eps_dbl,
            eps_prime_analytic: lip_plateau,
            eps_prime_with_cutoff: lip_full,
            sup_bound_analytic: self.analytic_sup_bound(),
            derivative_bound: self.derivative_bound(),
        })
    }
}

fn gcheck_dim(g: &XFunction) -> usize {
    match g {
        XFunction::Box { hi, .. } => hi.len(),
        XFunction::Monomial { powers } => powers.len(),
        XFunction::Cosine { wavenumber, .. } => wavenumber.len(),
        XFunction::Bump { center, .. } => center.len(),
        _ => 1,
    }
}

/// Outcome of [`CoefficientSpec::estimate_constants`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub eps_prime_emp: f64,
    pub eps_dblprime_emp: f64,
    pub eps_prime_analytic: f64,
    /// Lipschitz bound including the slope of the cutoff.
    pub eps_prime_with_cutoff: f64,
    pub sup_bound_analytic: f64,
    pub derivative_bound: Option<f64>,
}

/// `kᵀ dY > −1`.
pub fn condition1_check(k: &[f64], dy: &[f64]) -> bool {
    dot(k, dy) > -1.0
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Anything that produces per-cell kernels from the current weights.
pub trait CellKernel: Sync {
    fn partition(&self) -> &Partition;
    fn driver_dim(&self) -> usize;
    fn jump_margin(&self) -> f64;
    /// Writes `k_e(A)` for every cell `A` into `out[A * d + e]`.
    fn kernels(&self, weights: &[f64], out: &mut [f64]);
    /// Writes `k_e(x_i)` for every point into `out[i * d + e]`.
    fn point_kernels(&self, weights: &[f64], points: &[Vec<f64>], out: &mut [f64]);

    fn condition2_residual(&self, weights: &[f64]) -> f64 {
        let d = self.driver_dim();
        let mut k = vec![0.0; weights.len() * d];
        self.kernels(weights, &mut k);
        (0..d)
            .map(|e| weights.iter().enumerate().map(|(a, w)| w * k[a * d + e]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// A spec with `h` and `ǧ ∘ v` tabulated on the cells of a partition.
#[derive(Debug, Clone)]
pub struct PreparedSpec {
    spec: CoefficientSpec,
    partition: Partition,
    h_table: Vec<f64>,
    gv_table: Vec<f64>,
}

struct Summary {
    amp: Vec<f64>,
    mean: Vec<f64>,
}

impl PreparedSpec {
    pub fn spec(&self) -> &CoefficientSpec {
        &self.spec
    }

    /// `c[h_i]` for each `i`.
    pub fn pairings(&self, weights: &[f64]) -> Vec<f64> {
        let k_h = self.spec.k_h();
        let mut y = vec![0.0; k_h];
        for (cell, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi += w * self.h_table[cell * k_h + i];
                }
            }
        }
        y
    }

    /// `χ(y₁) ḡ_e(y)` with `y = c[h]`, for each `e`.
    pub fn amplitudes(&self, weights: &[f64]) -> Vec<f64> {
        let y = self.pairings(weights);
        let chi = self.spec.cutoff.eval(y[0]);
        self.spec.gbar.iter().map(|g| chi * g.eval(&y)).collect()
    }

    fn summarize(&self, weights: &[f64]) -> Summary {
        let d = self.spec.d;
        let y = self.pairings(weights);
        let mass: f64 = weights.iter().sum();
        let chi = self.spec.cutoff.eval(y[0]);
        let denom = MASS_FLOOR.max(mass);
        let amp: Vec<f64> = self.spec.gbar.iter().map(|g| chi * g.eval(&y)).collect();
        let mut mean = vec![0.0; d];
        for (cell, w) in weights.iter().enumerate() {
            for (e, m) in mean.iter_mut().enumerate() {
                *m += w * self.gv_table[cell * d + e];
            }
        }
        mean.iter_mut().for_each(|m| *m /= denom);
        Summary { amp, mean }
    }
}

impl CellKernel for PreparedSpec {
    fn partition(&self) -> &Partition {
        &self.partition
    }

    fn driver_dim(&self) -> usize {
        self.spec.d
    }

    fn jump_margin(&self) -> f64 {
        self.spec.jump_margin
    }

    fn kernels(&self, weights: &[f64], out: &mut [f64]) {
        let d = self.spec.d;
        let s = self.summarize(weights);
        for (cell, row) in out.chunks_exact_mut(d).enumerate() {
            for e in 0..d {
                row[e] = s.amp[e] * (self.gv_table[cell * d + e] - s.mean[e]);
            }
        }
    }

    fn point_kernels(&self, weights: &[f64], points: &[Vec<f64>], out: &mut [f64]) {
        let d = self.spec.d;
        let s = self.summarize(weights);
        for (x, row) in points.iter().zip(out.chunks_exact_mut(d)) {
            for e in 0..d {
                row[e] = s.amp[e] * (self.spec.gcheck_at(e, x) - s.mean[e]);
            }
        }
    }
}

/// Finite sum of coefficients sharing `d`, `h` and the space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientSum {
    terms: Vec<CoefficientSpec>,
}

impl CoefficientSum {
    pub fn single(spec: CoefficientSpec) -> Self {
        Self { terms: vec![spec] }
    }

    pub fn terms(&self) -> &[CoefficientSpec] {
        &self.terms
    }

    pub fn first(&self) -> &CoefficientSpec {
        &self.terms[0]
    }

    pub fn d(&self) -> usize {
        self.terms[0].d
    }

    pub fn space(&self) -> Space {
        self.terms[0].space()
    }

    pub fn validate(&self) -> Result<(), CoefficientError> {
        let Some(first) = self.terms.first() else {
            return Err(CoefficientError::Mismatch("empty sum".into()));
        };
        for t in &self.terms {
            t.validate()?;
            if t.d != first.d {
                return Err(CoefficientError::Mismatch(format!("driver dimensions {} and {}", first.d, t.d)));
            }
            if t.h != first.h {
                return Err(CoefficientError::Mismatch("test vectors h differ".into()));
            }
            if t.space() != first.space() {
                return Err(CoefficientError::Mismatch("spaces differ".into()));
            }
        }
        Ok(())
    }

    /// Sum of the member `ε″`.
    pub fn eps_dblprime(&self) -> f64 {
        self.terms.iter().map(|t| t.eps_dblprime).sum()
    }

    /// Sum of the member `ε′`.
    pub fn eps_prime(&self) -> f64 {
        self.terms.iter().map(|t| t.eps_prime).sum()
    }

    pub fn effective_eps_dblprime(&self) -> f64 {
        self.terms.iter().map(|t| t.effective_eps_dblprime()).sum()
    }

    pub fn jump_margin(&self) -> f64 {
        self.terms.iter().map(|t| t.jump_margin).fold(f64::INFINITY, f64::min)
    }

    pub fn is_measurable(&self, partition: &Partition) -> bool {
        self.terms.iter().all(|t| t.is_measurable(partition))
    }

    pub fn prepare(&self, partition: &Partition) -> Result<PreparedSum, CoefficientError> {
        self.validate()?;
        let terms = self.terms.iter().map(|t| t.prepare(partition)).collect::<Result<Vec<_>, _>>()?;
        Ok(PreparedSum { terms, margin: self.jump_margin() })
    }

    pub fn eval_k(&self, c: &PartitionMeasure, at: Location<'_>) -> Result<Vec<f64>, CoefficientError> {
        self.validate()?;
        let mut total = vec![0.0; self.d()];
        for t in &self.terms {
            for (a, b) in total.iter_mut().zip(t.eval_k(c, at)?) {
                *a += b;
            }
        }
        Ok(total)
    }

    pub fn estimate_constants(&self, n_samples: usize, seed: u64) -> Result<Vec<Constants>, CoefficientError> {
        self.validate()?;
        self.terms
            .iter()
            .enumerate()
            .map(|(i, t)| t.estimate_constants(n_samples, seed.wrapping_add(i as u64)))
            .collect()
    }
}

/// Combines specs into a sum; all members must share `d`, `h` and the space.
pub fn sum_specs(specs: &[CoefficientSpec]) -> Result<CoefficientSum, CoefficientError> {
    let sum = CoefficientSum { terms: specs.to_vec() };
    sum.validate()?;
    Ok(sum)
}

impl From<CoefficientSpec> for CoefficientSum {
    fn from(spec: CoefficientSpec) -> Self {
        Self::single(spec)
    }
}

#[derive(Debug, Clone)]
pub struct PreparedSum {
    terms: Vec<PreparedSpec>,
    margin: f64,
}

impl PreparedSum {
    pub fn terms(&self) -> &[PreparedSpec] {
        &self.terms
    }
}

impl CellKernel for PreparedSum {
    fn partition(&self) -> &Partition {
        self.terms[0].partition()
    }

    fn driver_dim(&self) -> usize {
        self.terms[0].driver_dim()
    }

    fn jump_margin(&self) -> f64 {
        self.margin
    }

    fn kernels(&self, weights: &[f64], out: &mut [f64]) {
        self.terms[0].kernels(weights, out);
        if self.terms.len() > 1 {
            let mut buf = vec![0.0; out.len()];
            for t in &self.terms[1..] {
                t.kernels(weights, &mut buf);
                out.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
            }
        }
    }

    fn point_kernels(&self, weights: &[f64], points: &[Vec<f64>], out: &mut [f64]) {
        self.terms[0].point_kernels(weights, points, out);
        if self.terms.len() > 1 {
            let mut buf = vec![0.0; out.len()];
            for t in &self.terms[1..] {
                t.point_kernels(weights, points, &mut buf);
                out.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sign_spec(gamma: f64) -> CoefficientSpec {
        // ǧ = +1 on [0, ½), −1 on [½, 1]
        let g = XFunction::Step { axis: 0, threshold: 0.5, below: 1.0, above: -1.0 };
        CoefficientSpec::constant_amplitude(gamma, g, 2.0 * gamma.abs().max(1e-12))
    }

    fn two_cells(p: f64) -> PartitionMeasure {
        PartitionMeasure::new(Partition::new(Space::unit(1), 1).unwrap(), vec![p, 1.0 - p]).unwrap()
    }

    fn kernels_of(spec: &CoefficientSpec, c: &PartitionMeasure) -> Vec<f64> {
        let prepared = spec.prepare(c.partition()).unwrap();
        let mut k = vec![0.0; c.partition().len() * spec.d];
        prepared.kernels(c.weights(), &mut k);
        k
    }

    #[test]
    fn single_cell_kernel_vanishes() {
        let spec = sign_spec(0.3);
        let c = PartitionMeasure::uniform(Partition::trivial(Space::unit(1)).unwrap());
        assert_eq!(spec.eval_k(&c, Location::Cell(0)).unwrap(), vec![0.0]);
    }

    #[test]
    fn two_cell_hand_values() {
        let gamma = 0.1;
        let spec = sign_spec(gamma);
        let k = kernels_of(&spec, &two_cells(0.5));
        assert!((k[0] - gamma).abs() < 1e-15 && (k[1] + gamma).abs() < 1e-15);
        let c = two_cells(0.75);
        let k = kernels_of(&spec, &c);
        assert!((k[0] - 0.5 * gamma).abs() < 1e-15);
        assert!((k[1] + 1.5 * gamma).abs() < 1e-15);
        assert!(spec.condition2_residual(&c).unwrap() < 1e-15);
    }

    #[test]
    fn sub_third_mass_uses_floor() {
        let spec = sign_spec(0.1);
        let c = PartitionMeasure::new(Partition::new(Space::unit(1), 1).unwrap(), vec![0.2, 0.0]).unwrap();
        // χ(0.2) = 0.8, c[ǧ] = 0.2, denominator ⅓
        let k = spec.eval_k(&c, Location::Cell(0)).unwrap()[0];
        assert!((k - 0.8 * 0.1 * (1.0 - 0.6)).abs() < 1e-15);
        assert!(spec.condition2_residual(&c).unwrap() > 1e-3);
    }

    #[test]
    fn condition1_examples() {
        assert!(condition1_check(&[0.5], &[-1.0]));
        assert!(!condition1_check(&[0.6, 0.6], &[-1.0, -1.0]));
        assert!(condition1_check(&[0.0, 0.0], &[-1e9, 1e9]));
    }

    #[test]
    fn h_must_start_with_one() {
        let mut spec = sign_spec(0.1);
        spec.h = vec![TestFunction::monomial(vec![1])];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn unknown_catalog_name_fails_at_load() {
        let doc = r#"{"d":1,"h":[[]],"gbar":[{"name":"sigmoid","scale":1}],
                      "gcheck":[{"name":"constant","value":1}],"eps_prime":0,"eps_dblprime":1}"#;
        assert!(serde_json::from_str::<CoefficientSpec>(doc).is_err());
    }

    #[test]
    fn tanh_lipschitz_estimate() {
        let spec = CoefficientSpec {
            h: vec![TestFunction::one(), TestFunction::monomial(vec![1])],
            gbar: vec![YFunction::Tanh { scale: 0.1, index: 1, shift: 0.0 }],
            gcheck: vec![XFunction::Monomial { powers: vec![1] }],
            eps_prime: 0.1,
            eps_dblprime: 0.2,
            ..sign_spec(0.1)
        };
        let c = spec.estimate_constants(20_000, 7).unwrap();
        assert!(c.eps_prime_emp <= 0.1 && c.eps_prime_emp > 0.05);
        assert!(c.eps_dblprime_emp <= 0.2);
        let tight = CoefficientSpec { eps_prime: 0.01, ..spec };
        let err = tight.estimate_constants(2000, 7).unwrap_err();
        assert!(matches!(err, CoefficientError::ConstantExceeded { constant: "eps_prime", .. }));
    }

    #[test]
    fn constant_gbar_has_zero_lipschitz() {
        let c = sign_spec(0.1).estimate_constants(1000, 1).unwrap();
        assert_eq!(c.eps_prime_emp, 0.0);
    }

    #[test]
    fn sum_with_negation_is_zero() {
        let spec = sign_spec(0.2);
        let sum = sum_specs(&[spec.clone(), spec.negated()]).unwrap();
        let c = two_cells(0.3);
        let prepared = sum.prepare(c.partition()).unwrap();
        let mut k = vec![1.0; 2];
        prepared.kernels(c.weights(), &mut k);
        assert_eq!(k, vec![0.0, 0.0]);
    }

    #[test]
    fn sum_of_constant_amplitudes_adds() {
        let c = two_cells(0.6);
        let sum = sum_specs(&[sign_spec(0.05), sign_spec(0.07)]).unwrap();
        let mut k = vec![0.0; 2];
        sum.prepare(c.partition()).unwrap().kernels(c.weights(), &mut k);
        let single = kernels_of(&sign_spec(0.12), &c);
        for (a, b) in k.iter().zip(&single) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_rejects_mismatched_h() {
        let mut other = sign_spec(0.1);
        other.h.push(TestFunction::monomial(vec![1]));
        other.gbar = vec![YFunction::constant(0.1)];
        assert!(matches!(sum_specs(&[sign_spec(0.1), other]), Err(CoefficientError::Mismatch(_))));
    }

    fn random_measure(level: u32, raw: &[f64]) -> PartitionMeasure {
        let p = Partition::new(Space::unit(1), level).unwrap();
        let s: f64 = raw.iter().sum();
        PartitionMeasure::new(p, raw.iter().map(|v| v / s).collect()).unwrap()
    }

    fn rich_spec() -> CoefficientSpec {
        CoefficientSpec {
            dim: 1,
            side: 1.0,
            d: 2,
            h: vec![TestFunction::one(), TestFunction::monomial(vec![1])],
            gbar: vec![
                YFunction::Tanh { scale: 0.2, index: 1, shift: 0.3 },
                YFunction::AffineClamped { weights: vec![0.0, 0.3], offset: -0.1, lo: -0.2, hi: 0.2 },
            ],
            gcheck: vec![
                XFunction::Cosine { wavenumber: vec![1.0], phase: 0.2 },
                XFunction::Bump { center: vec![0.4], width: 0.2 },
            ],
            v: CellMap::Identity,
            cutoff: Cutoff::default(),
            eps_prime: 0.3,
            eps_dblprime: 0.4,
            jump_margin: 0.1,
        }
    }

    proptest! {
        #[test]
        fn condition2_holds_for_probabilities(raw in proptest::collection::vec(0.0f64..1.0, 16)
            .prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6)) {
            let c = random_measure(4, &raw);
            prop_assert!(rich_spec().condition2_residual(&c).unwrap() <= 1e-12);
        }

        #[test]
        fn tables_match_direct_evaluation(raw in proptest::collection::vec(0.0f64..1.0, 8)
            .prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6), x in 0.0f64..1.0) {
            let spec = rich_spec();
            let c = random_measure(3, &raw);
            let k = kernels_of(&spec, &c);
            for cell in 0..8 {
                let direct = spec.eval_k(&c, Location::Cell(cell)).unwrap();
                for e in 0..2 {
                    prop_assert!((k[cell * 2 + e] - direct[e]).abs() < 1e-14);
                }
            }
            let prepared = spec.prepare(c.partition()).unwrap();
            let mut out = vec![0.0; 2];
            prepared.point_kernels(c.weights(), &[vec![x]], &mut out);
            let direct = spec.eval_k(&c, Location::Point(&[x])).unwrap();
            prop_assert!((out[0] - direct[0]).abs() < 1e-14 && (out[1] - direct[1]).abs() < 1e-14);
        }

        #[test]
        fn kernel_bounded_by_declared_constant(raw in proptest::collection::vec(0.0f64..1.0, 8)
            .prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6), mass in 0.01f64..2.0, x in 0.0f64..1.0) {
            let spec = rich_spec();
            let p = Partition::new(Space::unit(1), 3).unwrap();
            let s: f64 = raw.iter().sum();
            let c = PartitionMeasure::new(p, raw.iter().map(|v| v * mass / s).collect()).unwrap();
            for v in spec.eval_k(&c, Location::Point(&[x])).unwrap() {
                prop_assert!(v.abs() <= spec.eps_dblprime);
            }
        }

        #[test]
        fn kernel_invariant_under_aggregate_then_lift(raw in proptest::collection::vec(0.0f64..1.0, 8)
            .prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6)) {
            let mut spec = rich_spec();
            spec.h = vec![TestFunction::one(), TestFunction::lower_box(vec![0.5])];
            spec.v = CellMap::CellSnap { level: 1 };
            let fine = random_measure(3, &raw);
            let coarse = Partition::new(Space::unit(1), 1).unwrap();
            let embedded = fine.aggregate(&coarse).unwrap().lift(fine.partition()).unwrap();
            let a = kernels_of(&spec, &fine);
            let b = kernels_of(&spec, &embedded);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }
    }
}
