use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{for_each_path, sup_differences, Arm, Ensemble, SeminormEstimate, Summary, TestFamily, VerificationError, Window};
use crate::coefficient::{CoefficientSpec, CoefficientSum, PreparedSum};
use crate::driver::DriverConfig;
use crate::measure::{InitialLaw, Space};
use crate::solver::Scheme;

/// Points `i·w` and `(i+1)·w − tiny` along each axis, so suprema of functions
/// with jumps at dyadic points are approached from both sides.
pub fn sample_grid(space: Space, per_axis: usize) -> Vec<Vec<f64>> {
    let w = space.side / per_axis as f64;
    let axis: Vec<f64> = (0..per_axis).flat_map(|i| [i as f64 * w, (i + 1) as f64 * w * (1.0 - 1e-12)]).collect();
    let mut points = vec![Vec::new()];
    for _ in 0..space.dim {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

/// `max |f − g|` over a [`sample_grid`].
pub fn sup_distance(points: &[Vec<f64>], f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64) -> f64 {
    points.iter().map(|x| (f(x) - g(x)).abs()).fold(0.0, f64::max)
}

/// `1 − d a′ a (2 k ε′ + 3 ε″)`.
pub fn ineq1_factor(d: usize, k: usize, eps_prime: f64, eps_dblprime: f64, a: f64, a_prime: f64) -> f64 {
    1.0 - d as f64 * a_prime * a * (2.0 * k as f64 * eps_prime + 3.0 * eps_dblprime)
}

/// `1 − d a′ a (2 ε″ (T + 1)^ℓ + ε″)`.
pub fn ineq2_factor(d: usize, eps_dblprime: f64, side: f64, dim: usize, a: f64, a_prime: f64) -> f64 {
    1.0 - d as f64 * a_prime * a * (2.0 * eps_dblprime * (side + 1.0).powi(dim as i32) + eps_dblprime)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
}

/// Right-hand side terms of the first inequality for `(h, v)`, `(h′, v′)`, `(h″, v″)`.
pub fn ineq1_terms(
    target: &CoefficientSpec,
    prime: &CoefficientSpec,
    second: &CoefficientSpec,
    a: f64,
    a_prime: f64,
    points: &[Vec<f64>],
) -> Result<Vec<Term>, VerificationError> {
    let d = prime.d;
    if [target.d, second.d] != [d, d] || [target.k_h(), second.k_h()] != [prime.k_h(), prime.k_h()] {
        return Err(VerificationError::Mismatch("specs need the same d and number of test functions".into()));
    }
    let space = prime.space();
    let eps1 = prime.eps_prime.max(second.eps_prime);
    let eps2 = prime.eps_dblprime.max(second.eps_dblprime);
    let h_dist = |u: &CoefficientSpec, w: &CoefficientSpec| -> f64 {
        (0..u.k_h()).map(|i| sup_distance(points, |x| u.h[i].eval(x, space), |x| w.h[i].eval(x, space))).sum()
    };
    let g_dist = |u: &CoefficientSpec, w: &CoefficientSpec| -> f64 {
        (0..d).map(|e| sup_distance(points, |x| u.gcheck_at(e, x), |x| w.gcheck_at(e, x))).sum()
    };
    let aa = a * a_prime;
    let df = d as f64;
    Ok(vec![
        Term { name: "4 d a' a eps' sum|h - h'|".into(), value: 4.0 * df * aa * eps1 * h_dist(target, prime) },
        Term { name: "2 d a' a eps' sum|h' - h''|".into(), value: 2.0 * df * aa * eps1 * h_dist(prime, second) },
        Term { name: "2 a' a eps'' sum|g'v' - gv|".into(), value: 2.0 * aa * eps2 * g_dist(prime, target) },
        Term { name: "2 a' a eps'' sum|g'v' - g''v''|".into(), value: 2.0 * aa * eps2 * g_dist(prime, second) },
    ])
}

/// Outcome of one inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub factor: f64,
    pub seminorm: f64,
    pub seminorm_se: f64,
    pub inputs: BTreeMap<String, f64>,
    pub terms: Vec<Term>,
    /// Factor is positive, so the inequality says something.
    pub applicable: bool,
    /// Factor exceeds one half, as the existence argument needs.
    pub contraction: bool,
    /// Smallest `a′` for which the inequality still holds at the estimated seminorm.
    pub critical_a_prime: Option<f64>,
    pub pass: bool,
}

impl InequalityReport {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: &str,
        s: &SeminormEstimate,
        factor: f64,
        slope: f64,
        terms: Vec<Term>,
        rhs: f64,
        a: f64,
        a_prime: f64,
        mut inputs: BTreeMap<String, f64>,
    ) -> Self {
        let lhs = factor * s.value;
        let lhs_se = factor.abs() * s.se;
        let applicable = factor > 0.0;
        // lhs(a′) = (1 − a′ a slope) S and rhs(a′) = a′ a R₀
        let r0 = rhs / (a * a_prime);
        let denom = a * (slope * s.value + r0);
        let critical_a_prime = (denom > 0.0).then(|| s.value / denom);
        inputs.insert("a".into(), a);
        inputs.insert("a_prime".into(), a_prime);
        Self {
            name: name.into(),
            lhs,
            lhs_se,
            rhs,
            factor,
            seminorm: s.value,
            seminorm_se: s.se,
            inputs,
            terms,
            applicable,
            contraction: factor > 0.5,
            critical_a_prime,
            pass: !applicable || lhs <= rhs + 3.0 * lhs_se,
        }
    }
}

/// Compares solutions for `(h′, v′)` and `(h″, v″)` on common paths up to the
/// first segment breakpoint for activity `a`, against the bound built from
/// the sup-norm distances to `(h, v)`.
#[allow(clippy::too_many_arguments)]
pub fn check_ineq1(
    target: &CoefficientSpec,
    prime: &CoefficientSpec,
    second: &CoefficientSpec,
    law: &InitialLaw,
    scheme: Scheme,
    driver: &DriverConfig,
    n_paths: usize,
    a: f64,
    a_prime: f64,
    family: &TestFamily,
    grid_per_axis: usize,
) -> Result<InequalityReport, VerificationError> {
    let points = sample_grid(prime.space(), grid_per_axis);
    let terms = ineq1_terms(target, prime, second, a, a_prime, &points)?;
    let rhs = terms.iter().map(|t| t.value).sum();
    let arm1 = Arm::new("prime", prime.clone().into(), law.clone(), scheme, 1, family)?;
    let arm2 = Arm::new("second", second.clone().into(), law.clone(), scheme, 1, family)?;
    let ensemble = Ensemble { driver: driver.clone(), n_paths, window: Window::FirstSegment { a } };
    let s = super::estimate_seminorm(&arm1, &arm2, &ensemble)?;
    let (d, k) = (prime.d, prime.k_h());
    let eps1 = prime.eps_prime.max(second.eps_prime);
    let eps2 = prime.eps_dblprime.max(second.eps_dblprime);
    let factor = ineq1_factor(d, k, eps1, eps2, a, a_prime);
    let slope = d as f64 * (2.0 * k as f64 * eps1 + 3.0 * eps2);
    let inputs = BTreeMap::from([
        ("d".to_string(), d as f64),
        ("k".to_string(), k as f64),
        ("eps_prime".to_string(), eps1),
        ("eps_dblprime".to_string(), eps2),
        ("T".to_string(), prime.side),
        ("n_paths".to_string(), n_paths as f64),
    ]);
    Ok(InequalityReport::assemble("ineq1", &s, factor, slope, terms, rhs, a, a_prime, inputs))
}

/// `sup_x |g′_e(x) − g″_e(x)|` summed over `e`, at one pair of states.
fn g_gap(
    d: usize,
    (k1, tab1, w1): (&PreparedSum, &[Vec<Vec<f64>>], &[f64]),
    (k2, tab2, w2): (&PreparedSum, &[Vec<Vec<f64>>], &[f64]),
    n_points: usize,
) -> f64 {
    let amps = |k: &PreparedSum, w: &[f64]| -> Vec<Vec<f64>> {
        k.terms().iter().map(|t| t.amplitudes(w)).collect()
    };
    let (a1, a2) = (amps(k1, w1), amps(k2, w2));
    (0..d)
        .map(|e| {
            (0..n_points)
                .map(|p| {
                    let g1: f64 = a1.iter().zip(tab1).map(|(a, t)| a[e] * t[e][p]).sum();
                    let g2: f64 = a2.iter().zip(tab2).map(|(a, t)| a[e] * t[e][p]).sum();
                    (g1 - g2).abs()
                })
                .fold(0.0, f64::max)
        })
        .sum()
}

fn gcheck_tables(c: &CoefficientSum, points: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    c.terms()
        .iter()
        .map(|t| (0..t.d).map(|e| points.iter().map(|x| t.gcheck_at(e, x)).collect()).collect())
        .collect()
}

/// Second inequality: the seminorm between the solutions for two differentiable
/// coefficients against `2 Σ_e a′ a E[sup_{u<R} ‖g′_{e,u} − g″_{e,u}‖∞]`.
#[allow(clippy::too_many_arguments)]
pub fn check_ineq2(
    prime: &CoefficientSpec,
    second: &CoefficientSpec,
    law: &InitialLaw,
    scheme: Scheme,
    driver: &DriverConfig,
    n_paths: usize,
    a: f64,
    a_prime: f64,
    family: &TestFamily,
    grid_per_axis: usize,
) -> Result<InequalityReport, VerificationError> {
    if prime.d != second.d || prime.space() != second.space() {
        return Err(VerificationError::Mismatch("specs need the same d and space".into()));
    }
    let space = prime.space();
    let points = sample_grid(space, grid_per_axis);
    let (c1, c2): (CoefficientSum, CoefficientSum) = (prime.clone().into(), second.clone().into());
    let arm1 = Arm::new("prime", c1.clone(), law.clone(), scheme, 1, family)?;
    let arm2 = Arm::new("second", c2.clone(), law.clone(), scheme, 1, family)?;
    let (tab1, tab2) = (gcheck_tables(&c1, &points), gcheck_tables(&c2, &points));
    let window = Window::FirstSegment { a };
    let per_path = for_each_path(n_paths, |i| {
        let fine = driver.sample(prime.d, i)?;
        let until = window.end(&fine)?;
        let r1 = arm1.run(&fine, until)?;
        let r2 = arm2.run(&fine, until)?;
        let sup = sup_differences(&r1, &arm1.family, &r2, &arm2.family)?;
        let mut gap = 0.0f64;
        for (w1, w2) in r1.weights.iter().zip(&r2.weights) {
            gap = gap.max(g_gap(prime.d, (&arm1.kernel, &tab1, w1), (&arm2.kernel, &tab2, w2), points.len()));
        }
        Ok((sup, gap))
    })?;
    let gaps: Vec<f64> = per_path.iter().map(|(_, g)| *g).collect();
    let g = Summary::of(&gaps);
    let s = SeminormEstimate::from_samples(
        "prime vs second".into(),
        family.names(),
        per_path.into_iter().map(|(s, _)| s).collect(),
        window,
    );
    let eps2 = prime.effective_eps_dblprime().max(second.effective_eps_dblprime());
    let d = prime.d;
    let factor = ineq2_factor(d, eps2, space.side, space.dim, a, a_prime);
    let slope = d as f64 * (2.0 * eps2 * (space.side + 1.0).powi(space.dim as i32) + eps2);
    let rhs = 2.0 * a_prime * a * g.mean;
    let terms = vec![Term { name: "2 a' a E sup sum_e |g'_e - g''_e|".into(), value: rhs }];
    let inputs = BTreeMap::from([
        ("d".to_string(), d as f64),
        ("l".to_string(), space.dim as f64),
        ("T".to_string(), space.side),
        ("eps_dblprime".to_string(), eps2),
        ("volume_factor".to_string(), (space.side + 1.0).powi(space.dim as i32)),
        ("g_gap_mean".to_string(), g.mean),
        ("g_gap_se".to_string(), g.se),
        ("n_paths".to_string(), n_paths as f64),
    ]);
    Ok(InequalityReport::assemble("ineq2", &s, factor, slope, terms, rhs, a, a_prime, inputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CellMap, XFunction};
    use crate::measure::{MuSpec, Partition};

    #[test]
    fn factors_instantiate_formulae() {
        assert!((ineq1_factor(1, 2, 0.1, 0.2, 0.5, 1.0) - (1.0 - 0.5 * (0.4 + 0.6))).abs() < 1e-15);
        // T = 1, ℓ = 2: (T + 1)^ℓ = 4
        assert!((ineq2_factor(1, 0.05, 1.0, 2, 0.4, 1.0) - (1.0 - 0.4 * (0.4 + 0.05))).abs() < 1e-15);
    }

    #[test]
    fn rhs_depends_on_a_times_a_prime() {
        let target = CoefficientSpec::constant_amplitude(0.1, XFunction::Monomial { powers: vec![1] }, 0.2);
        let mut p = target.clone();
        p.v = CellMap::CellSnap { level: 2 };
        let mut s = target.clone();
        s.v = CellMap::CellSnap { level: 3 };
        let pts = sample_grid(Space::unit(1), 64);
        let t1: f64 = ineq1_terms(&target, &p, &s, 0.5, 1.0, &pts).unwrap().iter().map(|t| t.value).sum();
        let t2: f64 = ineq1_terms(&target, &p, &s, 1.0, 0.5, &pts).unwrap().iter().map(|t| t.value).sum();
        assert_eq!(t1, t2);
        // |x − snap_2(x)| → 1/4 and |snap_2 − snap_3| = 1/8
        assert!((t1 - 2.0 * 0.5 * 0.2 * (0.25 + 0.125)).abs() < 1e-9);
    }

    #[test]
    fn identical_specs_have_zero_lhs() {
        let target = CoefficientSpec::constant_amplitude(0.1, XFunction::Monomial { powers: vec![1] }, 0.2);
        let mut p = target.clone();
        p.v = CellMap::CellSnap { level: 2 };
        let law = InitialLaw::new(&MuSpec::Uniform, &Partition::new(Space::unit(1), 3).unwrap()).unwrap();
        let r = check_ineq1(
            &target,
            &p,
            &p,
            &law,
            Scheme::linear(),
            &DriverConfig::brownian(1000, 1.0, 1),
            32,
            0.5,
            1.0,
            &TestFamily::standard(Space::unit(1)),
            64,
        )
        .unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.pass && r.rhs > 0.0);
    }

    #[test]
    fn ineq2_equal_specs_both_sides_zero() {
        let spec = CoefficientSpec::constant_amplitude(0.05, XFunction::Monomial { powers: vec![1] }, 0.1);
        let law = InitialLaw::new(&MuSpec::Uniform, &Partition::new(Space::unit(1), 3).unwrap()).unwrap();
        let r = check_ineq2(
            &spec,
            &spec,
            &law,
            Scheme::linear(),
            &DriverConfig::brownian(1000, 1.0, 1),
            16,
            0.4,
            1.0,
            &TestFamily::standard(Space::unit(1)),
            32,
        )
        .unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.pass);
    }
}
