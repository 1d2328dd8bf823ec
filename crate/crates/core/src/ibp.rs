//! Deterministic calculus on tensor grids over `[0, T]^n`, `n ≤ 3`: iterated
//! primitives, ℓ-volumes, the iterated integration-by-parts identity and the
//! expansion of `∫ f u` over the upper boundary faces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::XFunction;
use crate::measure::{InitialLaw, MeasureError, Space, TestFunction};
use crate::quadrature::GaussLegendre;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IbpError {
    #[error("dimension {0} outside 1..=3")]
    Dimension(usize),
    #[error("need at least 3 nodes per axis, got {0}")]
    Nodes(usize),
    #[error("corner {value} on axis {axis} is not a grid node")]
    OffGrid { axis: usize, value: f64 },
    #[error("empty box on axis {axis}: ({lo}, {hi}]")]
    EmptyBox { axis: usize, lo: f64, hi: f64 },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("grids differ: {0}")]
    Mismatch(String),
    #[error("{0} has no analytic partial derivatives")]
    NotDifferentiable(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Values on the uniform tensor grid `{i·T/(N−1)}^n`, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    dim: usize,
    side: f64,
    nodes: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(dim: usize, side: f64, nodes: usize, values: Vec<f64>) -> Result<Self, IbpError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(IbpError::Dimension(dim));
        }
        if nodes < 3 {
            return Err(IbpError::Nodes(nodes));
        }
        if values.len() != nodes.pow(dim as u32) {
            return Err(IbpError::Mismatch(format!("{} values for {nodes}^{dim} nodes", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(IbpError::NonFinite(i));
        }
        Ok(Self { dim, side, nodes, values })
    }

    pub fn sample(dim: usize, side: f64, nodes: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self, IbpError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(IbpError::Dimension(dim));
        }
        if nodes < 3 {
            return Err(IbpError::Nodes(nodes));
        }
        let h = side / (nodes - 1) as f64;
        let total = nodes.pow(dim as u32);
        let mut x = vec![0.0; dim];
        let values = (0..total)
            .map(|flat| {
                let mut rest = flat;
                for j in (0..dim).rev() {
                    x[j] = (rest % nodes) as f64 * h;
                    rest /= nodes;
                }
                f(&x)
            })
            .collect();
        Self::new(dim, side, nodes, values)
    }

    pub fn from_test_function(f: &TestFunction, space: Space, nodes: usize) -> Result<Self, IbpError> {
        Self::sample(space.dim, space.side, nodes, |x| f.eval(x, space))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn spacing(&self) -> f64 {
        self.side / (self.nodes - 1) as f64
    }

    pub fn space(&self) -> Space {
        Space { dim: self.dim, side: self.side }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn stride(&self, axis: usize) -> usize {
        self.nodes.pow((self.dim - 1 - axis) as u32)
    }

    fn multi(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        let mut m = vec![0; self.dim];
        for j in (0..self.dim).rev() {
            m[j] = rest % self.nodes;
            rest /= self.nodes;
        }
        m
    }

    fn flat(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.nodes + i)
    }

    pub fn at(&self, multi: &[usize]) -> f64 {
        self.values[self.flat(multi)]
    }

    pub fn coordinates(&self, multi: &[usize]) -> Vec<f64> {
        let h = self.spacing();
        multi.iter().map(|&i| i as f64 * h).collect()
    }

    /// Grid index of `value`, which must be a node.
    pub fn node_index(&self, axis: usize, value: f64) -> Result<usize, IbpError> {
        let h = self.spacing();
        let i = (value / h).round();
        if i < 0.0 || i as usize >= self.nodes || (value - i * h).abs() > 1e-9 * h {
            return Err(IbpError::OffGrid { axis, value });
        }
        Ok(i as usize)
    }

    fn same_grid(&self, other: &Self) -> Result<(), IbpError> {
        if (self.dim, self.nodes) != (other.dim, other.nodes) || self.side != other.side {
            return Err(IbpError::Mismatch(format!(
                "{}^{} on side {} vs {}^{} on side {}",
                self.nodes, self.dim, self.side, other.nodes, other.dim, other.side
            )));
        }
        Ok(())
    }

    pub fn product(&self, other: &Self) -> Result<Self, IbpError> {
        self.same_grid(other)?;
        Ok(Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(), ..self.clone() })
    }

    fn map_lines(&self, axis: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let stride = self.stride(axis);
        let n = self.nodes;
        let mut out = vec![0.0; self.values.len()];
        let mut line = vec![0.0; n];
        let mut res = vec![0.0; n];
        for start in 0..self.values.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for k in 0..n {
                line[k] = self.values[start + k * stride];
            }
            f(&line, &mut res);
            for k in 0..n {
                out[start + k * stride] = res[k];
            }
        }
        Self { values: out, ..self.clone() }
    }

    /// Second-order finite difference along `axis`: central inside,
    /// one-sided three-point at the two ends.
    pub fn partial(&self, axis: usize) -> Self {
        let h = self.spacing();
        self.map_lines(axis, |f, d| {
            let n = f.len();
            d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
            d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
            for k in 1..n - 1 {
                d[k] = (f[k + 1] - f[k - 1]) / (2.0 * h);
            }
        })
    }

    /// `∂_J` for the axes in bit mask `mask`.
    pub fn partial_mask(&self, mask: u32) -> Self {
        (0..self.dim).filter(|j| mask & (1 << j) != 0).fold(self.clone(), |g, j| g.partial(j))
    }

    /// Tensor trapezoid integral over the whole grid.
    pub fn integrate(&self) -> f64 {
        let h = self.spacing();
        let last = self.nodes - 1;
        (0..self.values.len())
            .map(|flat| {
                let w: f64 =
                    self.multi(flat).iter().map(|&i| if i == 0 || i == last { 0.5 * h } else { h }).product();
                w * self.values[flat]
            })
            .sum()
    }
}

/// `F(x) = ∫_0^{x_1} … ∫_0^{x_n} f`, by a cumulative trapezoid along each axis in turn.
pub fn cumulative_primitive(f: &GridFunction) -> GridFunction {
    let h = f.spacing();
    (0..f.dim).fold(f.clone(), |g, axis| {
        g.map_lines(axis, |v, out| {
            out[0] = 0.0;
            for k in 1..v.len() {
                out[k] = out[k - 1] + 0.5 * h * (v[k - 1] + v[k]);
            }
        })
    })
}

/// Alternating corner sum of `F` over `Π_j (lo_j, hi_j]`; corners must be grid nodes.
pub fn l_volume(primitive: &GridFunction, lo: &[f64], hi: &[f64]) -> Result<f64, IbpError> {
    let n = primitive.dim;
    if lo.len() != n || hi.len() != n {
        return Err(IbpError::Mismatch(format!("box of dimension {} on a {n}-dimensional grid", lo.len())));
    }
    let mut corners = Vec::with_capacity(n);
    for j in 0..n {
        let (a, b) = (primitive.node_index(j, lo[j])?, primitive.node_index(j, hi[j])?);
        if a >= b {
            return Err(IbpError::EmptyBox { axis: j, lo: lo[j], hi: hi[j] });
        }
        corners.push([a, b]);
    }
    let mut idx = vec![0; n];
    let mut total = 0.0;
    for eps in 0..1u32 << n {
        for j in 0..n {
            idx[j] = corners[j][((eps >> j) & 1) as usize];
        }
        let zeros = n as u32 - eps.count_ones();
        let sign = if zeros % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * primitive.at(&idx);
    }
    Ok(total)
}

/// Largest residual of `u ∂ⁿv = Σ_I (−1)^{|I|} ∂_{I^c}(v ∂_I u)` over nodes
/// at least one node away from the boundary, derivatives by finite differences.
pub fn iterated_ibp_check(u: &GridFunction, v: &GridFunction) -> Result<f64, IbpError> {
    u.same_grid(v)?;
    let n = u.dim;
    let full = (1u32 << n) - 1;
    let lhs = u.product(&v.partial_mask(full))?;
    let mut rhs = vec![0.0; lhs.values.len()];
    for mask in 0..=full {
        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        let term = v.product(&u.partial_mask(mask))?.partial_mask(full & !mask);
        rhs.iter_mut().zip(&term.values).for_each(|(r, t)| *r += sign * t);
    }
    let last = u.nodes - 1;
    Ok((0..rhs.len())
        .filter(|&flat| u.multi(flat).iter().all(|&i| i >= 1 && i < last))
        .map(|flat| (lhs.values[flat] - rhs[flat]).abs())
        .fold(0.0, f64::max))
}

/// Residuals on grids of `nodes` and `2·nodes − 1` points per axis and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub coarse_nodes: usize,
    pub coarse: f64,
    pub fine: f64,
    pub ratio: f64,
}

pub fn iterated_ibp_refinement(
    u: impl Fn(&[f64]) -> f64,
    v: impl Fn(&[f64]) -> f64,
    space: Space,
    nodes: usize,
) -> Result<Refinement, IbpError> {
    let residual = |m: usize| -> Result<f64, IbpError> {
        let gu = GridFunction::sample(space.dim, space.side, m, &u)?;
        let gv = GridFunction::sample(space.dim, space.side, m, &v)?;
        iterated_ibp_check(&gu, &gv)
    };
    let coarse = residual(nodes)?;
    let fine = residual(2 * nodes - 1)?;
    Ok(Refinement { coarse_nodes: nodes, coarse, fine, ratio: coarse / fine })
}

/// Points of the face `{x_j = T, j ∉ I}` on the grid, with trapezoid weights over the `I` axes.
fn face_nodes(grid: &GridFunction, mask: u32) -> Vec<(Vec<usize>, f64)> {
    let n = grid.dim;
    let last = grid.nodes - 1;
    let h = grid.spacing();
    let free: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
    let count = grid.nodes.pow(free.len() as u32);
    (0..count)
        .map(|flat| {
            let mut idx = vec![last; n];
            let mut rest = flat;
            let mut w = 1.0;
            for &j in free.iter().rev() {
                let i = rest % grid.nodes;
                rest /= grid.nodes;
                idx[j] = i;
                w *= if i == 0 || i == last { 0.5 * h } else { h };
            }
            (idx, w)
        })
        .collect()
}

/// `Σ_I (−1)^{|I|} ∫_{[0,T]^I} F(T_{I^c}, x_I) ∂_I u(T_{I^c}, x_I) dx_I` with
/// `F` the cumulative primitive of `f` and analytic partials of `u`.
pub fn boundary_face_expansion(f: &GridFunction, u: &XFunction) -> Result<f64, IbpError> {
    let space = f.space();
    let primitive = cumulative_primitive(f);
    let full = (1u32 << f.dim) - 1;
    let mut total = 0.0;
    for mask in 0..=full {
        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        let mut face = 0.0;
        for (idx, w) in face_nodes(&primitive, mask) {
            let x = primitive.coordinates(&idx);
            let du = u.partial(mask, &x, space).ok_or_else(|| IbpError::NotDifferentiable(format!("{u:?}")))?;
            face += w * primitive.at(&idx) * du;
        }
        total += sign * face;
    }
    Ok(total)
}

/// Trapezoid quadrature of `f · u` on the grid of `f`.
pub fn direct_quadrature(f: &GridFunction, u: &XFunction) -> f64 {
    let space = f.space();
    let gu = GridFunction::sample(f.dim, f.side, f.nodes, |x| u.eval(x, space)).expect("grid of f is valid");
    f.product(&gu).expect("same grid").integrate()
}

/// One face `I` of the expansion of `C′[f g] − C″[f g]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTerm {
    pub axes: Vec<usize>,
    /// `(−1)^{|I|} ∫ (v′ − v″)(b_I(x_I)) ∂_I g(b_I(x_I)) dx_I`.
    pub signed: f64,
    /// Same integral with absolute values inside.
    pub magnitude: f64,
}

/// Face decomposition of a pairing difference and the aggregated bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTerms {
    pub faces: Vec<FaceTerm>,
    /// `C′[f g] − C″[f g]` computed directly.
    pub difference: f64,
    /// `|Σ signed − difference|`.
    pub identity_residual: f64,
    pub sum_magnitude: f64,
    /// `sup_b |C′[f 1_{[0,b]}] − C″[f 1_{[0,b]}]|` over the quadrature points used.
    pub sup_box_difference: f64,
    pub eps_dblprime: f64,
    /// `ε″ (T + 1)^ℓ · sup_box_difference`.
    pub bound: f64,
    pub within_bound: bool,
}

/// Decomposes `C′[f g] − C″[f g]` into boundary-face integrals of the box
/// pairings `v(x) = C[f 1_{[0,x]}]`, for two states on the partition of `law`.
pub fn ibp_pairing_bound_terms(
    c1: &[f64],
    c2: &[f64],
    law: &InitialLaw,
    f: &TestFunction,
    g: &XFunction,
) -> Result<FaceTerms, IbpError> {
    let p = law.partition();
    let space = p.space();
    let n = space.dim;
    if c1.len() != p.len() || c2.len() != p.len() {
        return Err(IbpError::Mismatch("states do not match the partition".into()));
    }
    let diff_pairing = |h: &TestFunction| -> Result<f64, IbpError> {
        let m = law.conditional_means(h)?;
        Ok(law.extended_pairing(c1, &m) - law.extended_pairing(c2, &m))
    };
    let mut fg = f.factors().to_vec();
    fg.push(g.clone());
    let difference = diff_pairing(&TestFunction::from_factors(fg))?;

    // box pairings are smooth inside cells, so integrate cell by cell along each axis
    let gl = GaussLegendre::new(8);
    let per_axis = p.per_axis();
    let w = p.cell_width();
    let mut eps = 0.0f64;
    let mut sup_box = 0.0f64;
    let mut faces = Vec::new();
    let full = (1u32 << n) - 1;
    for mask in 0..=full {
        let free: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let mut signed = 0.0;
        let mut magnitude = 0.0;
        let cells = per_axis.pow(free.len() as u32);
        for c in 0..cells {
            let mut lo = vec![0.0; free.len()];
            let mut rest = c;
            for k in (0..free.len()).rev() {
                lo[k] = (rest % per_axis) as f64 * w;
                rest /= per_axis;
            }
            let hi: Vec<f64> = lo.iter().map(|a| a + w).collect();
            let mut err = None;
            let (s, m) = integrate_pair(&gl, &lo, &hi, |xi| {
                let mut b = vec![space.side; n];
                for (k, &j) in free.iter().enumerate() {
                    b[j] = xi[k];
                }
                let mut fb = f.factors().to_vec();
                fb.push(XFunction::lower_box(b.clone()));
                let v = match diff_pairing(&TestFunction::from_factors(fb)) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                };
                let dg = g.partial(mask, &b, space);
                sup_box = sup_box.max(v.abs());
                match dg {
                    Some(dg) => {
                        eps = eps.max(dg.abs());
                        (v * dg, (v * dg).abs())
                    }
                    None => {
                        err = Some(IbpError::NotDifferentiable(format!("{g:?}")));
                        (0.0, 0.0)
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            signed += s;
            magnitude += m;
        }
        let sign = if free.len() % 2 == 0 { 1.0 } else { -1.0 };
        faces.push(FaceTerm { axes: free, signed: sign * signed, magnitude });
    }
    let eps_dblprime = (0..=full).filter_map(|m| g.partial_bound(m, space)).fold(eps, f64::max);
    let total: f64 = faces.iter().map(|t| t.signed).sum();
    let sum_magnitude: f64 = faces.iter().map(|t| t.magnitude).sum();
    let bound = eps_dblprime * (space.side + 1.0).powi(n as i32) * sup_box;
    Ok(FaceTerms {
        identity_residual: (total - difference).abs(),
        difference,
        within_bound: sum_magnitude <= bound * (1.0 + 1e-12) + 1e-15,
        sum_magnitude,
        sup_box_difference: sup_box,
        eps_dblprime,
        bound,
        faces,
    })
}

/// Integrates a pair of values over a box, evaluating `f` once per node.
fn integrate_pair(gl: &GaussLegendre, lo: &[f64], hi: &[f64], mut f: impl FnMut(&[f64]) -> (f64, f64)) -> (f64, f64) {
    let mut seconds = Vec::new();
    let first = gl.integrate_box(lo, hi, |x| {
        let (a, b) = f(x);
        seconds.push(b);
        a
    });
    let mut it = seconds.into_iter();
    let second = gl.integrate_box(lo, hi, |_| it.next().unwrap_or_default());
    (first, second)
}

/// A random smooth catalog entry: monomial, low-frequency cosine, wide bump or constant.
pub fn random_smooth_factor<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> XFunction {
    match rng.random_range(0..4) {
        0 => XFunction::Monomial { powers: (0..dim).map(|_| rng.random_range(0..=2)).collect() },
        1 => XFunction::Cosine {
            wavenumber: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        },
        2 => XFunction::Bump {
            center: (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            width: rng.random_range(0.3..1.0),
        },
        _ => XFunction::constant(rng.random_range(-1.0..1.0)),
    }
}

/// Product of one or two [`random_smooth_factor`]s.
pub fn random_smooth_function<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> TestFunction {
    let n = rng.random_range(1..=2);
    TestFunction::from_factors((0..n).map(|_| random_smooth_factor(rng, dim)).collect())
}

/// One line of an identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub identity: String,
    pub grid: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(identity: &str, grid: String, residual: f64, tolerance: f64) -> Self {
        Self { identity: identity.into(), grid, residual, tolerance, pass: residual <= tolerance }
    }
}

pub const VOLUME_TOLERANCE: f64 = 1e-6;
pub const FACE_TOLERANCE: f64 = 1e-5;
pub const REFINEMENT_RANGE: (f64, f64) = (3.5, 4.5);

/// ℓ-volumes of random boxes against Gauss–Legendre quadrature (ℓ = 2), the
/// boundary-face expansion against direct quadrature (ℓ = 1, 2 alternating)
/// and the refinement ratio of the iterated identity, all on `nodes` per axis.
pub fn identity_suite(seed: u64, cases: usize, nodes: usize, refinement_nodes: usize) -> Result<Vec<IdentityCheck>, IbpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gl = GaussLegendre::new(24);
    let mut out = Vec::new();
    let intervals = nodes - 1;
    for _ in 0..cases {
        let space = Space::unit(2);
        let f = random_smooth_function(&mut rng, 2);
        let primitive = cumulative_primitive(&GridFunction::from_test_function(&f, space, nodes)?);
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for j in 0..2 {
            let a = rng.random_range(0..intervals);
            let b = rng.random_range(a + 1..=intervals);
            lo[j] = a as f64 / intervals as f64;
            hi[j] = b as f64 / intervals as f64;
        }
        let v = l_volume(&primitive, &lo, &hi)?;
        let q = gl.integrate_box(&lo, &hi, |x| f.eval(x, space));
        out.push(IdentityCheck::new("l_volume", format!("{nodes}^2"), (v - q).abs(), VOLUME_TOLERANCE));
    }
    for case in 0..cases {
        let dim = 1 + case % 2;
        let space = Space::unit(dim);
        let f = random_smooth_function(&mut rng, dim);
        let u = random_smooth_factor(&mut rng, dim);
        let g = GridFunction::from_test_function(&f, space, nodes)?;
        let residual = (boundary_face_expansion(&g, &u)? - direct_quadrature(&g, &u)).abs();
        out.push(IdentityCheck::new("boundary_face_expansion", format!("{nodes}^{dim}"), residual, FACE_TOLERANCE));
    }
    let r = iterated_ibp_refinement(
        |x| (x[0] + 2.0 * x[1]).sin(),
        |x| (x[0] * x[1]).exp(),
        Space::unit(2),
        refinement_nodes,
    )?;
    let (lo, hi) = REFINEMENT_RANGE;
    out.push(IdentityCheck {
        identity: "iterated_ibp_refinement_ratio".into(),
        grid: format!("{}^2/{}^2", refinement_nodes, 2 * refinement_nodes - 1),
        residual: r.ratio,
        tolerance: hi,
        pass: (lo..=hi).contains(&r.ratio),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{MuSpec, Partition};

    #[test]
    fn primitive_of_constant_is_product() {
        let one = GridFunction::sample(2, 1.0, 33, |_| 1.0).unwrap();
        let f = cumulative_primitive(&one);
        for flat in 0..f.values.len() {
            let x = f.coordinates(&f.multi(flat));
            assert!((f.values[flat] - x[0] * x[1]).abs() < 1e-12);
        }
        assert_eq!(l_volume(&f, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), f.at(&[32, 32]));
    }

    #[test]
    fn off_grid_corner_is_an_error() {
        let f = cumulative_primitive(&GridFunction::sample(1, 1.0, 5, |x| x[0]).unwrap());
        assert!(matches!(l_volume(&f, &[0.1], &[1.0]), Err(IbpError::OffGrid { .. })));
        assert!(matches!(l_volume(&f, &[0.5], &[0.5]), Err(IbpError::EmptyBox { .. })));
    }

    #[test]
    fn one_dimensional_volume_is_a_difference() {
        let f = cumulative_primitive(&GridFunction::sample(1, 1.0, 9, |x| x[0] * x[0]).unwrap());
        let v = l_volume(&f, &[0.25], &[0.75]).unwrap();
        assert_eq!(v, f.at(&[6]) - f.at(&[2]));
    }

    #[test]
    fn unit_u_leaves_only_the_corner() {
        let f = GridFunction::sample(2, 1.0, 65, |x| (x[0] + 2.0 * x[1]).sin()).unwrap();
        let u = XFunction::constant(1.0);
        let rhs = boundary_face_expansion(&f, &u).unwrap();
        assert!((rhs - cumulative_primitive(&f).at(&[64, 64])).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_face_expansion() {
        // f ≡ 1, u = x: F(1)·1 − ∫ F = 1 − 1/2
        let f = GridFunction::sample(1, 1.0, 101, |_| 1.0).unwrap();
        let rhs = boundary_face_expansion(&f, &XFunction::Monomial { powers: vec![1] }).unwrap();
        assert!((rhs - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unit_u_residual_is_zero() {
        let u = GridFunction::sample(2, 1.0, 17, |_| 1.0).unwrap();
        let v = GridFunction::sample(2, 1.0, 17, |x| x[0] * x[1] * x[1]).unwrap();
        assert!(iterated_ibp_check(&u, &v).unwrap() < 1e-12);
    }

    #[test]
    fn face_terms_vanish_for_equal_states() {
        let law = InitialLaw::new(&MuSpec::Uniform, &Partition::new(Space::unit(1), 2).unwrap()).unwrap();
        let w = law.measure().weights().to_vec();
        let t =
            ibp_pairing_bound_terms(&w, &w, &law, &TestFunction::one(), &XFunction::Monomial { powers: vec![1] })
                .unwrap();
        assert!(t.faces.iter().all(|f| f.magnitude == 0.0) && t.difference == 0.0);
    }

    #[test]
    fn constant_g_uses_only_the_corner_face() {
        let law = InitialLaw::new(&MuSpec::Uniform, &Partition::new(Space::unit(2), 2).unwrap()).unwrap();
        let w1 = law.measure().weights().to_vec();
        let mut w2 = w1.clone();
        w2[0] += 0.05;
        w2[5] -= 0.05;
        let t = ibp_pairing_bound_terms(&w1, &w2, &law, &TestFunction::one(), &XFunction::constant(0.5)).unwrap();
        assert!(t.faces[1..].iter().all(|f| f.magnitude == 0.0));
        assert!(t.identity_residual < 1e-14 && t.within_bound);
    }
}
