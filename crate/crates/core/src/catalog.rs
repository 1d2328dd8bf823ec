//! Named function primitives from which coefficients and test functions are
//! assembled. Everything here is plain data, so a spec document reproduces
//! the same coefficient in any implementation.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{Partition, Space};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("{name}: expected {expected} entries, found {found}")]
    Length { name: &'static str, expected: usize, found: usize },
    #[error("{name}: axis {axis} out of range for dimension {dim}")]
    Axis { name: &'static str, axis: usize, dim: usize },
    #[error("{name}: {reason}")]
    Parameter { name: &'static str, reason: String },
}

/// Functions of the space variable `x ∈ [0, T]^ℓ`.
///
/// Used both for the `ǧ` factor of a separated coefficient and as factors of
/// a [`TestFunction`](crate::measure::TestFunction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum XFunction {
    Constant {
        value: f64,
    },
    /// Indicator of the half-open box `[lo, hi)`; an upper end at or beyond
    /// the side length includes the far face. Empty `lo` means the origin.
    Box {
        #[serde(default)]
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `Π_j (x_j / T)^{p_j}`.
    Monomial { powers: Vec<u32> },
    /// `cos(2π Σ_j n_j x_j / T + phase)`.
    Cosine {
        wavenumber: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// Gaussian bump `exp(-|x - c|² / (2 w²))`.
    Bump { center: Vec<f64>, width: f64 },
    /// `below` for `x_axis < threshold`, `above` otherwise.
    Step { axis: usize, threshold: f64, below: f64, above: f64 },
}

impl XFunction {
    pub fn constant(value: f64) -> Self {
        XFunction::Constant { value }
    }

    pub fn lower_box(b: Vec<f64>) -> Self {
        XFunction::Box { lo: Vec::new(), hi: b }
    }

    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut powers = vec![0; dim];
        powers[axis] = 1;
        XFunction::Monomial { powers }
    }

    pub fn validate(&self, dim: usize) -> Result<(), CatalogError> {
        let len = |name, v: usize| {
            if v == dim {
                Ok(())
            } else {
                Err(CatalogError::Length { name, expected: dim, found: v })
            }
        };
        match self {
            XFunction::Constant { value } => finite("constant", *value),
            XFunction::Box { lo, hi } => {
                if !lo.is_empty() {
                    len("box.lo", lo.len())?;
                }
                len("box.hi", hi.len())
            }
            XFunction::Monomial { powers } => len("monomial.powers", powers.len()),
            XFunction::Cosine { wavenumber, phase } => {
                len("cosine.wavenumber", wavenumber.len())?;
                finite("cosine.phase", *phase)
            }
            XFunction::Bump { center, width } => {
                len("bump.center", center.len())?;
                if !(width.is_finite() && *width > 0.0) {
                    return Err(CatalogError::Parameter {
                        name: "bump",
                        reason: format!("width must be positive, got {width}"),
                    });
                }
                Ok(())
            }
            XFunction::Step { axis, threshold, below, above } => {
                if *axis >= dim {
                    return Err(CatalogError::Axis { name: "step", axis: *axis, dim });
                }
                finite("step.threshold", *threshold)?;
                finite("step.below", *below)?;
                finite("step.above", *above)
            }
        }
    }

    pub fn eval(&self, x: &[f64], space: Space) -> f64 {
        let t = space.side;
        match self {
            XFunction::Constant { value } => *value,
            XFunction::Box { lo, hi } => {
                let inside = x.iter().enumerate().all(|(j, &v)| {
                    let a = lo.get(j).copied().unwrap_or(0.0);
                    let b = hi[j];
                    v >= a && (v < b || (b >= t && v <= t))
                });
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            XFunction::Monomial { powers } => {
                x.iter().zip(powers).map(|(&v, &p)| (v / t).powi(p as i32)).product()
            }
            XFunction::Cosine { wavenumber, phase } => cosine_phase(wavenumber, *phase, x, t).cos(),
            XFunction::Bump { center, width } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
            XFunction::Step { axis, threshold, below, above } => {
                if x[*axis] < *threshold {
                    *below
                } else {
                    *above
                }
            }
        }
    }

    /// `sup_x |f(x)|` over the space (an upper bound where not attained).
    pub fn sup_bound(&self, space: Space) -> f64 {
        match self {
            XFunction::Constant { value } => value.abs(),
            XFunction::Box { .. } | XFunction::Monomial { .. } => 1.0,
            XFunction::Cosine { .. } => 1.0,
            XFunction::Bump { .. } => 1.0,
            XFunction::Step { below, above, .. } => {
                let _ = space;
                below.abs().max(above.abs())
            }
        }
    }

    /// Lipschitz constant with respect to the ℓ¹ norm on `x`; `None` for
    /// discontinuous entries.
    pub fn lipschitz(&self, space: Space) -> Option<f64> {
        let t = space.side;
        match self {
            XFunction::Constant { .. } => Some(0.0),
            XFunction::Box { .. } | XFunction::Step { .. } => None,
            XFunction::Monomial { powers } => {
                Some(powers.iter().map(|&p| p as f64 / t).fold(0.0, f64::max))
            }
            XFunction::Cosine { wavenumber, .. } => {
                Some(wavenumber.iter().map(|n| 2.0 * PI * n.abs() / t).fold(0.0, f64::max))
            }
            XFunction::Bump { width, .. } => Some(1.0 / (width * E.sqrt())),
        }
    }

    /// Mixed partial derivative `∂_J f(x)`, `J` given as a bit mask over axes.
    /// `None` when the entry is not differentiable.
    pub fn partial(&self, mask: u32, x: &[f64], space: Space) -> Option<f64> {
        if mask == 0 {
            return Some(self.eval(x, space));
        }
        let t = space.side;
        let in_mask = |j: usize| mask & (1 << j) != 0;
        match self {
            XFunction::Constant { .. } => Some(0.0),
            XFunction::Box { .. } | XFunction::Step { .. } => None,
            XFunction::Monomial { powers } => Some(
                x.iter()
                    .zip(powers)
                    .enumerate()
                    .map(|(j, (&v, &p))| {
                        if in_mask(j) {
                            if p == 0 {
                                0.0
                            } else {
                                p as f64 / t * (v / t).powi(p as i32 - 1)
                            }
                        } else {
                            (v / t).powi(p as i32)
                        }
                    })
                    .product(),
            ),
            XFunction::Cosine { wavenumber, phase } => {
                let order = mask.count_ones();
                let chain: f64 = (0..x.len())
                    .filter(|&j| in_mask(j))
                    .map(|j| 2.0 * PI * wavenumber[j] / t)
                    .product();
                let theta = cosine_phase(wavenumber, *phase, x, t);
                Some(chain * (theta + order as f64 * PI / 2.0).cos())
            }
            XFunction::Bump { center, width } => {
                let w2 = width * width;
                let value = self.eval(x, space);
                let poly: f64 = (0..x.len())
                    .filter(|&j| in_mask(j))
                    .map(|j| -(x[j] - center[j]) / w2)
                    .product();
                Some(poly * value)
            }
        }
    }

    /// Upper bound on `sup_x |∂_J f(x)|`.
    pub fn partial_bound(&self, mask: u32, space: Space) -> Option<f64> {
        if mask == 0 {
            return Some(self.sup_bound(space));
        }
        let t = space.side;
        let in_mask = |j: usize| mask & (1 << j) != 0;
        match self {
            XFunction::Constant { .. } => Some(0.0),
            XFunction::Box { .. } | XFunction::Step { .. } => None,
            XFunction::Monomial { powers } => Some(
                powers
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| in_mask(*j))
                    .map(|(_, &p)| p as f64 / t)
                    .product(),
            ),
            XFunction::Cosine { wavenumber, .. } => Some(
                wavenumber
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| in_mask(*j))
                    .map(|(_, n)| 2.0 * PI * n.abs() / t)
                    .product(),
            ),
            XFunction::Bump { width, .. } => {
                Some((1.0 / (width * E.sqrt())).powi(mask.count_ones() as i32))
            }
        }
    }

    /// True when the function is constant on every cell of `partition`.
    pub fn is_measurable(&self, partition: &Partition) -> bool {
        match self {
            XFunction::Constant { .. } => true,
            XFunction::Box { lo, hi } => {
                lo.iter().all(|&v| partition.is_breakpoint(v))
                    && hi.iter().all(|&v| partition.is_breakpoint(v))
            }
            XFunction::Monomial { powers } => powers.iter().all(|&p| p == 0),
            XFunction::Cosine { wavenumber, .. } => wavenumber.iter().all(|&n| n == 0.0),
            XFunction::Bump { .. } => false,
            XFunction::Step { threshold, .. } => partition.is_breakpoint(*threshold),
        }
    }
}

fn cosine_phase(wavenumber: &[f64], phase: f64, x: &[f64], t: f64) -> f64 {
    2.0 * PI * x.iter().zip(wavenumber).map(|(v, n)| n * v).sum::<f64>() / t + phase
}

fn finite(name: &'static str, v: f64) -> Result<(), CatalogError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CatalogError::Parameter { name, reason: format!("value must be finite, got {v}") })
    }
}

/// Functions of the pairing vector `y = c[h] ∈ ℝ^k` (the `ḡ` factor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum YFunction {
    Constant { value: f64 },
    /// `clamp(offset + Σ w_i y_i, lo, hi)`.
    AffineClamped { weights: Vec<f64>, offset: f64, lo: f64, hi: f64 },
    /// `scale · tanh(y_index - shift)`.
    Tanh {
        scale: f64,
        index: usize,
        #[serde(default)]
        shift: f64,
    },
}

impl YFunction {
    pub fn constant(value: f64) -> Self {
        YFunction::Constant { value }
    }

    pub fn validate(&self, k: usize) -> Result<(), CatalogError> {
        match self {
            YFunction::Constant { value } => finite("constant", *value),
            YFunction::AffineClamped { weights, offset, lo, hi } => {
                if weights.len() != k {
                    return Err(CatalogError::Length {
                        name: "affine_clamped.weights",
                        expected: k,
                        found: weights.len(),
                    });
                }
                finite("affine_clamped.offset", *offset)?;
                if !(lo <= hi) {
                    return Err(CatalogError::Parameter {
                        name: "affine_clamped",
                        reason: format!("lo {lo} exceeds hi {hi}"),
                    });
                }
                Ok(())
            }
            YFunction::Tanh { scale, index, shift } => {
                if *index >= k {
                    return Err(CatalogError::Axis { name: "tanh.index", axis: *index, dim: k });
                }
                finite("tanh.scale", *scale)?;
                finite("tanh.shift", *shift)
            }
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            YFunction::Constant { value } => *value,
            YFunction::AffineClamped { weights, offset, lo, hi } => {
                let v = offset + weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>();
                v.clamp(*lo, *hi)
            }
            YFunction::Tanh { scale, index, shift } => scale * (y[*index] - shift).tanh(),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            YFunction::Constant { value } => value.abs(),
            YFunction::AffineClamped { lo, hi, .. } => lo.abs().max(hi.abs()),
            YFunction::Tanh { scale, .. } => scale.abs(),
        }
    }

    /// Lipschitz constant with respect to the ℓ¹ norm on `y`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            YFunction::Constant { .. } => 0.0,
            YFunction::AffineClamped { weights, .. } => {
                weights.iter().map(|w| w.abs()).fold(0.0, f64::max)
            }
            YFunction::Tanh { scale, .. } => scale.abs(),
        }
    }

    pub fn negated(&self) -> Self {
        match self {
            YFunction::Constant { value } => YFunction::Constant { value: -value },
            YFunction::AffineClamped { weights, offset, lo, hi } => YFunction::AffineClamped {
                weights: weights.iter().map(|w| -w).collect(),
                offset: -offset,
                lo: -hi,
                hi: -lo,
            },
            YFunction::Tanh { scale, index, shift } => {
                YFunction::Tanh { scale: -scale, index: *index, shift: *shift }
            }
        }
    }
}

/// Upper edge of the support of the cutoff in `y₁`.
pub const CUTOFF_SUPPORT: f64 = 5.0;

/// Piecewise-linear cutoff `χ(y₁)`: zero outside `(0, 5)`, one on
/// `[c_lo, c_hi]`, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub c_lo: f64,
    pub c_hi: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Self { c_lo: 0.25, c_hi: 4.0 }
    }
}

impl Cutoff {
    pub fn validate(&self) -> Result<(), CatalogError> {
        if !(self.c_lo > 0.0 && self.c_lo <= self.c_hi && self.c_hi < CUTOFF_SUPPORT) {
            return Err(CatalogError::Parameter {
                name: "cutoff",
                reason: format!(
                    "need 0 < c_lo <= c_hi < {CUTOFF_SUPPORT}, got [{}, {}]",
                    self.c_lo, self.c_hi
                ),
            });
        }
        Ok(())
    }

    pub fn eval(&self, y1: f64) -> f64 {
        if y1 <= 0.0 || y1 >= CUTOFF_SUPPORT {
            0.0
        } else if y1 < self.c_lo {
            y1 / self.c_lo
        } else if y1 <= self.c_hi {
            1.0
        } else {
            (CUTOFF_SUPPORT - y1) / (CUTOFF_SUPPORT - self.c_hi)
        }
    }

    pub fn lipschitz(&self) -> f64 {
        (1.0 / self.c_lo).max(1.0 / (CUTOFF_SUPPORT - self.c_hi))
    }
}

/// The measurable self-map `v` applied to `x` before `ǧ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellMap {
    #[default]
    Identity,
    /// Lower corner of the containing dyadic cell at `level`.
    CellSnap { level: u32 },
}

impl CellMap {
    pub fn apply(&self, x: &[f64], space: Space) -> Vec<f64> {
        match self {
            CellMap::Identity => x.to_vec(),
            CellMap::CellSnap { level } => {
                let n = (1u64 << level) as f64;
                let w = space.side / n;
                x.iter()
                    .map(|&v| ((v / w).floor().min(n - 1.0).max(0.0)) * w)
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: Space = Space { dim: 1, side: 1.0 };

    #[test]
    fn cutoff_shape() {
        let c = Cutoff::default();
        assert_eq!(c.eval(-1.0), 0.0);
        assert_eq!(c.eval(0.125), 0.5);
        assert_eq!(c.eval(1.0), 1.0);
        assert_eq!(c.eval(4.5), 0.5);
        assert_eq!(c.eval(5.0), 0.0);
        assert_eq!(c.lipschitz(), 4.0);
    }

    #[test]
    fn cosine_takes_plus_minus_one_on_half_cells() {
        let f = XFunction::Cosine { wavenumber: vec![1.0], phase: 0.0 };
        assert!((f.eval(&[0.0], UNIT) - 1.0).abs() < 1e-15);
        assert!((f.eval(&[0.5], UNIT) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn box_indicator_is_half_open_but_closed_at_side() {
        let f = XFunction::lower_box(vec![0.5]);
        assert_eq!(f.eval(&[0.0], UNIT), 1.0);
        assert_eq!(f.eval(&[0.5], UNIT), 0.0);
        let g = XFunction::lower_box(vec![1.0]);
        assert_eq!(g.eval(&[1.0], UNIT), 1.0);
    }

    #[test]
    fn partials_match_finite_differences() {
        let space = Space::unit(2);
        let fs = [
            XFunction::Monomial { powers: vec![2, 1] },
            XFunction::Cosine { wavenumber: vec![1.0, 0.5], phase: 0.3 },
            XFunction::Bump { center: vec![0.4, 0.6], width: 0.3 },
        ];
        let x = [0.31, 0.57];
        let h = 1e-4;
        for f in &fs {
            let fd1 = (f.eval(&[x[0] + h, x[1]], space) - f.eval(&[x[0] - h, x[1]], space)) / (2.0 * h);
            assert!((f.partial(0b01, &x, space).unwrap() - fd1).abs() < 1e-6, "{f:?}");
            let fd12 = (f.eval(&[x[0] + h, x[1] + h], space) - f.eval(&[x[0] + h, x[1] - h], space)
                - f.eval(&[x[0] - h, x[1] + h], space)
                + f.eval(&[x[0] - h, x[1] - h], space))
                / (4.0 * h * h);
            assert!((f.partial(0b11, &x, space).unwrap() - fd12).abs() < 1e-5, "{f:?}");
        }
    }

    #[test]
    fn negation_flips_values() {
        let g = YFunction::AffineClamped { weights: vec![0.0, 0.3], offset: 0.05, lo: -0.1, hi: 0.2 };
        let y = [1.0, 0.4];
        assert_eq!(g.negated().eval(&y), -g.eval(&y));
        let t = YFunction::Tanh { scale: 0.1, index: 1, shift: 0.0 };
        assert_eq!(t.negated().eval(&y), -t.eval(&y));
    }

    #[test]
    fn cell_snap_matches_partition_lower_corner() {
        let v = CellMap::CellSnap { level: 2 };
        assert_eq!(v.apply(&[0.3], UNIT), vec![0.25]);
        assert_eq!(v.apply(&[1.0], UNIT), vec![0.75]);
    }

    #[test]
    fn unknown_catalog_name_is_rejected() {
        let doc = r#"{"name": "sawtooth", "value": 1.0}"#;
        assert!(serde_json::from_str::<XFunction>(doc).is_err());
    }
}
