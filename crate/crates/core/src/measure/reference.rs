use serde::{Deserialize, Serialize};

use super::{MeasureError, Partition, PartitionMeasure, Space, TestFunction};
use crate::catalog::XFunction;
use crate::quadrature::GaussLegendre;

/// Catalog of Lebesgue densities `𝔪(x)` for absolutely continuous initial laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Density {
    #[default]
    Uniform,
    /// `Π_j (1 + s_j (2 x_j / T - 1)) / T` with `|s_j| < 1`.
    Tilted { slopes: Vec<f64> },
}

impl Density {
    pub fn validate(&self, space: Space) -> Result<(), MeasureError> {
        match self {
            Density::Uniform => Ok(()),
            Density::Tilted { slopes } => {
                if slopes.len() != space.dim {
                    return Err(MeasureError::DimensionMismatch { expected: space.dim, found: slopes.len() });
                }
                if slopes.iter().any(|s| !(s.abs() < 1.0)) {
                    return Err(MeasureError::InvalidSpace("tilted density needs |slope| < 1".into()));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: &[f64], space: Space) -> f64 {
        let t = space.side;
        match self {
            Density::Uniform => t.powi(-(space.dim as i32)),
            Density::Tilted { slopes } => {
                x.iter().zip(slopes).map(|(&v, s)| (1.0 + s * (2.0 * v / t - 1.0)) / t).product()
            }
        }
    }

    /// Exact mass of the box `[lo, hi]`.
    pub fn box_mass(&self, lo: &[f64], hi: &[f64], space: Space) -> f64 {
        let t = space.side;
        match self {
            Density::Uniform => lo.iter().zip(hi).map(|(a, b)| (b - a).max(0.0) / t).product(),
            Density::Tilted { slopes } => lo
                .iter()
                .zip(hi)
                .zip(slopes)
                .map(|((&a, &b), s)| {
                    if b <= a {
                        0.0
                    } else {
                        ((b - a) + s * ((b * b - a * a) / t - (b - a))) / t
                    }
                })
                .product(),
        }
    }
}

/// How the initial measure `μ` is specified in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuSpec {
    #[default]
    Uniform,
    Weights { weights: Vec<f64> },
    Density { density: Density },
}

/// Initial measure on a partition together with the law of `μ` inside each
/// cell. The within-cell law extends a partition measure to Borel sets as
/// `C(A) = Σ_B C(B) μ(A ∩ B) / μ(B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    measure: PartitionMeasure,
    within: Density,
}

const CELL_NODES: usize = 8;

impl InitialLaw {
    pub fn new(spec: &MuSpec, partition: &Partition) -> Result<Self, MeasureError> {
        let space = partition.space();
        let (measure, within) = match spec {
            MuSpec::Uniform => (PartitionMeasure::uniform(partition.clone()), Density::Uniform),
            MuSpec::Weights { weights } => {
                (PartitionMeasure::new(partition.clone(), weights.clone())?, Density::Uniform)
            }
            MuSpec::Density { density } => {
                density.validate(space)?;
                let weights = (0..partition.len())
                    .map(|cell| {
                        let (lo, hi) = partition.bounds(cell);
                        density.box_mass(&lo, &hi, space)
                    })
                    .collect();
                (PartitionMeasure::new(partition.clone(), weights)?, density.clone())
            }
        };
        measure.check_probability(1e-12)?;
        Ok(Self { measure, within })
    }

    pub fn measure(&self) -> &PartitionMeasure {
        &self.measure
    }

    pub fn partition(&self) -> &Partition {
        self.measure.partition()
    }

    pub fn density(&self) -> &Density {
        &self.within
    }

    /// Density of `μ` at `x`: the catalog density, or the piecewise-constant
    /// density of explicit weights.
    pub fn density_at(&self, x: &[f64]) -> Result<f64, MeasureError> {
        let p = self.partition();
        let cell = p.locate(x)?;
        let (lo, hi) = p.bounds(cell);
        let within_mass = self.within.box_mass(&lo, &hi, p.space());
        if within_mass == 0.0 {
            return Ok(0.0);
        }
        Ok(self.measure.weights()[cell] * self.within.eval(x, p.space()) / within_mass)
    }

    /// `∫_B f dμ / μ(B)` for every cell `B`, computed under the within-cell law.
    pub fn conditional_means(&self, f: &TestFunction) -> Result<Vec<f64>, MeasureError> {
        let p = self.partition();
        f.validate(p.space())?;
        let gl = GaussLegendre::new(CELL_NODES);
        Ok((0..p.len())
            .map(|cell| {
                let (lo, hi) = p.bounds(cell);
                let mass = self.within.box_mass(&lo, &hi, p.space());
                if mass <= 0.0 {
                    return f.eval(&lo, p.space());
                }
                integrate_over_box(f, &self.within, &lo, &hi, p.space(), &gl) / mass
            })
            .collect())
    }

    /// Midpoints of a uniform grid with `per_axis` intervals and their exact
    /// `μ`-masses; `per_axis` must be a multiple of the partition's cells per axis.
    pub fn midpoint_rule(&self, per_axis: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>), MeasureError> {
        let p = self.partition();
        let space = p.space();
        if per_axis == 0 || per_axis % p.per_axis() != 0 {
            return Err(MeasureError::InvalidSpace(format!(
                "{per_axis} intervals per axis do not refine {} cells per axis",
                p.per_axis()
            )));
        }
        let (points, _) = crate::quadrature::midpoint_grid(space.dim, space.side, per_axis);
        let half = 0.5 * space.side / per_axis as f64;
        let masses = points
            .iter()
            .map(|x| {
                let cell = p.locate(x)?;
                let (clo, chi) = p.bounds(cell);
                let cell_mass = self.within.box_mass(&clo, &chi, space);
                let lo: Vec<f64> = x.iter().map(|v| v - half).collect();
                let hi: Vec<f64> = x.iter().map(|v| v + half).collect();
                Ok(if cell_mass > 0.0 {
                    self.measure.weights()[cell] * self.within.box_mass(&lo, &hi, space) / cell_mass
                } else {
                    0.0
                })
            })
            .collect::<Result<Vec<_>, MeasureError>>()?;
        Ok((points, masses))
    }

    /// `C[f]` for a measure on the same partition, via the Borel extension.
    pub fn extended_pairing(&self, weights: &[f64], means: &[f64]) -> f64 {
        weights.iter().zip(means).map(|(w, m)| w * m).sum()
    }
}

/// `∫_{[lo,hi]} f · 𝔪` splitting the box along box/step discontinuities so
/// the remaining integrand is smooth.
fn integrate_over_box(
    f: &TestFunction,
    density: &Density,
    lo: &[f64],
    hi: &[f64],
    space: Space,
    gl: &GaussLegendre,
) -> f64 {
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let mut scale = 1.0;
    let mut smooth = Vec::new();
    let mut steps = Vec::new();
    for factor in f.factors() {
        match factor {
            XFunction::Box { lo: blo, hi: bhi } => {
                for j in 0..lo.len() {
                    lo[j] = lo[j].max(blo.get(j).copied().unwrap_or(0.0));
                    if bhi[j] < space.side {
                        hi[j] = hi[j].min(bhi[j]);
                    }
                }
            }
            XFunction::Constant { value } => scale *= value,
            XFunction::Step { .. } => steps.push(factor.clone()),
            other => smooth.push(other.clone()),
        }
    }
    if lo.iter().zip(&hi).any(|(a, b)| b <= a) {
        return 0.0;
    }
    scale * integrate_steps(&steps, &smooth, density, &lo, &hi, space, gl)
}

fn integrate_steps(
    steps: &[XFunction],
    smooth: &[XFunction],
    density: &Density,
    lo: &[f64],
    hi: &[f64],
    space: Space,
    gl: &GaussLegendre,
) -> f64 {
    let Some((first, rest)) = steps.split_first() else {
        if smooth.is_empty() {
            return density.box_mass(lo, hi, space);
        }
        return gl.integrate_box(lo, hi, |x| {
            smooth.iter().map(|f| f.eval(x, space)).product::<f64>() * density.eval(x, space)
        });
    };
    let XFunction::Step { axis, threshold, below, above } = first else {
        unreachable!("only step factors are split")
    };
    let mut total = 0.0;
    if lo[*axis] < *threshold {
        let mut h = hi.to_vec();
        h[*axis] = h[*axis].min(*threshold);
        total += below * integrate_steps(rest, smooth, density, lo, &h, space, gl);
    }
    if hi[*axis] > *threshold {
        let mut l = lo.to_vec();
        l[*axis] = l[*axis].max(*threshold);
        total += above * integrate_steps(rest, smooth, density, &l, hi, space, gl);
    }
    total
}
