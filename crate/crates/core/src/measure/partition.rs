use serde::{Deserialize, Serialize};

use super::MeasureError;

/// Default cap on the dyadic level of a partition.
pub const DEFAULT_MAX_LEVEL: u32 = 12;

/// Hard cap on the number of cells, whatever the level cap says.
pub const MAX_CELLS: usize = 1 << 24;

/// The ambient cube `[0, side]^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Space {
    pub dim: usize,
    pub side: f64,
}

impl Space {
    pub fn new(dim: usize, side: f64) -> Result<Self, MeasureError> {
        if dim == 0 {
            return Err(MeasureError::InvalidSpace("dimension must be positive".into()));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(MeasureError::InvalidSpace(format!("side must be positive, got {side}")));
        }
        Ok(Self { dim, side })
    }

    pub fn unit(dim: usize) -> Self {
        Self { dim, side: 1.0 }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|&v| (0.0..=self.side).contains(&v))
    }
}

impl Default for Space {
    fn default() -> Self {
        Self::unit(1)
    }
}

/// Dyadic partition of `[0, T]^ℓ` into `2^(level·ℓ)` half-open boxes.
///
/// Cells are numbered lexicographically by their per-axis index, first axis
/// most significant. The representative of a cell is its lower corner. The
/// last cell along each axis is closed at `T` so the cells cover the cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    space: Space,
    level: u32,
    #[serde(default = "default_max_level")]
    max_level: u32,
}

fn default_max_level() -> u32 {
    DEFAULT_MAX_LEVEL
}

impl Partition {
    pub fn new(space: Space, level: u32) -> Result<Self, MeasureError> {
        Self::with_max_level(space, level, DEFAULT_MAX_LEVEL)
    }

    pub fn with_max_level(space: Space, level: u32, max_level: u32) -> Result<Self, MeasureError> {
        Space::new(space.dim, space.side)?;
        if level > max_level {
            return Err(MeasureError::LevelOverflow { level, max: max_level });
        }
        let bits = level as u64 * space.dim as u64;
        if bits >= 63 || (1usize << bits) > MAX_CELLS {
            return Err(MeasureError::TooManyCells { level, dim: space.dim });
        }
        Ok(Self { space, level, max_level })
    }

    /// The one-cell partition of `[0, side]^dim`.
    pub fn trivial(space: Space) -> Result<Self, MeasureError> {
        Self::new(space, 0)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn side(&self) -> f64 {
        self.space.side
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    /// Cells per axis, `2^level`.
    pub fn per_axis(&self) -> usize {
        1usize << self.level
    }

    pub fn len(&self) -> usize {
        1usize << (self.level as usize * self.dim())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_width(&self) -> f64 {
        self.side() / self.per_axis() as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_width().powi(self.dim() as i32)
    }

    /// Per-axis indices of `cell`.
    pub fn multi_index(&self, cell: usize) -> Vec<usize> {
        let n = self.per_axis();
        let mut idx = vec![0; self.dim()];
        let mut rest = cell;
        for j in (0..self.dim()).rev() {
            idx[j] = rest % n;
            rest /= n;
        }
        idx
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let n = self.per_axis();
        multi.iter().fold(0, |acc, &i| acc * n + i)
    }

    /// Lower corner of `cell`, the representative point used for pairings.
    pub fn lower_corner(&self, cell: usize) -> Vec<f64> {
        let w = self.cell_width();
        self.multi_index(cell).into_iter().map(|i| i as f64 * w).collect()
    }

    /// `(lower, upper)` corners of `cell`.
    pub fn bounds(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let w = self.cell_width();
        let idx = self.multi_index(cell);
        let lo = idx.iter().map(|&i| i as f64 * w).collect();
        let hi = idx
            .iter()
            .map(|&i| if i + 1 == self.per_axis() { self.side() } else { (i + 1) as f64 * w })
            .collect();
        (lo, hi)
    }

    /// Index of the cell containing `x`.
    pub fn locate(&self, x: &[f64]) -> Result<usize, MeasureError> {
        if x.len() != self.dim() {
            return Err(MeasureError::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        if !self.space.contains(x) {
            return Err(MeasureError::OutsideSpace(x.to_vec()));
        }
        let n = self.per_axis();
        let scale = n as f64 / self.side();
        let multi: Vec<usize> = x.iter().map(|&v| ((v * scale).floor() as usize).min(n - 1)).collect();
        Ok(self.flat_index(&multi))
    }

    /// Snaps `x` to the lower corner of its cell.
    pub fn snap(&self, x: &[f64]) -> Result<Vec<f64>, MeasureError> {
        Ok(self.lower_corner(self.locate(x)?))
    }

    pub fn refine(&self) -> Result<Partition, MeasureError> {
        Partition::with_max_level(self.space, self.level + 1, self.max_level)
    }

    /// Cell of the next-coarser partition containing `cell`; `None` at level 0.
    pub fn parent_of(&self, cell: usize) -> Option<usize> {
        self.ancestor_at(cell, self.level.checked_sub(1)?)
    }

    /// Cell of the level-`level` partition containing `cell`.
    pub fn ancestor_at(&self, cell: usize, level: u32) -> Option<usize> {
        if level > self.level {
            return None;
        }
        let shift = self.level - level;
        let n = 1usize << level;
        Some(self.multi_index(cell).into_iter().fold(0, |acc, i| acc * n + (i >> shift)))
    }

    /// Indices of the `2^ℓ` children of `cell` in the refined partition.
    pub fn children_of(&self, cell: usize) -> Vec<usize> {
        let idx = self.multi_index(cell);
        let dim = self.dim();
        let n = self.per_axis() * 2;
        (0..1usize << dim)
            .map(|mask| {
                idx.iter()
                    .enumerate()
                    .fold(0, |acc, (j, &i)| acc * n + 2 * i + ((mask >> (dim - 1 - j)) & 1))
            })
            .collect()
    }

    /// True when every cell of `self` lies inside a cell of `coarse`.
    pub fn refines(&self, coarse: &Partition) -> bool {
        self.space == coarse.space && self.level >= coarse.level
    }

    /// True when `v` is a grid coordinate of this partition (or an end point).
    pub fn is_breakpoint(&self, v: f64) -> bool {
        if v <= 0.0 || v >= self.side() {
            return true;
        }
        let s = v / self.cell_width();
        (s - s.round()).abs() <= 1e-12 * s.max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, level: u32) -> Partition {
        Partition::new(Space::unit(dim), level).unwrap()
    }

    #[test]
    fn refine_one_dimensional() {
        let p = unit(1, 0).refine().unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.bounds(0), (vec![0.0], vec![0.5]));
        assert_eq!(p.bounds(1), (vec![0.5], vec![1.0]));
    }

    #[test]
    fn refine_two_dimensional_cell_count() {
        let p = unit(2, 1);
        assert_eq!(p.len(), 4);
        assert_eq!(p.refine().unwrap().len(), 16);
    }

    #[test]
    fn parent_index_arithmetic() {
        let p = unit(1, 3);
        assert_eq!(p.parent_of(5), Some(2));
        assert_eq!(unit(1, 0).parent_of(0), None);
    }

    #[test]
    fn children_map_back_to_parent() {
        for dim in 1..=3 {
            let p = unit(dim, 2);
            let fine = p.refine().unwrap();
            for cell in 0..p.len() {
                let kids = p.children_of(cell);
                assert_eq!(kids.len(), 1 << dim);
                for k in kids {
                    assert_eq!(fine.parent_of(k), Some(cell));
                }
            }
        }
    }

    #[test]
    fn level_overflow_is_an_error() {
        let p = Partition::with_max_level(Space::unit(1), 2, 2).unwrap();
        assert!(matches!(p.refine(), Err(MeasureError::LevelOverflow { level: 3, max: 2 })));
        assert!(Partition::new(Space::unit(1), 13).is_err());
    }

    #[test]
    fn locate_is_half_open_and_closed_at_side() {
        let p = unit(1, 2);
        assert_eq!(p.locate(&[0.25]).unwrap(), 1);
        assert_eq!(p.locate(&[0.2499]).unwrap(), 0);
        assert_eq!(p.locate(&[1.0]).unwrap(), 3);
        assert!(p.locate(&[1.5]).is_err());
        assert!(p.locate(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn lexicographic_order_first_axis_major() {
        let p = unit(2, 1);
        assert_eq!(p.lower_corner(1), vec![0.0, 0.5]);
        assert_eq!(p.lower_corner(2), vec![0.5, 0.0]);
    }
}
