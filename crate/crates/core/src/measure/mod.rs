//! Finite dyadic partitions of `[0, T]^ℓ`, measures on them, pairings
//! `c[f] = Σ_A f(x_A) c(A)` and the refinement/aggregation maps between
//! nested partitions.

mod partition;
mod reference;
mod test_function;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use partition::{Partition, Space, DEFAULT_MAX_LEVEL, MAX_CELLS};
pub use reference::{Density, InitialLaw, MuSpec};
pub use test_function::TestFunction;

use crate::catalog::CatalogError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("partition level {level} exceeds the configured maximum {max}")]
    LevelOverflow { level: u32, max: u32 },
    #[error("level {level} in dimension {dim} needs more cells than allowed")]
    TooManyCells { level: u32, dim: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("point {0:?} lies outside the space")]
    OutsideSpace(Vec<f64>),
    #[error("expected {expected} weights, found {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("weight {index} is not finite")]
    NonFinite { index: usize },
    #[error("partition of level {fine} does not refine partition of level {coarse}")]
    NotNested { fine: u32, coarse: u32 },
    #[error("cell {cell} out of range for {cells} cells")]
    CellOutOfRange { cell: usize, cells: usize },
    #[error("test function is not bounded by 1 (bound {0})")]
    Unbounded(f64),
    #[error("not a probability measure: {0}")]
    NotProbability(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("csv: {0}")]
    Csv(String),
}

/// Result of a pairing; `exact` is false when `f` is not constant on cells
/// and was sampled at the lower-corner representatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pairing {
    pub value: f64,
    pub exact: bool,
}

/// Signed measure on the cells of a dyadic partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDocument", into = "MeasureDocument")]
pub struct PartitionMeasure {
    partition: Partition,
    weights: Vec<f64>,
}

impl PartitionMeasure {
    pub fn new(partition: Partition, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if weights.len() != partition.len() {
            return Err(MeasureError::WeightCount { expected: partition.len(), found: weights.len() });
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
            return Err(MeasureError::NonFinite { index });
        }
        Ok(Self { partition, weights })
    }

    pub fn uniform(partition: Partition) -> Self {
        let n = partition.len();
        Self { partition, weights: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(partition: Partition, cell: usize) -> Result<Self, MeasureError> {
        let n = partition.len();
        if cell >= n {
            return Err(MeasureError::CellOutOfRange { cell, cells: n });
        }
        let mut weights = vec![0.0; n];
        weights[cell] = 1.0;
        Ok(Self { partition, weights })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Nonnegative weights summing to one within `tol`.
    pub fn is_probability(&self, tol: f64) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && (self.mass() - 1.0).abs() <= tol
    }

    pub fn check_probability(&self, tol: f64) -> Result<(), MeasureError> {
        if let Some(i) = self.weights.iter().position(|&w| w < 0.0) {
            return Err(MeasureError::NotProbability(format!("negative weight at cell {i}")));
        }
        let m = self.mass();
        if (m - 1.0).abs() > tol {
            return Err(MeasureError::NotProbability(format!("total mass {m}")));
        }
        Ok(())
    }

    /// `c[f] = Σ_A f(x_A) c(A)` with `x_A` the lower corner of `A`.
    pub fn pairing(&self, f: &TestFunction) -> Result<Pairing, MeasureError> {
        f.validate(self.partition.space())?;
        let value = (0..self.partition.len())
            .map(|cell| f.eval(&self.partition.lower_corner(cell), self.partition.space()) * self.weights[cell])
            .sum();
        Ok(Pairing { value, exact: f.is_measurable(&self.partition) })
    }

    /// Linear combination `α·self + β·other` on the same partition.
    pub fn combine(&self, alpha: f64, other: &PartitionMeasure, beta: f64) -> Result<Self, MeasureError> {
        if self.partition != other.partition {
            return Err(MeasureError::WeightCount { expected: self.weights.len(), found: other.weights.len() });
        }
        let weights = self.weights.iter().zip(&other.weights).map(|(a, b)| alpha * a + beta * b).collect();
        Self::new(self.partition.clone(), weights)
    }

    /// Pushes the measure forward to the coarser partition `coarse`.
    pub fn aggregate(&self, coarse: &Partition) -> Result<Self, MeasureError> {
        if !self.partition.refines(coarse) {
            return Err(MeasureError::NotNested { fine: self.partition.level(), coarse: coarse.level() });
        }
        let mut weights = vec![0.0; coarse.len()];
        for (cell, w) in self.weights.iter().enumerate() {
            let parent = self
                .partition
                .ancestor_at(cell, coarse.level())
                .expect("nested partitions always have an ancestor");
            weights[parent] += w;
        }
        Ok(Self { partition: coarse.clone(), weights })
    }

    /// Splits each cell's weight evenly over its descendants in `fine`.
    pub fn lift(&self, fine: &Partition) -> Result<Self, MeasureError> {
        if !fine.refines(&self.partition) {
            return Err(MeasureError::NotNested { fine: fine.level(), coarse: self.partition.level() });
        }
        let per = (1usize << ((fine.level() - self.partition.level()) as usize * fine.dim())) as f64;
        let weights = (0..fine.len())
            .map(|cell| {
                let parent = fine.ancestor_at(cell, self.partition.level()).expect("nested");
                self.weights[parent] / per
            })
            .collect();
        Ok(Self { partition: fine.clone(), weights })
    }

    /// Writes `x1..xℓ, weight` rows, one per cell, coordinates at lower corners.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MeasureError> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.partition.dim()).map(|j| format!("x{j}")).collect();
        header.push("weight".into());
        wtr.write_record(&header).map_err(|e| MeasureError::Csv(e.to_string()))?;
        for cell in 0..self.partition.len() {
            let mut row: Vec<String> =
                self.partition.lower_corner(cell).iter().map(|v| v.to_string()).collect();
            row.push(self.weights[cell].to_string());
            wtr.write_record(&row).map_err(|e| MeasureError::Csv(e.to_string()))?;
        }
        wtr.flush().map_err(|e| MeasureError::Csv(e.to_string()))
    }
}

/// Serialized form: cells are implied by `dim`, `side` and `level`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureDocument {
    pub dim: usize,
    pub side: f64,
    pub level: u32,
    pub weights: Vec<f64>,
}

impl TryFrom<MeasureDocument> for PartitionMeasure {
    type Error = MeasureError;

    fn try_from(doc: MeasureDocument) -> Result<Self, Self::Error> {
        let partition = Partition::new(Space::new(doc.dim, doc.side)?, doc.level)?;
        PartitionMeasure::new(partition, doc.weights)
    }
}

impl From<PartitionMeasure> for MeasureDocument {
    fn from(m: PartitionMeasure) -> Self {
        MeasureDocument {
            dim: m.partition.dim(),
            side: m.partition.side(),
            level: m.partition.level(),
            weights: m.weights,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::XFunction;
    use proptest::prelude::*;

    fn line(level: u32) -> Partition {
        Partition::new(Space::unit(1), level).unwrap()
    }

    #[test]
    fn total_mass_pairing() {
        let c = PartitionMeasure::uniform(line(1));
        let p = c.pairing(&TestFunction::one()).unwrap();
        assert_eq!(p.value, 1.0);
        assert!(p.exact);
    }

    #[test]
    fn point_mass_against_first_cell_indicator() {
        let c = PartitionMeasure::new(line(1), vec![1.0, 0.0]).unwrap();
        let f = TestFunction::lower_box(vec![0.5]);
        assert_eq!(c.pairing(&f).unwrap().value, 1.0);
    }

    #[test]
    fn coordinate_against_uniform_level_two() {
        let c = PartitionMeasure::uniform(line(2));
        let f = TestFunction::from_factor(XFunction::coordinate(1, 0));
        let p = c.pairing(&f).unwrap();
        // mean of the lower corners 0, .25, .5, .75
        assert!((p.value - 0.375).abs() < 1e-15);
        assert!(!p.exact);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let c = PartitionMeasure::uniform(line(1));
        let f = TestFunction::lower_box(vec![0.5, 0.5]);
        assert!(c.pairing(&f).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let fine = PartitionMeasure::new(line(2), vec![0.25; 4]).unwrap();
        assert_eq!(fine.aggregate(&line(1)).unwrap().weights(), &[0.5, 0.5]);
        let fine = PartitionMeasure::new(line(2), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let coarse = fine.aggregate(&line(1)).unwrap();
        assert!((coarse.weights()[0] - 0.3).abs() < 1e-15);
        assert!((coarse.weights()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn aggregate_rejects_non_nested() {
        let c = PartitionMeasure::uniform(line(1));
        assert!(matches!(c.aggregate(&line(2)), Err(MeasureError::NotNested { .. })));
    }

    #[test]
    fn document_round_trip_and_csv() {
        let c = PartitionMeasure::new(line(1), vec![0.25, 0.75]).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"dim":1,"side":1.0,"level":1,"weights":[0.25,0.75]}"#);
        assert_eq!(serde_json::from_str::<PartitionMeasure>(&json).unwrap(), c);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,weight\n0,0.25\n0.5,0.75\n");
    }

    fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, n)
    }

    proptest! {
        #[test]
        fn aggregate_preserves_mass(w in weights(16), coarse_level in 0u32..2) {
            let p = Partition::new(Space::unit(2), 2).unwrap();
            let c = PartitionMeasure::new(p, w).unwrap();
            let coarse = Partition::new(Space::unit(2), coarse_level).unwrap();
            let a = c.aggregate(&coarse).unwrap();
            prop_assert!((a.mass() - c.mass()).abs() <= 1e-14);
            prop_assert!((c.pairing(&TestFunction::one()).unwrap().value - c.mass()).abs() <= 1e-15);
        }

        #[test]
        fn lift_then_aggregate_is_identity(w in weights(4)) {
            let coarse = PartitionMeasure::new(line(2), w).unwrap();
            let back = coarse.lift(&line(5)).unwrap().aggregate(&line(2)).unwrap();
            for (a, b) in back.weights().iter().zip(coarse.weights()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn pairing_is_linear(a in weights(8), b in weights(8), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let p = line(3);
            let c1 = PartitionMeasure::new(p.clone(), a).unwrap();
            let c2 = PartitionMeasure::new(p, b).unwrap();
            let f = TestFunction::from_factor(XFunction::Cosine { wavenumber: vec![1.5], phase: 0.2 });
            let lhs = c1.combine(alpha, &c2, beta).unwrap().pairing(&f).unwrap().value;
            let rhs = alpha * c1.pairing(&f).unwrap().value + beta * c2.pairing(&f).unwrap().value;
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn cell_union_indicator_sums_weights(w in weights(8), k in 1usize..=8) {
            let c = PartitionMeasure::new(line(3), w.clone()).unwrap();
            let f = TestFunction::lower_box(vec![k as f64 / 8.0]);
            let p = c.pairing(&f).unwrap();
            prop_assert!(p.exact);
            prop_assert_eq!(p.value, w[..k].iter().sum::<f64>());
        }
    }
}
