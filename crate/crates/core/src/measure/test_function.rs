use serde::{Deserialize, Serialize};

use super::{MeasureError, Partition, Space};
use crate::catalog::XFunction;

/// A product of catalog factors. The empty product is the constant `1`.
///
/// Products of test functions are again test functions: boxes intersect,
/// monomial exponents add and constants multiply, so the family generated
/// by lower boxes and coordinate monomials is closed under multiplication.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TestFunction {
    factors: Vec<XFunction>,
}

impl TestFunction {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn from_factor(f: XFunction) -> Self {
        Self { factors: vec![f] }
    }

    pub fn from_factors(factors: Vec<XFunction>) -> Self {
        Self { factors }
    }

    /// Indicator of `[0, b)` (closed at the far face).
    pub fn lower_box(b: Vec<f64>) -> Self {
        Self::from_factor(XFunction::lower_box(b))
    }

    pub fn monomial(powers: Vec<u32>) -> Self {
        Self::from_factor(XFunction::Monomial { powers })
    }

    pub fn factors(&self) -> &[XFunction] {
        &self.factors
    }

    pub fn is_one(&self) -> bool {
        self.factors
            .iter()
            .all(|f| matches!(f, XFunction::Constant { value } if *value == 1.0))
    }

    pub fn validate(&self, space: Space) -> Result<(), MeasureError> {
        for f in &self.factors {
            f.validate(space.dim)?;
        }
        let bound = self.sup_bound(space);
        if bound > 1.0 + 1e-12 {
            return Err(MeasureError::Unbounded(bound));
        }
        Ok(())
    }

    pub fn sup_bound(&self, space: Space) -> f64 {
        self.factors.iter().map(|f| f.sup_bound(space)).product()
    }

    pub fn eval(&self, x: &[f64], space: Space) -> f64 {
        let mut v = 1.0;
        for f in &self.factors {
            v *= f.eval(x, space);
            if v == 0.0 {
                break;
            }
        }
        v
    }

    pub fn is_measurable(&self, partition: &Partition) -> bool {
        self.factors.iter().all(|f| f.is_measurable(partition))
    }

    /// Pointwise product, normalised so boxes, monomials and constants
    /// collapse to a single factor each.
    pub fn product(&self, other: &TestFunction) -> TestFunction {
        let mut constant = 1.0;
        let mut boxed: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut powers: Option<Vec<u32>> = None;
        let mut rest = Vec::new();
        for f in self.factors.iter().chain(&other.factors) {
            match f {
                XFunction::Constant { value } => constant *= value,
                XFunction::Box { lo, hi } => {
                    let lo_full: Vec<f64> =
                        if lo.is_empty() { vec![0.0; hi.len()] } else { lo.clone() };
                    boxed = Some(match boxed {
                        None => (lo_full, hi.clone()),
                        Some((a, b)) => (
                            a.iter().zip(&lo_full).map(|(x, y)| x.max(*y)).collect(),
                            b.iter().zip(hi).map(|(x, y)| x.min(*y)).collect(),
                        ),
                    });
                }
                XFunction::Monomial { powers: p } => {
                    powers = Some(match powers {
                        None => p.clone(),
                        Some(q) => q.iter().zip(p).map(|(a, b)| a + b).collect(),
                    });
                }
                other => rest.push(other.clone()),
            }
        }
        let mut factors = Vec::new();
        if constant != 1.0 {
            factors.push(XFunction::Constant { value: constant });
        }
        if let Some((lo, hi)) = boxed {
            let lo = if lo.iter().all(|&v| v == 0.0) { Vec::new() } else { lo };
            factors.push(XFunction::Box { lo, hi });
        }
        if let Some(powers) = powers {
            if powers.iter().any(|&p| p > 0) {
                factors.push(XFunction::Monomial { powers });
            }
        }
        factors.extend(rest);
        TestFunction { factors }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn products_stay_in_the_catalog() {
        let a = TestFunction::lower_box(vec![0.75, 0.5]);
        let b = TestFunction::lower_box(vec![0.5, 1.0]);
        let m = TestFunction::monomial(vec![1, 0]);
        let p = a.product(&b).product(&m).product(&m);
        assert_eq!(
            p.factors(),
            &[XFunction::lower_box(vec![0.5, 0.5]), XFunction::Monomial { powers: vec![2, 0] }]
        );
    }

    #[test]
    fn unbounded_factor_rejected() {
        let f = TestFunction::from_factor(XFunction::constant(2.0));
        assert!(matches!(f.validate(Space::unit(1)), Err(MeasureError::Unbounded(_))));
    }

    #[test]
    fn serialises_as_factor_list() {
        let f = TestFunction::monomial(vec![1]);
        assert_eq!(serde_json::to_string(&f).unwrap(), r#"[{"name":"monomial","powers":[1]}]"#);
        assert_eq!(serde_json::to_string(&TestFunction::one()).unwrap(), "[]");
    }

    proptest! {
        #[test]
        fn product_is_pointwise(b1 in 0.0f64..1.0, b2 in 0.0f64..1.0, p in 0u32..3, q in 0u32..3,
                                x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let space = Space::unit(2);
            let f = TestFunction::lower_box(vec![b1, 1.0]).product(&TestFunction::monomial(vec![p, 0]));
            let g = TestFunction::lower_box(vec![1.0, b2]).product(&TestFunction::monomial(vec![0, q]));
            let fg = f.product(&g);
            let pt = [x, y];
            prop_assert!((fg.eval(&pt, space) - f.eval(&pt, space) * g.eval(&pt, space)).abs() < 1e-15);
        }
    }
}
