//! A fixed regression suite: coefficient, initial law, driver and scheme
//! bundled under a name, covering every catalog family, both driver types
//! and one- and two-dimensional spaces.

use serde::{Deserialize, Serialize};

use crate::catalog::{CellMap, XFunction, YFunction};
use crate::coefficient::{sum_specs, CoefficientSpec, CoefficientSum};
use crate::driver::DriverConfig;
use crate::measure::{Density, InitialLaw, MuSpec, Partition, TestFunction};
use crate::solver::{checkpoint_indices, Scheme, SchemeKind, SolutionPath, Solver};
use crate::verification::{Arm, TestFamily, VerificationError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub coefficient: CoefficientSum,
    pub level: u32,
    pub mu: MuSpec,
    pub driver: DriverConfig,
    pub scheme: Scheme,
}

impl Scenario {
    pub fn partition(&self) -> Result<Partition, VerificationError> {
        Ok(Partition::new(self.coefficient.space(), self.level)?)
    }

    pub fn law(&self) -> Result<InitialLaw, VerificationError> {
        Ok(InitialLaw::new(&self.mu, &self.partition()?)?)
    }

    /// Checks coefficient, driver and the jump-size condition.
    pub fn validate(&self) -> Result<(), VerificationError> {
        self.coefficient.validate()?;
        self.driver.validate()?;
        self.driver.check_jump_size(
            self.coefficient.eps_dblprime(),
            self.coefficient.d(),
            self.coefficient.jump_margin(),
        )?;
        self.law()?;
        Ok(())
    }

    pub fn with_scheme(&self, kind: SchemeKind) -> Self {
        Self { scheme: Scheme { kind, ..self.scheme }, ..self.clone() }
    }

    pub fn arm(&self, family: &TestFamily) -> Result<Arm, VerificationError> {
        Arm::new(self.name.clone(), self.coefficient.clone(), self.law()?, self.scheme, 1, family)
    }

    /// Solves path `index` with checkpoints at `times`.
    pub fn solve(&self, index: u64, times: &[f64]) -> Result<SolutionPath, VerificationError> {
        let law = self.law()?;
        let kernel = self.coefficient.prepare(law.partition())?;
        let path = self.driver.sample(self.coefficient.d(), index)?;
        let cps = checkpoint_indices(&path, times, None);
        Ok(Solver::new(&kernel, self.scheme).solve(law.measure(), &path, &cps)?)
    }
}

fn unit_spec(dim: usize, d: usize) -> CoefficientSpec {
    CoefficientSpec {
        dim,
        side: 1.0,
        d,
        h: vec![TestFunction::one()],
        gbar: vec![YFunction::constant(0.0); d],
        gcheck: vec![XFunction::constant(0.0); d],
        v: CellMap::Identity,
        cutoff: Default::default(),
        eps_prime: 0.0,
        eps_dblprime: 1.0,
        jump_margin: 0.1,
    }
}

const STEPS: usize = 400;

/// Two cells, constant amplitude `γ`, `ǧ` the indicator of the upper half.
pub fn two_cell(gamma: f64, driver: DriverConfig) -> Scenario {
    let spec = CoefficientSpec {
        gbar: vec![YFunction::constant(gamma)],
        gcheck: vec![XFunction::Step { axis: 0, threshold: 0.5, below: 0.0, above: 1.0 }],
        eps_dblprime: gamma.abs().max(1e-3),
        ..unit_spec(1, 1)
    };
    Scenario {
        name: "two_cell".into(),
        coefficient: spec.into(),
        level: 1,
        mu: MuSpec::Uniform,
        driver,
        scheme: Scheme::linear(),
    }
}

/// The regression suite.
pub fn suite() -> Vec<Scenario> {
    let mut out = Vec::new();

    out.push(Scenario { name: "two_cell_brownian".into(), ..two_cell(0.1, DriverConfig::brownian(STEPS, 1.0, 101)) });

    out.push(Scenario {
        name: "monomial_cpoisson".into(),
        coefficient: CoefficientSpec {
            gbar: vec![YFunction::constant(0.4)],
            gcheck: vec![XFunction::Monomial { powers: vec![1] }],
            eps_dblprime: 0.4,
            ..unit_spec(1, 1)
        }
        .into(),
        level: 3,
        mu: MuSpec::Uniform,
        driver: DriverConfig::cpoisson(4.0, 0.8, STEPS, 1.0, 102),
        scheme: Scheme::linear(),
    });

    out.push(Scenario {
        name: "tanh_feedback_mixed".into(),
        coefficient: CoefficientSpec {
            h: vec![TestFunction::one(), TestFunction::lower_box(vec![0.5])],
            gbar: vec![YFunction::Tanh { scale: 0.3, index: 1, shift: 0.5 }],
            gcheck: vec![XFunction::Cosine { wavenumber: vec![1.0], phase: 0.0 }],
            eps_prime: 0.3,
            eps_dblprime: 0.3 * 2.0 * std::f64::consts::PI,
            ..unit_spec(1, 1)
        }
        .into(),
        level: 4,
        mu: MuSpec::Density { density: Density::Tilted { slopes: vec![0.5] } },
        driver: DriverConfig::mixed(3.0, 0.25, STEPS, 1.0, 103),
        scheme: Scheme::linear(),
    });

    out.push(Scenario {
        name: "plane_two_drivers".into(),
        coefficient: CoefficientSpec {
            gbar: vec![YFunction::constant(0.15), YFunction::constant(-0.2)],
            gcheck: vec![XFunction::Monomial { powers: vec![1, 0] }, XFunction::Monomial { powers: vec![0, 1] }],
            eps_dblprime: 0.2,
            ..unit_spec(2, 2)
        }
        .into(),
        level: 2,
        mu: MuSpec::Uniform,
        driver: DriverConfig::brownian(STEPS, 1.0, 104),
        scheme: Scheme::linear(),
    });

    out.push(Scenario {
        name: "clamped_bump_cpoisson".into(),
        coefficient: CoefficientSpec {
            h: vec![TestFunction::one(), TestFunction::monomial(vec![1])],
            gbar: vec![YFunction::AffineClamped { weights: vec![0.0, 1.0], offset: -0.5, lo: -0.3, hi: 0.3 }],
            gcheck: vec![XFunction::Bump { center: vec![0.3], width: 0.2 }],
            eps_prime: 1.0,
            eps_dblprime: 0.3 * 2.0,
            ..unit_spec(1, 1)
        }
        .into(),
        level: 3,
        mu: MuSpec::Weights { weights: vec![0.05, 0.1, 0.15, 0.2, 0.2, 0.15, 0.1, 0.05] },
        driver: DriverConfig::cpoisson(6.0, -0.9, STEPS, 1.0, 105),
        scheme: Scheme::linear(),
    });

    let term1 = CoefficientSpec {
        gbar: vec![YFunction::constant(0.2)],
        gcheck: vec![XFunction::Monomial { powers: vec![2, 0] }],
        eps_dblprime: 0.4,
        ..unit_spec(2, 1)
    };
    let term2 = CoefficientSpec {
        gbar: vec![YFunction::constant(0.1)],
        gcheck: vec![XFunction::Cosine { wavenumber: vec![0.0, 1.0], phase: 0.5 }],
        v: CellMap::CellSnap { level: 1 },
        eps_dblprime: 0.1 * 2.0 * std::f64::consts::PI,
        ..unit_spec(2, 1)
    };
    out.push(Scenario {
        name: "sum_of_terms_mixed".into(),
        coefficient: sum_specs(&[term1, term2]).expect("compatible terms"),
        level: 2,
        mu: MuSpec::Density { density: Density::Tilted { slopes: vec![0.3, -0.4] } },
        driver: DriverConfig::mixed(2.0, 0.5, STEPS, 1.0, 106),
        scheme: Scheme::linear(),
    });

    // amplitude large enough that the admissible scale kicks in on most paths
    out.push(Scenario {
        name: "scaled_brownian".into(),
        ..two_cell(4.0, DriverConfig::brownian(STEPS / 4, 1.0, 107))
    });

    out
}

pub fn by_name(name: &str) -> Option<Scenario> {
    suite().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_valid_and_named_uniquely() {
        let s = suite();
        assert!(s.len() >= 6);
        for sc in &s {
            sc.validate().unwrap_or_else(|e| panic!("{}: {e}", sc.name));
            sc.coefficient.estimate_constants(2000, 5).unwrap_or_else(|e| panic!("{}: {e}", sc.name));
        }
        let mut names: Vec<_> = s.iter().map(|x| x.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), s.len());
    }

    #[test]
    fn scenarios_round_trip_through_json() {
        for sc in suite() {
            let text = serde_json::to_string(&sc).unwrap();
            assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), sc);
        }
    }

    #[test]
    fn every_scenario_solves() {
        for sc in suite() {
            let sol = sc.solve(0, &[0.5, 1.0]).unwrap();
            assert!(sol.is_valid(), "{}", sc.name);
            assert!((sol.last().mass() - 1.0).abs() < 1e-12, "{}", sc.name);
        }
    }
}
