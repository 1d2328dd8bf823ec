use std::path::{Path, PathBuf};

use mvsde::coefficient::sum_specs;
use mvsde::verification::FamilyMember;
use mvsde::{CoefficientSpec, DriverConfig, MuSpec, Scenario, Scheme};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Density,
    RefineConsistency,
    Converge,
    VerifyInequalities,
    IbpCheck,
    MartingaleTest,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Density => "density",
            Experiment::RefineConsistency => "refine-consistency",
            Experiment::Converge => "converge",
            Experiment::VerifyInequalities => "verify-inequalities",
            Experiment::IbpCheck => "ibp-check",
            Experiment::MartingaleTest => "martingale-test",
        }
    }

    pub fn needs_driver(self) -> bool {
        self != Experiment::IbpCheck
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// Midpoint intervals per axis for `∫ p_t dμ`.
    pub per_axis: usize,
    /// Points per axis whose density paths are written out.
    pub report_per_axis: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { per_axis: 256, report_per_axis: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub coarse_level: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { coarse_level: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub n0: u32,
    pub n1: u32,
    pub grid_per_axis: usize,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self { n0: 2, n1: 6, grid_per_axis: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InequalityConfig {
    /// Snap levels `(n, m)` of the two approximants compared against the target.
    pub ineq1_pairs: Vec<(u32, u32)>,
    /// Constant shifts of `ḡ` for the second inequality.
    pub ineq2_shifts: Vec<f64>,
    pub grid_per_axis: usize,
}

impl Default for InequalityConfig {
    fn default() -> Self {
        Self { ineq1_pairs: vec![(2, 3), (3, 4), (4, 5)], ineq2_shifts: vec![0.01, 0.02, 0.04], grid_per_axis: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IbpConfig {
    pub nodes: usize,
    pub cases: usize,
    pub refinement_nodes: usize,
}

impl Default for IbpConfig {
    fn default() -> Self {
        Self { nodes: 513, cases: 20, refinement_nodes: 65 }
    }
}

fn default_paths() -> usize {
    100
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_a() -> f64 {
    0.4
}

fn default_a_prime() -> f64 {
    1.0
}

fn default_checkpoints() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

/// One experiment, fully determined by this document and the implementation version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    /// Name of a regression-suite scenario supplying every unset model field.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub coefficient: Vec<CoefficientSpec>,
    #[serde(default)]
    pub partition: Option<PartitionConfig>,
    #[serde(default)]
    pub mu: Option<MuSpec>,
    #[serde(default)]
    pub driver: Option<DriverConfig>,
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[serde(default)]
    pub threads: usize,
    /// Checkpoint times as fractions of the horizon.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    /// Extra members appended to the standard test family.
    #[serde(default)]
    pub family: Vec<FamilyMember>,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_a_prime")]
    pub a_prime: f64,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub converge: ConvergeConfig,
    #[serde(default)]
    pub inequalities: InequalityConfig,
    #[serde(default)]
    pub ibp: IbpConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolves the model: explicit fields override the named scenario, and the
    /// master seed always replaces the driver seed.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let base = match &self.scenario {
            Some(name) => Some(
                mvsde::scenario::by_name(name).ok_or_else(|| CliError::Config(format!("unknown scenario {name:?}")))?,
            ),
            None => None,
        };
        let coefficient = if self.coefficient.is_empty() {
            base.as_ref()
                .map(|b| b.coefficient.clone())
                .ok_or_else(|| CliError::Config("no coefficient and no scenario".into()))?
        } else {
            sum_specs(&self.coefficient).map_err(|e| CliError::Config(e.to_string()))?
        };
        let level = match (&self.partition, &base) {
            (Some(p), _) => p.level,
            (None, Some(b)) => b.level,
            (None, None) => return Err(CliError::Config("no partition level and no scenario".into())),
        };
        let mu = self.mu.clone().or_else(|| base.as_ref().map(|b| b.mu.clone())).unwrap_or(MuSpec::Uniform);
        let mut driver =
            self.driver.clone().or_else(|| base.as_ref().map(|b| b.driver.clone())).unwrap_or_default();
        driver.seed = self.seed;
        let scheme = self.scheme.or_else(|| base.as_ref().map(|b| b.scheme)).unwrap_or_else(Scheme::linear);
        let name = self.scenario.clone().unwrap_or_else(|| "custom".into());
        let sc = Scenario { name, coefficient, level, mu, driver, scheme };
        sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sc)
    }

    pub fn checkpoint_times(&self, horizon: f64) -> Vec<f64> {
        self.checkpoints.iter().map(|f| f * horizon).collect()
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n_paths == 0 {
            return bad("n_paths must be positive".into());
        }
        if !(self.a > 0.0 && self.a_prime > 0.0) {
            return bad(format!("a and a_prime must be positive, got {} and {}", self.a, self.a_prime));
        }
        if self.checkpoints.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("checkpoints are fractions of the horizon in [0, 1]".into());
        }
        if self.experiment == Some(Experiment::MartingaleTest) && self.n_paths < 100 {
            return bad(format!("martingale-test needs at least 100 paths, got {}", self.n_paths));
        }
        if self.experiment != Some(Experiment::IbpCheck) {
            self.scenario()?;
        }
        Ok(())
    }
}
