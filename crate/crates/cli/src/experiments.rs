use mvsde::coefficient::CoefficientSpec;
use mvsde::ibp::identity_suite;
use mvsde::solver::{checkpoint_indices, density_at, solve_refined, SchemeKind, REFINE_TOLERANCE};
use mvsde::verification::{
    approximant, check_ineq1, check_ineq2, convergence_study, ensemble_diagnostics, for_each_path,
    martingale_zscores, KahanSum, Summary, TestFamily, VerificationReport,
};
use mvsde::{PartitionMeasure, Scenario, Solver, Space, YFunction};
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::Artifacts;
use crate::config::{Experiment, RunConfig};
use crate::{Check, CliError, Outcome};

/// Paths whose driver and terminal measure are written to `paths/`.
const PATH_FILES: u64 = 5;
/// Paths whose checkpoint weights go into `tables/checkpoints.csv`.
const TABLE_PATHS: usize = 1000;
const DENSITY_TOLERANCE: f64 = 1e-3;
const MASS_TOLERANCE: f64 = 1e-12;
const RECONCILIATION_TOLERANCE: f64 = 1e-10;

#[derive(Serialize)]
struct Report<'a> {
    version: &'static str,
    experiment: Experiment,
    config: &'a Value,
    seeds: Vec<u64>,
    passed: bool,
    checks: &'a [Check],
    results: Value,
}

/// Config as echoed into artifacts: everything that determines the numbers,
/// so the output directory and the thread count are left out.
fn echo(config: &RunConfig) -> Result<Value, CliError> {
    let mut v = serde_json::to_value(config).map_err(|e| CliError::Config(e.to_string()))?;
    if let Value::Object(m) = &mut v {
        m.remove("out");
        m.remove("threads");
        if config.experiment != Some(Experiment::IbpCheck) {
            m.insert("resolved".into(), to_value(&config.scenario()?));
        }
    }
    Ok(v)
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("report types serialise")
}

pub(crate) fn run(config: &RunConfig, experiment: Experiment) -> Result<Outcome, CliError> {
    let echo = echo(config)?;
    let art = Artifacts::create(&config.out, &echo.to_string(), config.seed)?;
    let (checks, results) = if experiment == Experiment::IbpCheck {
        ibp_check(config, &art)?
    } else {
        let sc = config.scenario()?;
        match experiment {
            Experiment::Simulate => simulate(config, &sc, &art)?,
            Experiment::Density => density(config, &sc, &art)?,
            Experiment::RefineConsistency => refine(config, &sc, &art)?,
            Experiment::Converge => converge(config, &sc, &art)?,
            Experiment::VerifyInequalities => inequalities(config, &sc, &echo, &art)?,
            Experiment::MartingaleTest => martingale(config, &sc, &art)?,
            Experiment::IbpCheck => unreachable!(),
        }
    };
    let passed = checks.iter().all(|c| c.pass);
    art.report(&Report {
        version: env!("CARGO_PKG_VERSION"),
        experiment,
        config: &echo,
        seeds: vec![config.seed],
        passed,
        checks: &checks,
        results,
    })?;
    Ok(Outcome { experiment, passed, checks })
}

type Run = (Vec<Check>, Value);

fn family(config: &RunConfig, space: Space) -> TestFamily {
    config.family.iter().fold(TestFamily::standard(space), |f, m| f.with(m.name.clone(), m.f.clone()))
}

fn single_term(sc: &Scenario) -> Result<&CoefficientSpec, CliError> {
    match sc.coefficient.terms() {
        [t] => Ok(t),
        _ => Err(CliError::Config("this experiment needs a single-term coefficient".into())),
    }
}

fn fmt(x: f64) -> String {
    x.to_string()
}

/// Same coefficient with every constant `ḡ_e` moved by `delta`.
pub fn shift_amplitude(spec: &CoefficientSpec, delta: f64) -> Result<CoefficientSpec, CliError> {
    let gbar = spec
        .gbar
        .iter()
        .map(|g| match g {
            YFunction::Constant { value } => Ok(YFunction::constant(value + delta)),
            other => Err(CliError::Config(format!("amplitude shift needs constant gbar, got {other:?}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoefficientSpec { gbar, ..spec.clone() })
}

fn write_path_files(sc: &Scenario, art: &Artifacts, n_paths: usize, times: &[f64]) -> Result<(), CliError> {
    let law = sc.law()?;
    let kernel = sc.coefficient.prepare(law.partition())?;
    let d = sc.coefficient.d();
    for i in 0..PATH_FILES.min(n_paths as u64) {
        let path = sc.driver.sample(d, i)?;
        path.write_csv(art.file(&format!("paths/driver_{i:04}.csv"))?)?;
        let cps = checkpoint_indices(&path, times, None);
        let sol = Solver::new(&kernel, sc.scheme).solve(law.measure(), &path, &cps)?;
        let terminal = PartitionMeasure::new(law.partition().clone(), sol.last().weights.clone())?;
        terminal.write_csv(art.file(&format!("paths/measure_{i:04}.csv"))?)?;
    }
    Ok(())
}

struct SimulatedPath {
    mass_error: f64,
    min_weight: f64,
    scaling_events: usize,
    invalid: bool,
    reconciliation: f64,
    jumps: usize,
    /// Per requested time: time, weights, log-factors and family pairings.
    at: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

fn simulate(config: &RunConfig, sc: &Scenario, art: &Artifacts) -> Result<Run, CliError> {
    let law = sc.law()?;
    let kernel = sc.coefficient.prepare(law.partition())?;
    let d = sc.coefficient.d();
    let times = config.checkpoint_times(sc.driver.horizon);
    let fam = family(config, law.partition().space()).project(&law)?;
    let paths = for_each_path(config.n_paths, |i| {
        let path = sc.driver.sample(d, i)?;
        let cps = checkpoint_indices(&path, &times, None);
        let sol = Solver::new(&kernel, sc.scheme).solve(law.measure(), &path, &cps)?;
        let at = times
            .iter()
            .filter_map(|&t| sol.at_time(t))
            .map(|c| (c.time, c.weights.clone(), c.log_factors.clone(), fam.values(&c.weights)))
            .collect();
        let diag = &sol.diagnostics;
        Ok(SimulatedPath {
            mass_error: diag.max_mass_error,
            min_weight: diag.min_weight,
            scaling_events: diag.scaling_events,
            invalid: diag.invalid_at.is_some(),
            reconciliation: sol.reconciliation_error(),
            jumps: path.jump_count(),
            at,
        })
    })?;

    art.table(
        "tables/diagnostics.csv",
        &["path", "max_mass_error", "min_weight", "scaling_events", "reconciliation_error", "jumps"],
        paths.iter().enumerate().map(|(i, p)| {
            [
                i.to_string(),
                fmt(p.mass_error),
                fmt(p.min_weight),
                p.scaling_events.to_string(),
                fmt(p.reconciliation),
                p.jumps.to_string(),
            ]
        }),
    )?;
    let mut rows = Vec::new();
    for (i, p) in paths.iter().enumerate().take(TABLE_PATHS) {
        for (t, w, l, _) in &p.at {
            for (cell, (w, l)) in w.iter().zip(l).enumerate() {
                rows.push([i.to_string(), fmt(*t), cell.to_string(), fmt(*w), fmt(*l)]);
            }
        }
    }
    art.table("tables/checkpoints.csv", &["path", "time", "cell", "weight", "log_factor"], rows)?;

    let mut pairings = Vec::new();
    for (j, name) in fam.names.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            let samples: Vec<f64> = paths.iter().filter_map(|p| p.at.get(ti)).map(|a| a.3[j]).collect();
            let s = Summary::of(&samples);
            pairings.push(json!({
                "function": name, "time": t, "mean": s.mean, "se": s.se, "mu_value": fam.mu_values[j],
            }));
        }
    }
    art.table(
        "tables/pairings.csv",
        &["function", "time", "mean", "se", "mu_value"],
        pairings.iter().map(|p| {
            [
                p["function"].as_str().unwrap_or_default().to_string(),
                p["time"].to_string(),
                p["mean"].to_string(),
                p["se"].to_string(),
                p["mu_value"].to_string(),
            ]
        }),
    )?;
    write_path_files(sc, art, config.n_paths, &times)?;

    let max = |f: fn(&SimulatedPath) -> f64| paths.iter().map(f).fold(0.0, f64::max);
    let mass = max(|p| p.mass_error);
    let min_weight = paths.iter().map(|p| p.min_weight).fold(f64::INFINITY, f64::min);
    let invalid = paths.iter().filter(|p| p.invalid).count();
    let rec = max(|p| p.reconciliation);
    let mut checks = Vec::new();
    if sc.scheme.kind == SchemeKind::Linear {
        checks.push(Check::at_most("mass_conservation", mass, MASS_TOLERANCE));
    }
    checks.push(Check { name: "positivity".into(), value: min_weight, tolerance: 0.0, pass: min_weight >= 0.0 && invalid == 0 });
    checks.push(Check::at_most("reconciliation", rec, RECONCILIATION_TOLERANCE));
    let results = json!({
        "n_paths": config.n_paths,
        "max_mass_error": mass,
        "min_weight": min_weight,
        "invalid_paths": invalid,
        "scaling_events": paths.iter().map(|p| p.scaling_events).sum::<usize>(),
        "max_reconciliation_error": rec,
        "total_jumps": paths.iter().map(|p| p.jumps).sum::<usize>(),
        "pairings": pairings,
    });
    Ok((checks, results))
}

/// `∫ p_t dμ` by the midpoint rule against `C_t(X)`, which is 1 under the
/// linear scheme.
fn density(config: &RunConfig, sc: &Scenario, art: &Artifacts) -> Result<Run, CliError> {
    let law = sc.law()?;
    let kernel = sc.coefficient.prepare(law.partition())?;
    let d = sc.coefficient.d();
    let times = config.checkpoint_times(sc.driver.horizon);
    let (points, masses) = law.midpoint_rule(config.density.per_axis)?;
    // the midpoint rule needs a multiple of the cells per axis
    let cells = law.partition().per_axis();
    let (report_points, _) = law.midpoint_rule(config.density.report_per_axis.max(1).div_ceil(cells) * cells)?;
    let per_path = for_each_path(config.n_paths, |i| {
        let path = sc.driver.sample(d, i)?;
        let cps = checkpoint_indices(&path, &times, None);
        let dp = density_at(&kernel, law.measure(), points.clone(), &path, sc.scheme, &cps)?;
        let rows: Vec<(f64, f64, f64)> = dp
            .times
            .iter()
            .zip(&dp.values)
            .map(|(&t, vals)| {
                let mut s = KahanSum::default();
                for (m, p) in masses.iter().zip(vals) {
                    s.add(m * p);
                }
                let mass = dp.solution.at_time(t).map(|c| c.mass()).unwrap_or(f64::NAN);
                (t, s.value(), mass)
            })
            .collect();
        let shown = if i < PATH_FILES {
            Some(density_at(&kernel, law.measure(), report_points.clone(), &path, sc.scheme, &cps)?)
        } else {
            None
        };
        Ok((rows, dp.flagged.len(), shown))
    })?;

    let linear = sc.scheme.kind == SchemeKind::Linear;
    let mut worst = 0.0f64;
    let mut flagged = 0;
    let mut rows = Vec::new();
    for (i, (r, f, _)) in per_path.iter().enumerate() {
        flagged += f;
        for &(t, integral, mass) in r {
            let target = if linear { 1.0 } else { mass };
            worst = worst.max((integral - target).abs());
            rows.push([i.to_string(), fmt(t), fmt(integral), fmt(mass)]);
        }
    }
    art.table("tables/density_integrals.csv", &["path", "time", "integral", "mass"], rows)?;
    let mut shown_rows = Vec::new();
    for (i, (_, _, shown)) in per_path.iter().enumerate() {
        if let Some(dp) = shown {
            for (t, vals) in dp.times.iter().zip(&dp.values) {
                for (x, p) in report_points.iter().zip(vals) {
                    let coords: Vec<String> = x.iter().map(|c| fmt(*c)).collect();
                    shown_rows.push([i.to_string(), fmt(*t), coords.join(" "), fmt(*p)]);
                }
            }
        }
    }
    art.table("tables/density_points.csv", &["path", "time", "x", "density"], shown_rows)?;
    write_path_files(sc, art, config.n_paths, &times)?;
    let checks = vec![
        Check::at_most("density_integral", worst, DENSITY_TOLERANCE),
        Check::at_most("negative_density_points", flagged as f64, 0.0),
    ];
    let results = json!({
        "n_paths": config.n_paths,
        "quadrature_per_axis": config.density.per_axis,
        "max_integral_error": worst,
        "flagged_points": flagged,
    });
    Ok((checks, results))
}

fn refine(config: &RunConfig, sc: &Scenario, art: &Artifacts) -> Result<Run, CliError> {
    let law = sc.law()?;
    let d = sc.coefficient.d();
    let times = config.checkpoint_times(sc.driver.horizon);
    let coarse = config.refine.coarse_level;
    let per_path = for_each_path(config.n_paths, |i| {
        let path = sc.driver.sample(d, i)?;
        let cps = checkpoint_indices(&path, &times, None);
        let r = solve_refined(&sc.coefficient, coarse, &law, &path, sc.scheme, &cps)?;
        Ok((r.max_discrepancy, r.first_divergent))
    })?;
    art.table(
        "tables/refine.csv",
        &["path", "max_discrepancy", "first_divergent"],
        per_path.iter().enumerate().map(|(i, (m, f))| {
            [i.to_string(), fmt(*m), f.map(|s| s.to_string()).unwrap_or_default()]
        }),
    )?;
    let worst = per_path.iter().map(|p| p.0).fold(0.0, f64::max);
    let divergent = per_path.iter().filter(|p| p.1.is_some()).count();
    let checks = vec![Check::at_most("refinement_discrepancy", worst, REFINE_TOLERANCE)];
    let results = json!({
        "coarse_level": coarse,
        "fine_level": sc.level,
        "max_discrepancy": worst,
        "divergent_paths": divergent,
    });
    Ok((checks, results))
}

fn converge(config: &RunConfig, sc: &Scenario, art: &Artifacts) -> Result<Run, CliError> {
    let target = single_term(sc)?;
    let law = sc.law()?;
    let fam = family(config, law.partition().space());
    let c = &config.converge;
    let table = convergence_study(
        target,
        c.n0,
        c.n1,
        &law,
        sc.scheme,
        &sc.driver,
        config.n_paths,
        config.a,
        config.a_prime,
        &fam,
        c.grid_per_axis,
    )?;
    art.table(
        "tables/convergence.csv",
        &["n", "snap_n", "snap_n1", "approximation_error", "seminorm", "se", "argmax", "factor", "bound", "within_bound"],
        table.rows.iter().map(|r| {
            [
                r.n.to_string(),
                r.snap.0.to_string(),
                r.snap.1.to_string(),
                fmt(r.approximation_error),
                fmt(r.seminorm.value),
                fmt(r.seminorm.se),
                r.seminorm.names[r.seminorm.argmax].clone(),
                fmt(r.factor),
                fmt(r.bound),
                r.within_bound.to_string(),
            ]
        }),
    )?;
    art.table(
        "tables/ratios.csv",
        &["from", "to", "ratio", "threshold", "paired_mean", "paired_se", "decreasing", "pass"],
        table.ratios.iter().map(|r| {
            [
                r.from.to_string(),
                r.to.to_string(),
                fmt(r.ratio),
                fmt(r.threshold),
                fmt(r.paired_mean),
                fmt(r.paired_se),
                r.decreasing.to_string(),
                r.pass.to_string(),
            ]
        }),
    )?;
    let mut checks: Vec<Check> = table
        .rows
        .iter()
        .map(|r| Check {
            name: format!("bound_n{}", r.n),
            value: r.seminorm.value,
            tolerance: r.bound,
            pass: r.within_bound,
        })
        .collect();
    checks.extend(table.ratios.iter().map(|r| Check {
        name: format!("ratio_{}_{}", r.from, r.to),
        value: r.ratio,
        tolerance: r.threshold,
        pass: r.pass && r.decreasing,
    }));
    Ok((checks, to_value(&table)))
}

fn inequalities(config: &RunConfig, sc: &Scenario, echo: &Value, art: &Artifacts) -> Result<Run, CliError> {
    let target = single_term(sc)?;
    let law = sc.law()?;
    let fam = family(config, law.partition().space());
    let q = &config.inequalities;
    let mut reports = Vec::new();
    for &(n, m) in &q.ineq1_pairs {
        let (prime, second) = (approximant(target, n), approximant(target, m));
        let mut r = check_ineq1(
            target,
            &prime,
            &second,
            &law,
            sc.scheme,
            &sc.driver,
            config.n_paths,
            config.a,
            config.a_prime,
            &fam,
            q.grid_per_axis,
        )?;
        r.name = format!("{} (n = {n}, m = {m})", r.name);
        reports.push(r);
    }
    let mut skipped = None;
    let constant_gbar = target.gbar.iter().all(|g| matches!(g, YFunction::Constant { .. }));
    if target.derivative_bound().is_some() && constant_gbar {
        for &delta in &q.ineq2_shifts {
            let second = shift_amplitude(target, delta)?;
            let mut r = check_ineq2(
                target,
                &second,
                &law,
                sc.scheme,
                &sc.driver,
                config.n_paths,
                config.a,
                config.a_prime,
                &fam,
                q.grid_per_axis,
            )?;
            r.name = format!("{} (shift {delta})", r.name);
            reports.push(r);
        }
    } else if !q.ineq2_shifts.is_empty() {
        skipped = Some("second inequality skipped: it needs constant gbar and gcheck with bounded mixed partials");
    }
    let times = config.checkpoint_times(sc.driver.horizon);
    let diagnostics = ensemble_diagnostics(&sc.arm(&fam)?, &sc.driver, config.n_paths, &times)?;
    art.table(
        "tables/inequalities.csv",
        &["name", "lhs", "lhs_se", "rhs", "factor", "applicable", "contraction", "critical_a_prime", "pass"],
        reports.iter().map(|r| {
            [
                r.name.clone(),
                fmt(r.lhs),
                fmt(r.lhs_se),
                fmt(r.rhs),
                fmt(r.factor),
                r.applicable.to_string(),
                r.contraction.to_string(),
                r.critical_a_prime.map(fmt).unwrap_or_default(),
                r.pass.to_string(),
            ]
        }),
    )?;
    let checks = reports
        .iter()
        .map(|r| Check { name: r.name.clone(), value: r.lhs, tolerance: r.rhs + 3.0 * r.lhs_se, pass: r.pass })
        .collect();
    let report = VerificationReport {
        family: fam.names(),
        seminorms: Vec::new(),
        inequalities: reports,
        zscores: Vec::new(),
        diagnostics: Some(diagnostics),
        config: echo.clone(),
        seeds: vec![config.seed],
    };
    let mut results = to_value(&report);
    if let (Some(note), Value::Object(m)) = (skipped, &mut results) {
        m.insert("note".into(), note.into());
    }
    Ok((checks, results))
}

fn martingale(config: &RunConfig, sc: &Scenario, art: &Artifacts) -> Result<Run, CliError> {
    let law = sc.law()?;
    let fam = family(config, law.partition().space());
    let times = config.checkpoint_times(sc.driver.horizon);
    let table = martingale_zscores(&sc.arm(&fam)?, &sc.driver, config.n_paths, &times)?;
    art.table(
        "tables/zscores.csv",
        &["function", "time", "mean", "se", "mu_value", "z", "exact", "pass"],
        table.entries.iter().map(|z| {
            [
                z.function.clone(),
                fmt(z.time),
                fmt(z.mean),
                fmt(z.se),
                fmt(z.mu_value),
                z.z.map(fmt).unwrap_or_default(),
                z.exact.to_string(),
                z.pass().to_string(),
            ]
        }),
    )?;
    let checks = vec![Check {
        name: "max_abs_z".into(),
        value: table.max_abs_z,
        tolerance: mvsde::verification::ZScore::THRESHOLD,
        pass: table.passed(),
    }];
    Ok((checks, to_value(&table)))
}

fn ibp_check(config: &RunConfig, art: &Artifacts) -> Result<Run, CliError> {
    let i = &config.ibp;
    let suite = identity_suite(config.seed, i.cases, i.nodes, i.refinement_nodes)?;
    art.table(
        "tables/ibp.csv",
        &["identity", "grid", "residual", "tolerance", "pass"],
        suite.iter().map(|c| [c.identity.clone(), c.grid.to_string(), fmt(c.residual), fmt(c.tolerance), c.pass.to_string()]),
    )?;
    let checks = suite
        .iter()
        .map(|c| Check { name: format!("{} ({})", c.identity, c.grid), value: c.residual, tolerance: c.tolerance, pass: c.pass })
        .collect();
    Ok((checks, to_value(&suite)))
}
