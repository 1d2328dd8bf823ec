use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mvsde(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsde")).args(args).arg("--out").arg(out).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn simulate_writes_report_tables_and_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = mvsde(&["simulate", "--scenario", "plane_two_drivers", "--paths", "20", "--seed", "3"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "simulate");
    assert_eq!(report["passed"], true);
    assert_eq!(report["seeds"][0], 3);
    assert_eq!(report["config"]["resolved"]["driver"]["seed"], 3);
    assert!(report["config"].get("out").is_none());
    let table = fs::read_to_string(out.join("tables/checkpoints.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("# mvsde "));
    assert!(lines.next().unwrap().starts_with("# config: {"));
    assert_eq!(lines.next().unwrap(), "# seed: 3");
    assert_eq!(lines.next().unwrap(), "path,time,cell,weight,log_factor");
    // 20 paths x 4 checkpoints x 16 cells
    assert_eq!(lines.count(), 20 * 4 * 16);
    for i in 0..5 {
        assert!(out.join(format!("paths/driver_{i:04}.csv")).exists());
        assert!(out.join(format!("paths/measure_{i:04}.csv")).exists());
    }
}

#[test]
fn bad_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "scenario = \"two_cell_brownian\"\nn_paths = 10\nmystery = 1\n");
    let o = mvsde(&["simulate", "--config", &cfg], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    let o = mvsde(&["simulate", "--scenario", "no_such_scenario"], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    let o = mvsde(&["martingale-test", "--scenario", "two_cell_brownian", "--paths", "10"], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_check_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    // large amplitude with the admissible scale switched off drives a cell negative
    let cfg = write(
        tmp.path(),
        "neg.toml",
        "scenario = \"scaled_brownian\"\nn_paths = 50\nscheme = { kind = \"linear\", jump_scaling = false }\n",
    );
    let out = tmp.path().join("neg");
    let o = mvsde(&["simulate", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stdout));
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"passed\": false"));
}

#[test]
fn run_uses_the_experiment_named_in_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "refine.toml",
        r#"
        experiment = "refine-consistency"
        n_paths = 10
        partition = { level = 3 }
        driver = { kind = "cpoisson", lambda = 2.0, beta = 0.5, steps = 100 }
        refine = { coarse_level = 1 }

        [[coefficient]]
        d = 1
        h = [[]]
        gbar = [{ name = "constant", value = 0.4 }]
        gcheck = [{ name = "monomial", powers = [1] }]
        v = { kind = "cell_snap", level = 1 }
        eps_prime = 0.0
        eps_dblprime = 0.4
        "#,
    );
    let out = tmp.path().join("r");
    let o = mvsde(&["run", "--config", &cfg], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("refine-consistency: passed"));
    assert!(out.join("tables/refine.csv").exists());
}

#[test]
fn describe_prints_constants_and_segment_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mvsde(&["describe", "verify-inequalities", "--scenario", "two_cell_brownian"], &tmp.path().join("d"));
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("contraction factor"));
    assert!(text.contains("segment plan"));
    assert!(!tmp.path().join("d").exists(), "describe must not write artifacts");
}

#[test]
fn ibp_check_runs_without_a_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ibp.toml", "[ibp]\nnodes = 129\ncases = 3\nrefinement_nodes = 33\n");
    let out = tmp.path().join("ibp");
    let o = mvsde(&["ibp-check", "--config", &cfg], &out);
    let table = fs::read_to_string(out.join("tables/ibp.csv")).unwrap();
    assert!(table.contains("identity,grid,residual,tolerance,pass"));
    // coarser grids than the defaults may miss the tolerances; the run itself must complete
    assert!(matches!(o.status.code(), Some(0) | Some(4)));
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let c = mvsde_cli::RunConfig::load(&p).unwrap();
            assert!(c.experiment.is_some(), "{}", p.display());
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 7);
}
