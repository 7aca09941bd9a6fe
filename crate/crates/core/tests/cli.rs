use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::JSONSchema;
use serde_json::Value;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn config(name: &str) -> PathBuf {
    crate_dir().join("configs").join(name)
}

fn maxslope(cmd: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxslope"))
        .args([cmd, "--quiet", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn maxslope")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_valid(json_path: &Path, schema_name: &str) -> Value {
    let schema: Value = serde_json::from_str(
        &fs::read_to_string(crate_dir().join("schemas").join(schema_name)).unwrap(),
    )
    .unwrap();
    let compiled = JSONSchema::compile(&schema).expect("schema compiles");
    let doc: Value = serde_json::from_str(&fs::read_to_string(json_path).unwrap()).unwrap();
    if let Err(errors) = compiled.validate(&doc) {
        let msgs: Vec<String> = errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect();
        panic!("{} violates {schema_name}: {msgs:#?}", json_path.display());
    }
    doc
}

/// Write a modified copy of a shipped config.
fn patched(name: &str, dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(config(name)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn run_writes_one_row_per_node() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope("run", &config("quadratic_run.json"), tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    // header + N + 1 rows with N = 10
    assert_eq!(csv.lines().count(), 1 + 11);
    assert!(tmp.path().join("interpolant.csv").exists());
    let report = assert_valid(
        &tmp.path().join("dissipation.json"),
        "dissipation.schema.json",
    );
    assert_eq!(report["steps"], 10);
    assert!(report["dissipation"]["max_abs_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn missing_tau_is_a_config_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = patched("quadratic_run.json", tmp.path(), |v| {
        v["run"].as_object_mut().unwrap().remove("tau");
    });
    let o = maxslope("run", &cfg, tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tau"), "{}", stderr(&o));
}

#[test]
fn oversized_wiggly_step_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope("run", &config("wiggly_bad_step.json"), tmp.path());
    assert_eq!(code(&o), 1);
    let msg = stderr(&o);
    assert!(msg.contains("tau*/8"), "{msg}");
    assert!(!tmp.path().join("trajectory.csv").exists());
}

#[test]
fn wrong_subcommand_for_payload() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope("sweep", &config("quadratic_run.json"), tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn four_level_sweep_writes_four_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope("sweep", &config("quadratic_sweep.json"), tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tables = fs::read_dir(tmp.path())
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().into_string().unwrap();
            name.starts_with("level_") && name.ends_with(".csv")
        })
        .count();
    assert_eq!(tables, 4);
    let report = assert_valid(
        &tmp.path().join("sweep_report.json"),
        "sweep_report.schema.json",
    );
    assert_eq!(
        report["pairwise_sup_distances"].as_array().unwrap().len(),
        3
    );
    let table = fs::read_to_string(tmp.path().join("regime_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn pinning_sweep_settles_near_the_start() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope("sweep", &config("wiggly_pinning_sweep.json"), tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = assert_valid(
        &tmp.path().join("sweep_report.json"),
        "sweep_report.schema.json",
    );
    assert_eq!(report["cauchy_flag"], true);
    let finest = report["levels"].as_array().unwrap().last().unwrap().clone();
    let x = finest["final_point"][0].as_f64().unwrap();
    assert!((x - 0.5).abs() < 0.05, "finest level ended at {x}");
}

#[test]
fn empty_level_list_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = patched("quadratic_sweep.json", tmp.path(), |v| {
        v["sweep"]["levels"] = Value::Array(vec![]);
    });
    let o = maxslope("sweep", &cfg, tmp.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn slope_cone_holds_for_quadratic() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope(
        "check",
        &config("check_slope_cone_quadratic.json"),
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = assert_valid(
        &tmp.path().join("slope_cone_report.json"),
        "slope_cone_report.schema.json",
    );
    assert_eq!(r["residuals"].as_array().unwrap().len(), 1000);
}

#[test]
fn slope_cone_fails_at_a_wiggly_trap_with_witness() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope(
        "check",
        &config("check_slope_cone_wiggly_trap.json"),
        tmp.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let r = assert_valid(
        &tmp.path().join("slope_cone_report.json"),
        "slope_cone_report.schema.json",
    );
    assert_eq!(r["holds"], false);
    assert!(r["witness"].is_array());
    assert!(r["min_residual"].as_f64().unwrap() < -1e-3);
}

#[test]
fn dissipation_check_passes_on_quadratic() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxslope("check", &config("check_dissipation.json"), tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = assert_valid(
        &tmp.path().join("dissipation_report.json"),
        "dissipation_report.schema.json",
    );
    assert!(r["summary"]["max_abs_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn remaining_checks_emit_valid_reports() {
    let cases = [
        ("check_apriori.json", "apriori_report", 0),
        ("check_condition_h_convex.json", "condition_h_report", 0),
        ("check_condition_h_wiggly.json", "condition_h_report", 3),
        ("check_maximal_slope.json", "maximal_slope_report", 0),
    ];
    for (cfg, report, expected) in cases {
        let tmp = tempfile::tempdir().unwrap();
        let o = maxslope("check", &config(cfg), tmp.path());
        assert_eq!(code(&o), expected, "{cfg}: {}", stderr(&o));
        assert_valid(
            &tmp.path().join(format!("{report}.json")),
            &format!("{report}.schema.json"),
        );
    }
}

#[test]
fn reruns_are_byte_identical() {
    let runs = [
        ("run", "quadratic_run.json"),
        ("sweep", "quadratic_sweep.json"),
        ("check", "check_slope_cone_quadratic.json"),
    ];
    for (cmd, cfg) in runs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(code(&maxslope(cmd, &config(cfg), a.path())), 0);
        assert_eq!(code(&maxslope(cmd, &config(cfg), b.path())), 0);
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let x = fs::read(a.path().join(&name)).unwrap();
            let y = fs::read(b.path().join(&name)).unwrap();
            assert!(x == y, "{cfg}: {name:?} differs between runs");
        }
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("quadratic_sweep.json");
    for (dir, threads) in [(a.path(), "1"), (b.path(), "4")] {
        let o = Command::new(env!("CARGO_BIN_EXE_maxslope"))
            .args(["sweep", "--quiet", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir)
            .env("MAXSLOPE_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
    }
    for name in [
        "sweep_report.json",
        "regime_table.csv",
        "level_03_trajectory.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
