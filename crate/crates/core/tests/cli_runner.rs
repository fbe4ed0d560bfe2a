use std::path::{Path, PathBuf};
use std::process::Command;

use bosefield::cli_runner::{
    execute, load_result, report, selftest, to_csv, to_jsonl, write_run, Experiment, ExperimentConfig, LoadedResult,
    RESULT_SCHEMA,
};
use bosefield::meanfield_experiments::ResultRow;

const FREE_GAS: &str = r#"
name = "free"
kind = "free_gas"
seed = 5

[params]
d = 1
l = 1.0
kappa = 1.0
k = 4
eta = 0.1
nus = [0.8, 0.4]
n_steps = 8
n_samples = 16
"#;

const RIEMANN: &str = r#"
name = "riem"
kind = "riemann"

[params]
kappa = 1.0
nus = [0.01, 0.005]
cases = [{ case = "constant" }]
"#;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bosefield"))
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut count = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_path(&path, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(cfg.experiment.kind(), path.file_stem().unwrap().to_str().unwrap().trim_end_matches("_d1").trim_end_matches("_d2"));
        count += 1;
    }
    assert!(count >= 6);
}

#[test]
fn config_errors_name_the_key() {
    let missing = FREE_GAS.replace("nus = [0.8, 0.4]\n", "");
    assert_eq!(ExperimentConfig::from_toml(&missing, None).unwrap_err().key, "params.nus");
    let unknown = FREE_GAS.replace("kind = \"free_gas\"", "kind = \"nope\"");
    assert_eq!(ExperimentConfig::from_toml(&unknown, None).unwrap_err().key, "kind");
    let negative = FREE_GAS.replace("eta = 0.1", "eta = -0.1");
    assert_eq!(ExperimentConfig::from_toml(&negative, None).unwrap_err().key, "params.eta");
    let typed = FREE_GAS.replace("k = 4", "k = \"four\"");
    assert_eq!(ExperimentConfig::from_toml(&typed, None).unwrap_err().key, "params.k");
    let extra = FREE_GAS.replace("k = 4", "k = 4\nbogus = 1");
    assert!(ExperimentConfig::from_toml(&extra, None).is_err());
    let seeded = FREE_GAS.replace("k = 4", "k = 4\nseed = 3");
    assert_eq!(ExperimentConfig::from_toml(&seeded, None).unwrap_err().key, "params.seed");
}

#[test]
fn seed_override_and_hash() {
    let a = ExperimentConfig::from_toml(FREE_GAS, None).unwrap();
    let b = ExperimentConfig::from_toml(FREE_GAS, Some(9)).unwrap();
    assert_eq!(a.seed, 5);
    assert_eq!(b.seed, 9);
    assert_ne!(a.hash(), b.hash());
    let reformatted = FREE_GAS.replace("l = 1.0", "l = 1.00").replace("\n\n", "\n\n\n");
    assert_eq!(a.hash(), ExperimentConfig::from_toml(&reformatted, None).unwrap().hash());
    assert_eq!(a.hash().len(), 64);
    assert!(matches!(a.experiment, Experiment::FreeGas(_)));
}

#[test]
fn free_gas_rows_are_exactly_one() {
    let cfg = ExperimentConfig::from_toml(FREE_GAS, None).unwrap();
    let out = execute(&cfg, Some(2));
    assert!(out.errors.is_empty(), "{:?}", out.errors);
    assert_eq!(out.rows.len(), 2);
    for r in &out.rows {
        assert_eq!(r.quantity, "z_ratio");
        assert!((r.value_re - 1.0).abs() < 1e-10 && r.value_im.abs() < 1e-10);
    }
}

#[test]
fn output_is_independent_of_worker_count() {
    let text = std::fs::read_to_string(configs_dir().join("nu_sweep_d1.toml")).unwrap();
    let small = text
        .replace("n_quantum = 10000", "n_quantum = 64")
        .replace("n_classical = 100000", "n_classical = 256")
        .replace("nus = [0.8, 0.4, 0.2, 0.1]", "nus = [0.8, 0.4]");
    let cfg = ExperimentConfig::from_toml(&small, None).unwrap();
    let one = execute(&cfg, Some(1));
    let four = execute(&cfg, Some(4));
    assert!(one.errors.is_empty(), "{:?}", one.errors);
    assert_eq!(to_jsonl(&cfg, &one), to_jsonl(&cfg, &four));
    assert_eq!(to_csv(&one.rows), to_csv(&four.rows));
}

#[test]
fn jsonl_round_trips_and_rejects_foreign_schemas() {
    let cfg = ExperimentConfig::from_toml(RIEMANN, None).unwrap();
    let out = execute(&cfg, Some(1));
    let text = to_jsonl(&cfg, &out);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["schema"], RESULT_SCHEMA);
    let back = load_result(&text, "mem").unwrap();
    assert_eq!(back.rows, out.rows);
    assert_eq!(back.config_hash, cfg.hash());
    let foreign = text.replacen(RESULT_SCHEMA, "other.v0", 1);
    assert!(load_result(&foreign, "mem").unwrap_err().contains("schema mismatch"));
    assert!(load_result("", "mem").is_err());
}

fn loaded(kind: &str, name: &str, rows: Vec<ResultRow>) -> LoadedResult {
    LoadedResult {
        name: name.into(),
        kind: kind.into(),
        config_hash: "0123456789abcdef".into(),
        seed: 1,
        rows,
        notes: vec![],
        errors: vec![],
    }
}

fn gap(nu: f64, q: &str, v: f64) -> ResultRow {
    ResultRow::exact(Some(nu), None, q, v, 0.0)
}

#[test]
fn report_groups_by_kind_and_orders_gap_tables() {
    let a = loaded("riemann", "r1", vec![gap(0.1, "constant_gap", 0.05), gap(0.2, "constant_gap", 0.1)]);
    let b = loaded("counterterm", "c1", vec![gap(0.4, "gap_distance_to_limit", 0.3)]);
    let c = loaded("riemann", "r2", vec![gap(0.4, "constant_gap", 0.2)]);
    let single = report(std::slice::from_ref(&a));
    assert!(single.text.starts_with("== riemann ==\n-- r1 (config 0123456789ab, seed 1)\n"));
    let table = single.text.split("gap table (riemann)\n").nth(1).unwrap();
    let nus: Vec<&str> = table.lines().skip(1).filter(|l| !l.trim().is_empty()).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(nus, vec!["0.2", "0.1"]);

    let mixed = report(&[a.clone(), b, c]);
    let c_at = mixed.text.find("== counterterm ==").unwrap();
    let r_at = mixed.text.find("== riemann ==").unwrap();
    assert!(c_at < r_at);
    assert_eq!(mixed.text.matches("== riemann ==").count(), 1);
    let riemann_table = mixed.text.split("gap table (riemann)\n").nth(1).unwrap();
    let nus: Vec<&str> = riemann_table.lines().skip(1).take(3).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(nus, vec!["0.4", "0.2", "0.1"]);
    assert_eq!(mixed.csv.lines().count(), 1 + 4);
}

#[test]
fn write_run_creates_the_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(RIEMANN, None).unwrap();
    let out = execute(&cfg, None);
    let files = write_run(dir.path(), &cfg, &out).unwrap();
    for p in [&files.jsonl, &files.csv, &files.summary] {
        assert!(p.exists());
    }
    let csv = std::fs::read_to_string(&files.csv).unwrap();
    assert!(csv.starts_with("nu,eta,quantity,value_re,value_im,std_error,tail_bound,n_samples,seed\n"));
    let summary = std::fs::read_to_string(&files.summary).unwrap();
    assert!(summary.contains(&cfg.hash()));
}

#[test]
fn selftest_passes_and_rejects_unknown_modules() {
    let cases = selftest(None).unwrap();
    assert_eq!(cases.len(), 8);
    assert!(cases.iter().all(|c| c.passed), "{cases:?}");
    assert_eq!(selftest(Some("brownian")).unwrap().len(), 1);
    assert_eq!(selftest(Some("nope")).unwrap_err().key, "module");
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("free.toml");
    std::fs::write(&good, FREE_GAS).unwrap();
    let status = bin().args(["--out-dir"]).arg(dir.path()).arg("run").arg(&good).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("free.jsonl").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, FREE_GAS.replace("eta = 0.1", "eta = 0.0")).unwrap();
    let out = bin().arg("--out-dir").arg(dir.path()).arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.eta"));

    let stalled = dir.path().join("stall.toml");
    let text = std::fs::read_to_string(configs_dir().join("counterterm.toml")).unwrap();
    std::fs::write(&stalled, text.replace("n = 159", "n = 19").replace("max_iter = 500", "max_iter = 1")).unwrap();
    let status = bin().arg("--out-dir").arg(dir.path()).arg("run").arg(&stalled).status().unwrap();
    assert_eq!(status.code(), Some(3));

    let out = bin().arg("report").arg(dir.path().join("free.jsonl")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("== free_gas =="));

    let seeded = bin().env("BOSEFIELD_SEED", "77").arg("--out-dir").arg(dir.path()).arg("run").arg(&good).status().unwrap();
    assert_eq!(seeded.code(), Some(0));
    let back = load_result(&std::fs::read_to_string(dir.path().join("free.jsonl")).unwrap(), "free").unwrap();
    assert_eq!(back.seed, 77);

    assert_eq!(bin().args(["selftest", "torus_spectral"]).status().unwrap().code(), Some(0));
    assert_eq!(bin().args(["selftest", "nope"]).status().unwrap().code(), Some(2));
}
