use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn miwols(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miwols"))
        .args(args)
        .current_dir(dir)
        .env_remove("MIWOLS_WORKERS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Rows of a CSV written by the CLI, skipping the provenance comment.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

const SMALL_CSV: &str = "y,z,c,x\n\
1.2,1,0,1\n0.4,0,1,\n2.2,1,1,0\n-0.3,0,0,1\n1.9,1,1,\n0.8,0,1,0\n1.1,1,0,\n0.2,0,0,1\n\
1.5,1,1,1\n0.1,0,0,0\n2.4,0,1,1\n0.9,1,0,0\n";

fn write_estimate_config(dir: &Path, extra: &str, x_name: &str) {
    fs::write(dir.join("data.csv"), SMALL_CSV).unwrap();
    fs::write(
        dir.join("est.toml"),
        format!(
            "input = \"data.csv\"\n{extra}\n\
             [columns]\noutcome = \"y\"\ntreatment = \"z\"\n\
             observed = [{{ name = \"c\" }}]\npartial = [{{ name = \"{x_name}\" }}]\n\
             [model]\ntreatment = [\"c\"]\ntreatment_free = [\"c\", \"x\", \"R_x\"]\n"
        ),
    )
    .unwrap();
}

#[test]
fn unknown_column_is_a_config_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    write_estimate_config(dir.path(), "", "weight");
    let o = miwols(&["estimate", "--config", "est.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("weight"));
}

#[test]
fn single_scheme_gives_one_row_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    write_estimate_config(dir.path(), "schemes = [\"UNW\"]", "x");
    let o = miwols(&["estimate", "--config", "est.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = dir.path().join("out/estimates.csv");
    let r = rows(&csv);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][0], "UNW");
    let first = fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert!(first.starts_with("# miwols estimate config_sha256="), "{first}");
    let md = fs::read_to_string(dir.path().join("out/estimates.md")).unwrap();
    assert!(md.starts_with("<!-- miwols estimate config_sha256="));
}

#[test]
fn all_methods_by_default() {
    let dir = tempfile::tempdir().unwrap();
    write_estimate_config(dir.path(), "", "x");
    let o = miwols(&["estimate", "--config", "est.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let methods: Vec<String> = rows(&dir.path().join("out/estimates.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(methods, ["ABS", "IPW", "SIPW", "UNW", "AIPW", "GEST"]);
}

#[test]
fn fitting_failure_exits_3_and_names_the_estimator() {
    let dir = tempfile::tempdir().unwrap();
    // Treatment is a deterministic function of c: the propensity model separates.
    let csv = "y,z,c,x\n1,1,1,1\n2,1,1,\n0.5,0,0,0\n1.5,0,0,1\n3,1,1,0\n0,0,0,\n";
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    fs::write(
        dir.path().join("est.toml"),
        "input = \"data.csv\"\nestimators = [\"MI-WOLS\"]\nschemes = [\"IPW\"]\n\
         [columns]\noutcome = \"y\"\ntreatment = \"z\"\nobserved = [{ name = \"c\" }]\npartial = [{ name = \"x\" }]\n\
         [model]\ntreatment = [\"c\"]\ntreatment_free = [\"x\", \"R_x\"]\n",
    )
    .unwrap();
    let o = miwols(&["estimate", "--config", "est.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("IPW"), "{}", stderr(&o));
}

#[test]
fn estimate_without_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = miwols(&["estimate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn balance_check_reports_each_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let o = miwols(&["balance-check", "--scheme", "ABS", "--scheme", "IPW", "--out", "b"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("ABS: max defect 0, balanced: yes"), "{out}");
    assert!(out.contains("IPW: max defect 0, balanced: yes"), "{out}");

    let o = miwols(&["balance-check", "--scheme", "SIPW", "--p-bar", "0.5", "--out", "b"], dir.path());
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("max defect 0, balanced: yes"), "{out}");

    let o = miwols(&["balance-check", "--scheme", "SIPW", "--p-bar", "0.73", "--out", "b"], dir.path());
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("max defect 0.46, balanced: no"), "{out}");
}

#[test]
fn balance_check_with_dataset_reports_weighted_differences() {
    let dir = tempfile::tempdir().unwrap();
    write_estimate_config(dir.path(), "", "x");
    let o = miwols(&["balance-check", "--config", "est.toml", "--out", "b"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&dir.path().join("b/balance_data.csv"));
    // Two treatment-model columns (intercept, c) for each of four schemes.
    assert_eq!(r.len(), 8);
    // The propensity score equations balance the model covariates under IPW.
    for row in r.iter().filter(|r| r[0] == "IPW") {
        assert!(row[2].parse::<f64>().unwrap().abs() < 1e-8, "{row:?}");
    }
}

#[test]
fn table1_needs_enough_replications() {
    let dir = tempfile::tempdir().unwrap();
    let o = miwols(&["replicate-table1", "--reps", "50", "--out", "t"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("100"));
}

#[test]
fn table1_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = miwols(&["replicate-table1", "--reps", "100", "--seed", "3", "--out", "t"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&dir.path().join("t/table1.csv"));
    assert_eq!(r.len(), 16 * 6);
    let md = fs::read_to_string(dir.path().join("t/table1.md")).unwrap();
    assert!(md.contains("100 replications"));
    let long = rows(&dir.path().join("t/replicates.csv"));
    assert!(long.len() > 16 * 6 * 95);
}

#[test]
fn simulate_reads_a_grid_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("grid.json"),
        r#"{"lambda": [0.0, 1.38], "delta_y": -4.2, "n": 300, "reps": 20, "base_seed": 4, "estimators": ["MI-WOLS", "GEST"], "schemes": ["ABS"]}"#,
    )
    .unwrap();
    let o = miwols(&["simulate", "--config", "grid.json", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&dir.path().join("s/metrics.csv"));
    assert_eq!(r.len(), 4);
    assert!(r.iter().all(|row| row[9] == "300" && row[13] == "20"));
    let head = fs::read_to_string(dir.path().join("s/metrics.csv")).unwrap();
    assert!(head.starts_with("# miwols simulate config_sha256=") && head.lines().next().unwrap().ends_with("seed=4"));
}

#[test]
fn unknown_grid_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("grid.toml"), "taux = 1.25\n").unwrap();
    let o = miwols(&["simulate", "--config", "grid.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("grid.toml"), "tau = [0.0, 1.25]\nn = 200\nreps = 30\n").unwrap();
    let a = miwols(&["simulate", "--config", "grid.toml", "--workers", "1", "--out", "a"], dir.path());
    let b = Command::new(env!("CARGO_BIN_EXE_miwols"))
        .args(["simulate", "--config", "grid.toml", "--out", "b"])
        .current_dir(dir.path())
        .env("MIWOLS_WORKERS", "3")
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    for f in ["metrics.csv", "metrics.md", "replicates.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exported_cohort_round_trips_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let o = miwols(&["replicate-table3", "--n", "50000", "--seed", "11", "--export-cohort", "--out", "c"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(rows(&dir.path().join("c/table3.csv")).len(), 22);
    let cfg = dir.path().join("c/estimate.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("input = \"cohort.csv\"", "input = \"cohort.csv\"\nschemes = [\"ABS\"]");
    fs::write(&cfg, text).unwrap();
    let o = miwols(&["estimate", "--config", "c/estimate.toml", "--out", "e"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&dir.path().join("e/estimates.csv"));
    assert_eq!(r.len(), 1);
    let (est, se): (f64, f64) = (r[0][4].parse().unwrap(), r[0][5].parse().unwrap());
    assert!((est - -0.6831).abs() < 3.0 * se, "{est} ({se})");
}
