//! The `dislocore` binary: exit codes, artifacts, schemas and determinism.

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dislocore"));
    c.env_remove("DISLOCORE_THREADS");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

/// Validates a JSON artifact against its shipped schema.
fn check_schema(artifact: &Path, schema: &str) -> Value {
    let inst: Value = serde_json::from_str(&std::fs::read_to_string(artifact).unwrap()).unwrap();
    let schema_path = repo_file(&format!("docs/schemas/{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(&inst).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{} against {schema}: {errors:?}", artifact.display());
    inst
}

fn csv_header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["-c", "no/such/file.cfg", "gamma"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no/such/file.cfg"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_the_key_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for (body, key) in [
        ("lattice.epsilon = 0.1\n", "lattice.epsilon"),
        ("lattice.eps = abc\n", "lattice.eps"),
        ("sweep.eps_list = 0.05, 0.1\n", "sweep.eps_list"),
        ("solver.mode = gradient_descent\n", "solver.mode"),
        ("potential.inter = table missing.csv\n", "missing.csv"),
    ] {
        let cfg = write_config(dir.path(), body);
        let o = run(&["-c", cfg.to_str().unwrap(), "pn"], dir.path());
        assert_eq!(o.status.code(), Some(1), "{body}");
        assert!(stderr(&o).contains(key), "{body}: {}", stderr(&o));
    }
    let o = run(&["--jobs", "0", "delta"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&[], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
    let v = run(&["--version"], dir.path());
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn solver_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lattice.eps = 0.1\nsolver.max_iter = 1\nsolver.tol = 1e-14\n");
    let o = run(&["-c", cfg.to_str().unwrap(), "relax"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("Newton"), "{}", stderr(&o));
}

#[test]
fn epsilon_validate_passes_with_the_reference_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["epsilon-validate", "--report", "eps.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS"), "{out}");
    let rep = check_schema(&dir.path().join("eps.json"), "epsilon");
    assert!((rep["eps"].as_f64().unwrap() - 0.0475).abs() <= 0.0005);
    assert_eq!(rep["pass"], Value::Bool(true));

    let cfg = write_config(dir.path(), "epsilon.c11 = 100\n");
    let o = run(&["-c", cfg.to_str().unwrap(), "epsilon-validate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn shipped_default_config_parses() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo_file("configs/default.cfg")).unwrap();
    let cfg = write_config(dir.path(), &text);
    let o = run(&["-c", cfg.to_str().unwrap(), "delta"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // output.dir resolves next to the config file
    check_schema(&dir.path().join("out/gap.json"), "gap");
}

#[test]
fn artifacts_have_headers_and_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "lattice.eps = 0.1\npn.grid = 512\n");
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["gamma"],
        vec!["pn"],
        vec!["relax", "--dump-grad", "grad.csv"],
        vec!["delta"],
        vec!["stability"],
    ] {
        let mut full = vec!["-c", c];
        full.extend(args.iter());
        let o = run(&full, d);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(csv_header(&d.join("gamma.csv")), ["phi", "gamma", "dgamma", "d2gamma"]);
    assert_eq!(csv_header(&d.join("profile.csv")), ["x", "phi", "dphi", "v_plus", "v_minus"]);
    assert_eq!(csv_header(&d.join("state.csv")), ["i", "u_plus", "u_minus", "u_perp"]);
    assert_eq!(csv_header(&d.join("grad.csv")), ["i", "g_plus", "g_minus"]);

    let g = check_schema(&d.join("gamma.json"), "gamma");
    assert!(g["validation"]["symmetry_violation"].as_f64().unwrap() <= 1e-12);
    let p = check_schema(&d.join("pn.json"), "pn");
    assert!(p["kappa"].as_f64().unwrap() > 0.0);
    let r = check_schema(&d.join("relax.json"), "relax");
    assert!(r["grad_norm"].as_f64().unwrap() <= 1e-10);
    let gap = check_schema(&d.join("gap.json"), "gap");
    assert!(gap["delta"].as_f64().unwrap() <= 1e-10);
    let s = check_schema(&d.join("stab.json"), "stab");
    assert!(s["lambda_min_atom"].as_f64().unwrap() > 0.0);

    // the relaxed disregistry is monotone and spans the slip
    let mut rdr = csv::Reader::from_path(d.join("state.csv")).unwrap();
    let perp: Vec<f64> = rdr.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert!(perp.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    assert!(perp[0].abs() < 1e-6 && (perp[perp.len() - 1] - 1.0).abs() < 1e-6);
}

#[test]
fn sweep_output_is_deterministic_across_thread_counts() {
    let body = "sweep.eps_list = 0.1, 0.05, 0.025\ndrift.samples = 4\n";
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), body);
        let o = bin()
            .args(["-c", cfg.to_str().unwrap(), "sweep", "--drift", "drift.csv"])
            .env("DISLOCORE_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let d = dir.path();
        assert_eq!(csv_header(&d.join("table.csv")), ["eps", "x_err", "e_gap", "consist"]);
        assert_eq!(
            csv_header(&d.join("drift.csv")),
            ["eps", "mean_abs_drift", "max_abs_drift", "max_ratio"]
        );
        check_schema(&d.join("sweep.json"), "sweep");
        let read = |f: &str| std::fs::read(d.join(f)).unwrap();
        outputs.push((read("table.csv"), read("sweep.json"), read("drift.csv")));
        // footer row carries the fitted slopes
        let table = String::from_utf8(read("table.csv")).unwrap();
        let footer: Vec<&str> = table.lines().last().unwrap().split(',').collect();
        assert_eq!(footer[0], "slope");
        for s in &footer[1..] {
            assert!(s.parse::<f64>().unwrap() >= 1.9, "{table}");
        }
    }
    assert!(outputs[0] == outputs[1], "outputs differ between 1 and 3 threads");

    // the --jobs flag is the same knob
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), body);
    let o = run(&["-c", cfg.to_str().unwrap(), "--jobs", "2", "sweep"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("table.csv")).unwrap(), outputs[0].0);
}
