use oukl_cli::{parse_config, run_experiment, with_workers, RunConfig};
use std::process::Command;

fn oukl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_oukl")).args(args).output().expect("binary runs")
}

fn config(args: &[&str]) -> RunConfig {
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    parse_config(&args, None).unwrap()
}

#[test]
fn config_errors_exit_two() {
    let out = oukl(&["--Q", "1,2;3", "--B", "-1", "--experiment", "verify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed matrix"));
    let out = oukl(&["--preset", "isotropic2d", "--experiment", "verify", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = oukl(&["--preset", "isotropic2d", "--experiment", "nothing"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_scalar_preset_passes() {
    let out = oukl(&["--preset", "salogni1d", "--experiment", "verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap(), vec!["check_id", "value", "tolerance", "passed"]);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let value: f64 = rec[1].parse().unwrap();
        let tol: f64 = rec[2].parse().unwrap();
        assert!(value <= tol && &rec[3] == "1e0", "{rec:?}");
        rows += 1;
    }
    assert!(rows >= 15);
    assert!(text.contains("# preset = salogni1d"));
    assert!(!text.contains("runtime"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("runtime_seconds"));
}

#[test]
fn undersized_zones_report_disjointness_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cover.csv");
    let out = oukl(&[
        "--preset",
        "isotropic2d",
        "--experiment",
        "covering-sim",
        "--A",
        "0.01",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("assertion failed: DisjointnessViolated"), "{err}");
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.contains("# A_used = 0.01"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# kernel table\npreset = nonnormal2d\nexperiment = kernel-eval\nseed = 4\nt-max = 2\n").unwrap();
    let a = oukl(&["--config", cfg.to_str().unwrap()]);
    let b = oukl(&["--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let (a, b) = (String::from_utf8(a.stdout).unwrap(), String::from_utf8(b.stdout).unwrap());
    assert!(a.contains("# seed = 4") && b.contains("# seed = 5"));
    assert!(a.contains("# t-max = 2"));
    assert_ne!(a.lines().nth(1), b.lines().nth(1));
}

#[test]
fn enhanced_columns() {
    let c = config(&["--preset", "n2-nonnormal", "--experiment", "enhanced", "--resolution", "80"]);
    let o = run_experiment(&c).unwrap();
    assert_eq!(o.report.header, vec!["alpha", "measure", "alpha_scaled", "alpha_log_scaled"]);
    assert_eq!(o.report.rows.len(), 5);
    assert!(o.failures.is_empty(), "{:?}", o.failures);
}

#[test]
fn output_independent_of_worker_count() {
    for args in [
        &["--preset", "nonnormal2d", "--experiment", "kernel-eval", "--seed", "9"][..],
        &["--preset", "isotropic2d", "--experiment", "tube-measure", "--seed", "3"][..],
        &["--preset", "nonnormal2d", "--experiment", "sharpness"][..],
    ] {
        let c = config(args);
        let one = with_workers(1, || run_experiment(&c)).unwrap().report.to_bytes().unwrap();
        let eight = with_workers(8, || run_experiment(&c)).unwrap().report.to_bytes().unwrap();
        assert_eq!(one, eight, "{args:?}");
    }
}
