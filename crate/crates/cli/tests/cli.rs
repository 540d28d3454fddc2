use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gkp-diqkd"));
    c.env_remove("GKP_DIQKD_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

/// Header and data rows of a CSV file, skipping `#` lines.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn keyrate_table_has_fixed_schema_and_monotone_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.csv");
    let o = run(&["keyrate", "--sq-db", "3:13:0.5", "--delta-rule", "kappa", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["sq_db", "kappa", "delta_eff", "S", "P_e", "QBER", "chi", "rate", "rate_floored"]);
    assert_eq!(rows.len(), 21);
    let rate = column(&header, &rows, "rate_floored");
    assert!(rate.windows(2).all(|w| w[1] >= w[0]));
    // Twelve significant digits.
    assert!(rows[0].iter().all(|c| c.split('e').next().unwrap().trim_start_matches('-').len() == 13));
}

#[test]
fn distance_at_zero_matches_keyrate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.csv");
    let k = dir.path().join("k.csv");
    assert!(run(&["distance", "--sq-db", "12", "--loss-db-per-km", "0.2", "--km", "0:5:0.1", "--out", d.to_str().unwrap()]).status.success());
    assert!(run(&["keyrate", "--sq-db", "12", "--out", k.to_str().unwrap()]).status.success());
    let (dh, dr) = read_csv(&d);
    let (kh, kr) = read_csv(&k);
    assert_eq!(dh, ["distance_km", "eta", "S", "QBER", "rate_floored"]);
    assert_eq!(dr.len(), 51);
    let at_zero = column(&dh, &dr, "rate_floored")[0];
    let keyrate = column(&kh, &kr, "rate_floored")[0];
    assert!((at_zero - keyrate).abs() <= 1e-9);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = run(&["simulate", "--pairs", "1000000", "--sq-db", "10", "--seed", "42", "--format", "json", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["provenance"]["seed"], 42);
    assert_eq!(v["rows"][0]["n_pairs"], 1_000_000);
}

#[test]
fn sequential_flag_gives_the_same_bytes() {
    let par = run(&["keyrate", "--sq-db", "4:8:1"]);
    let seq = run(&["keyrate", "--sq-db", "4:8:1", "--sequential"]);
    assert!(par.status.success() && seq.status.success());
    assert_eq!(par.stdout, seq.stdout);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().env("GKP_DIQKD_OUT_DIR", dir.path()).args(["chsh", "--sq-db", "10", "--format", "json"]).output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("chsh.json")).unwrap()).unwrap();
    assert_eq!(v["provenance"]["command"], "chsh");
    assert_eq!(v["provenance"]["truncation_tolerance"], 1e-12);
    assert!(v["rows"][0]["s"].as_f64().unwrap() > 2.8);
}

#[test]
fn provenance_lines_lead_the_csv() {
    let o = run(&["chsh", "--sq-db", "9", "--tolerance", "1e-10"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let first: Vec<&str> = text.lines().take(2).collect();
    assert!(first.iter().all(|l| l.starts_with('#')));
    assert!(first[1].contains("\"truncation_tolerance\":1e-10"));
}

#[test]
fn invalid_flags_fail_with_usage() {
    let o = run(&["keyrate", "--no-such-flag"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["keyrate", "--sq-db", "5:1:0.5"]);
    assert!(!o.status.success());
    let o = run(&["keyrate", "--sq-db", "5", "--delta-rule", "fixed"]);
    assert!(!o.status.success());
}

#[test]
fn numerical_failures_exit_nonzero_with_diagnostics() {
    // Too few pairs for every CHSH setting to appear.
    let o = run(&["simulate", "--pairs", "3", "--sq-db", "10", "--seed", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no test rounds"));
}

#[test]
fn validate_passes_at_eight_db() {
    let o = run(&["validate", "--sq-db", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}
