use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use downside_cli::manifest::sha256_hex;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(dir: &Path, threads: usize, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_downside"))
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_exit_codes_do_not_depend_on_threads() {
    let lgq = fixture("lgq.json");
    let merton = fixture("merton.json");
    for threads in [1, 4, 8] {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(code(&run(dir.path(), threads, &["check", path_str(&lgq)])), 0);
        let o = run(dir.path(), threads, &["check", path_str(&merton)]);
        assert_eq!(code(&o), 1);
        assert!(stderr(&o).contains("coercivity"), "{}", stderr(&o));
        assert!(dir.path().join("check.json").exists());
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"n\": 1,\n  \"m\": }").unwrap();
    let o = run(dir.path(), 1, &["check", path_str(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&run(dir.path(), 1, &["check", path_str(&missing)])), 2);

    let merton = fixture("merton.json");
    let o = run(dir.path(), 1, &["chi", path_str(&merton), "--points", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(">= 2"));

    assert_eq!(code(&run(dir.path(), 1, &["chi", path_str(&merton), "--gamma-max", "0.5"])), 2);
    assert_eq!(code(&run(dir.path(), 1, &["frobnicate"])), 2);
}

#[test]
fn manifest_hashes_match_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), 2, &["check", path_str(&fixture("lgq.json"))]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("check.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "check");
    assert_eq!(m["exit_code"], 0);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1);
    for out in outputs {
        let bytes = fs::read(out["path"].as_str().unwrap()).unwrap();
        assert_eq!(out["sha256"].as_str().unwrap(), sha256_hex(&bytes));
        assert_eq!(out["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
}

#[test]
fn failed_runs_still_write_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), 1, &["check", path_str(&fixture("merton.json"))]);
    assert_eq!(code(&o), 1);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("check.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["exit_code"], 1);
}

#[test]
fn lgq_pde_curve_hits_riccati_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        4,
        &["chi", path_str(&fixture("lgq.json")), "--gamma-min", "-4", "--gamma-max", "-0.25", "--points", "16"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("chi.csv")).unwrap();
    assert!(text.starts_with("# downside chi-curve v1\n# convexity_certified=true\n"));
    let row = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .find(|r| r[0].parse::<f64>().unwrap() == -1.0)
        .expect("gamma = -1 row");
    let chi: f64 = row[1].parse().unwrap();
    // p^2 - 6p - 1 = 0 at gamma = -1, so chi = (3 - sqrt 10) / 2
    assert!((chi - (3.0 - 10f64.sqrt()) / 2.0).abs() < 1e-6, "{chi}");
    assert_eq!(row[3], "pde");
    assert!(dir.path().join("chi.gp").exists());
}

fn rate_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn merton_oracle_rate_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        1,
        &["chi", path_str(&fixture("merton.json")), "--force-oracle", "--gamma-min", "-10", "--points", "400"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let chi = dir.path().join("chi.csv");
    let o = run(dir.path(), 1, &["rate", "--chi", path_str(&chi), "--kappa=-0.01,0.02,0.08"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = rate_rows(&dir.path().join("rate.csv"));
    assert_eq!(rows[0][2], "-inf");
    assert_eq!(rows[0][4], "kappa_negative");
    let i: f64 = rows[1][1].parse().unwrap();
    let g: f64 = rows[1][3].parse().unwrap();
    assert!((i - 0.005).abs() < 1e-6 && (g + 0.5).abs() < 1e-4, "I {i}, gamma {g}");
    assert_eq!(rows[1][4], "interior");
    assert_eq!(rows[2][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[2][4], "kappa_at_or_above_chi_prime_limit");
}

#[test]
fn uncertified_curve_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let chi = dir.path().join("bent.csv");
    fs::write(
        &chi,
        "gamma,chi,chi_prime,source\n-3,-0.05,0.01,pde\n-2,-0.02,0.02,pde\n-1,-0.015,0.03,pde\n",
    )
    .unwrap();
    let o = run(dir.path(), 1, &["rate", "--chi", path_str(&chi), "--kappa", "0.02"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("not certified"), "{}", stderr(&o));
}

#[test]
fn zero_strategy_probabilities_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let merton = fixture("merton.json");
    let o = run(
        dir.path(),
        4,
        &["simulate", path_str(&merton), "--strategy", "zero", "--kappa", "0.01", "--T", "5,10", "--paths", "500"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let slope = fs::read_to_string(dir.path().join("slope.csv")).unwrap();
    let row: Vec<&str> = slope.lines().last().unwrap().split(',').collect();
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);

    let o = run(
        dir.path(),
        4,
        &["simulate", path_str(&merton), "--strategy", "zero", "--kappa=-0.01", "--T", "5,10", "--paths", "500"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--tilted"), "{}", stderr(&o));
}

#[test]
fn simulate_is_byte_identical_across_thread_counts() {
    let merton = fixture("merton.json");
    let mut seen: Option<(Vec<u8>, Vec<u8>)> = None;
    for threads in [1, 4, 8] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(
            dir.path(),
            threads,
            &[
                "simulate",
                path_str(&merton),
                "--gamma=-0.5",
                "--kappa",
                "0.02",
                "--T",
                "5,10",
                "--paths",
                "1000",
                "--tilted",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let got = (
            fs::read(dir.path().join("sim.csv")).unwrap(),
            fs::read(dir.path().join("slope.csv")).unwrap(),
        );
        match &seen {
            None => seen = Some(got),
            Some(first) => assert!(first == &got, "outputs differ under {threads} threads"),
        }
    }
}

#[test]
fn validate_catches_a_corrupted_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = fixture("");
    let o = run(dir.path(), 1, &["validate", "--fixtures", path_str(&fixtures), "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lgq_riccati residual"), "{}", stderr(&o));
}

#[test]
fn validate_without_fixtures_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("nothing");
    fs::create_dir(&empty).unwrap();
    let o = run(dir.path(), 1, &["validate", "--fixtures", path_str(&empty)]);
    assert_eq!(code(&o), 2);
}
