use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn seedbank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedbank")).args(args).output().expect("binary runs")
}

fn run_config(dir: &Path, name: &str, text: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, text).unwrap();
    let out = dir.join(name);
    let mut args = vec!["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    seedbank(&args)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn counts_table_matches_switching_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "experiment = \"counts\"\nseed = 1\n[params]\nc = 1\nc_prime = 1\n[counts]\ntimes = [0, 1, 2]\n";
    let out = run_config(tmp.path(), "counts", text, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = fs::read_to_string(tmp.path().join("counts/counts.csv")).unwrap();
    assert!(header.starts_with("t,x,y,total,bound_lambda\n"));
    let rows = csv_rows(&tmp.path().join("counts/counts.csv"));
    // For c = c' = 1 the generator has eigenvalues (-1 ± √5)/2.
    let h = 5.0f64.sqrt() / 2.0;
    let x = |t: f64| (-t / 2.0).exp() * ((h * t).cosh() + (h * t).sinh() / (2.0 * h));
    let y = |t: f64| (-t / 2.0).exp() * (h * t).sinh() / h;
    assert_eq!(rows.len(), 3);
    for (row, t) in rows.iter().zip([0.0, 1.0, 2.0]) {
        assert!((row[1] - x(t)).abs() < 1e-10 && (row[2] - y(t)).abs() < 1e-10, "{row:?}");
    }
    assert!((rows[2][1] - 2.5016).abs() < 1e-4 && (rows[2][2] - 1.5217).abs() < 1e-4);
}

#[test]
fn bounds_reports_lambda_star() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config(tmp.path(), "bounds", "experiment = \"bounds\"\nseed = 1\n", &[]);
    assert!(out.status.success());
    let s = summary(&tmp.path().join("bounds"));
    assert_eq!(s["experiment"], "bounds");
    let l = s["headline_metrics"]["lambda_star"].as_f64().unwrap();
    assert!((l - 1.1118).abs() < 1e-4);
    assert!(s["wall_time"].as_f64().unwrap() >= 0.0);
}

#[test]
fn bounds_refuse_other_selection_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config(tmp.path(), "b", "experiment = \"bounds\"\nseed = 1\n[params]\ns = 2\n", &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn identical_configs_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (
            "spde",
            "experiment = \"spde\"\nseed = 9\n[params]\nnu = 1.0\n[lattice]\nx_min = -10\nx_max = 10\n[spde]\nhorizon = 1.0\nrecord_every = 40\n",
            vec!["snapshots.csv", "front.csv"],
        ),
        (
            "dual",
            "experiment = \"dual\"\nseed = 9\n[params]\nnu = 2.0\nm1 = 0.1\n[run]\nhorizon = 2.0\n",
            vec!["trace.csv", "particles.csv"],
        ),
        (
            "duality",
            "experiment = \"duality\"\nseed = 9\n[params]\ns = 0\nnu = 1\n[duality]\nhorizon = 0.2\nn_spde = 6\nn_dual = 300\n",
            vec!["report.json"],
        ),
    ];
    for (name, text, files) in cases {
        let a = run_config(tmp.path(), &format!("{name}_a"), text, &["--threads", "1"]);
        let b = run_config(tmp.path(), &format!("{name}_b"), text, &["--threads", "3"]);
        assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
        assert!(b.status.success());
        for f in files {
            let fa = fs::read(tmp.path().join(format!("{name}_a")).join(f)).unwrap();
            let fb = fs::read(tmp.path().join(format!("{name}_b")).join(f)).unwrap();
            assert!(!fa.is_empty());
            assert_eq!(fa, fb, "{name}/{f}");
        }
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "experiment = \"dual\"\nseed = 4\n[params]\nc = 2\n[run]\nhorizon = 1.0\n";
    assert!(run_config(tmp.path(), "first", text, &[]).status.success());
    let resolved = tmp.path().join("first/config.resolved");
    let echoed = fs::read_to_string(&resolved).unwrap();
    assert!(echoed.contains("eps") && echoed.contains("c_prime"));
    let again = tmp.path().join("again");
    let out = seedbank(&["run", resolved.to_str().unwrap(), "--output-dir", again.to_str().unwrap()]);
    assert!(out.status.success());
    for f in ["trace.csv", "particles.csv"] {
        assert_eq!(fs::read(tmp.path().join("first").join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "experiment = \"dual\"\nseed = 4\n[run]\nhorizon = 1.0\n";
    assert!(run_config(tmp.path(), "a", text, &[]).status.success());
    assert!(run_config(tmp.path(), "b", text, &["--seed", "5"]).status.success());
    let echoed = fs::read_to_string(tmp.path().join("b/config.resolved")).unwrap();
    assert!(echoed.contains("seed = 5"));
    assert_ne!(fs::read(tmp.path().join("a/trace.csv")).unwrap(), fs::read(tmp.path().join("b/trace.csv")).unwrap());
}

#[test]
fn bad_configs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_config(tmp.path(), "bad", "experiment = \"spde\"\nseed = 1\nfoo = 1\n", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `foo`"));
    let out = run_config(tmp.path(), "neg", "experiment = \"spde\"\nseed = 1\n[params]\nnu = -1\n", &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = seedbank(&["run", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn max_cdf_exit_code_follows_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "experiment = \"max-cdf\"\nseed = 2\n[max_cdf]\nhorizon = 0.5\nn_dual = 2000\n";
    let out = run_config(tmp.path(), "cdf", text, &[]);
    let s = summary(&tmp.path().join("cdf"));
    let pass = s["pass"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if pass { 0 } else { 2 }));
    let rows = csv_rows(&tmp.path().join("cdf/cdf.csv"));
    assert_eq!(rows.len(), 5);
    // A failed check (impossibly tight allowance with enough samples) exits with 2.
    let strict = "experiment = \"max-cdf\"\nseed = 2\n[max_cdf]\nhorizon = 0.5\nn_dual = 2000\nallowance = -1.0\n";
    assert_eq!(run_config(tmp.path(), "strict", strict, &[]).status.code(), Some(2));
}

#[test]
fn check_command() {
    let out = seedbank(&["check", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("[PASS]  1."));
    assert_eq!(seedbank(&["check", "bogus"]).status.code(), Some(1));
}
