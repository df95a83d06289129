use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cmpdak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmpdak")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn fit_hand_example_range_query() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "s.txt", "0\n2\n");
    let out = dir.path().join("out");
    let o = cmpdak(&[
        "fit", &input, "--kernel", "cmp", "--bandwidth", "fixed:1", "--prob-range", "0:0",
        "--output", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let p = r["queries"][0]["probability"].as_f64().unwrap();
    assert!((p - 0.5 * (1.0 + (-2.0f64).exp())).abs() < 1e-12);
    assert!((p - 0.56767).abs() < 5e-6);
    assert!(String::from_utf8_lossy(&o.stdout).contains("P(0 <= X <= 0) = 0.5677"));

    let csv = fs::read_to_string(out.join("pmf.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,prob"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[1].parse::<f64>().unwrap(), r["estimate"]["probs"][0].as_f64().unwrap());
}

#[test]
fn histogram_tail_beyond_max_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "s.csv", "count\n3\n5\n8\n");
    let out = dir.path().join("out");
    let o = cmpdak(&["fit", &input, "--kernel", "histogram", "--prob-tail-ge", "9", "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(report(&out)["queries"][0]["probability"].as_f64().unwrap(), 0.0);
}

#[test]
fn kl_fit_is_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "s.txt", "4\n7\n7\n9\n12\n15\n3\n");
    let out = dir.path().join("out");
    let o = cmpdak(&["fit", &input, "--bandwidth", "kl", "--prob-tail-ge", "0", "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    let r = report(&out);
    assert!((r["queries"][0]["probability"].as_f64().unwrap() - 1.0).abs() <= 1e-8);
    let probs: f64 = r["estimate"]["probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((probs + r["estimate"]["tail_mass"].as_f64().unwrap() - 1.0).abs() <= 1e-8);
    assert_eq!(r["bandwidth"]["method"], "kl");
}

#[test]
fn other_kernels_and_support() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "s.txt", "1\n2\n2\n6\n");
    for args in [
        vec!["--kernel", "triangular", "--bandwidth", "fixed:0.5", "--triangular-a", "3"],
        vec!["--kernel", "binomial", "--bandwidth", "fixed:0.2"],
        vec!["--kernel", "binomial", "--bandwidth", "kl"],
        vec!["--kernel", "cmp", "--bandwidth", "cv", "--support-max", "30"],
    ] {
        let mut all = vec!["fit", input.as_str(), "--json"];
        all.extend(args.iter());
        let o = cmpdak(&all);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!((r["total_mass"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn parse_errors_exit_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.txt", "1\n2\n-3\n");
    let o = cmpdak(&["fit", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let frac = write(dir.path(), "frac.txt", "1\n2.5\n");
    let o = cmpdak(&["fit", &frac]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let empty = write(dir.path(), "empty.txt", "\n");
    assert_eq!(cmpdak(&["fit", &empty]).status.code(), Some(2));

    let good = write(dir.path(), "good.txt", "1\n2\n");
    let o = cmpdak(&["fit", &good, "--bandwidth", "wide"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bandwidth"));
    assert_eq!(cmpdak(&["fit", &good, "--kernel", "triangular", "--bandwidth", "cv"]).status.code(), Some(2));
    assert_eq!(cmpdak(&["fit", &good, "--prob-range", "5:1"]).status.code(), Some(2));
    assert_eq!(cmpdak(&["fit", "/nonexistent/counts.txt"]).status.code(), Some(2));
}

#[test]
fn invalid_target_spec_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "t.json",
        r#"{"name":"x","components":[{"kind":"poisson","params":{"lambda":2},"weight":1},{"kind":"negative_binomial","params":{"mu":3,"r":0},"weight":1}]}"#,
    );
    let o = cmpdak(&["simulate", "--target", &spec, "--reps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("components[1].params"));
}

#[test]
fn simulate_point_mass_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "point-mass.json",
        r#"{"name":"point-mass","components":[{"kind":"point_mass","params":{"value":3},"weight":1}]}"#,
    );
    let o = cmpdak(&["simulate", "--target", &spec, "--estimators", "histogram", "--reps", "1", "--sizes", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "point-mass");
    assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn simulate_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = cmpdak(&[
        "simulate", "--target", "trimodal", "--sizes", "20", "--reps", "3", "--estimators",
        "histogram,cmp:0.5,binomial:0.1", "--output", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for f in ["summary.csv", "summary.json", "replications.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "target,estimator,n,ise_mean,ise_sd,tail_r_mean,tail_r_sd,divergent_pct,fit_ms_mean"
    );
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn tailprob_against_truth() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "s.txt", "8\n9\n10\n11\n12\n");
    let o = cmpdak(&["tailprob", &input, "--kernel", "histogram", "--level", "0.99", "--truth", "unimodal-poisson", "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["p_hat"].as_f64().unwrap(), 0.0);
    assert_eq!(r["relative_error"], "divergent");

    let ninety = "0\n".repeat(9) + "1\n";
    let input = write(dir.path(), "t.txt", &ninety);
    let truth = write(
        dir.path(),
        "truth.json",
        r#"{"name":"two-point","components":[{"kind":"point_mass","params":{"value":0},"weight":0.99},{"kind":"point_mass","params":{"value":1},"weight":0.01}]}"#,
    );
    let o = cmpdak(&["tailprob", &input, "--kernel", "histogram", "--threshold", "0", "--truth", &truth, "--json"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["p_hat"].as_f64().unwrap(), 0.1);
    assert!((r["relative_error"]["finite"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let o = cmpdak(&["tailprob", &input, "--kernel", "histogram", "--level", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn targets_listing() {
    let o = cmpdak(&["targets", "list"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 6);
    let o = cmpdak(&["targets", "show", "zero-inflated-poisson"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["components"][0]["kind"], "point_mass");
    assert_eq!(cmpdak(&["targets", "show", "nope"]).status.code(), Some(2));
}
