use std::fs;
use std::process::{Command, Output};

use igabem::report::{parse_report, CSV_HEADER};
use igabem::trace::{parse_trace, parse_triplets, triplets_to_matrix};

fn igabem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igabem"))
        .arg("run")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn report_on_stdout() {
    let o = igabem(&["--geometry", "slit", "--p", "1", "--max-dofs", "60", "--no-timing"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == CSV_HEADER));
    let parsed = parse_report(&text).unwrap();
    let config = parsed.config.unwrap();
    assert_eq!(config.p, 1);
    assert!(!config.timing);
    assert!(parsed.rows.len() > 2);
    assert!(parsed.rows.iter().all(|r| r.seconds == 0.0));
    assert!(parsed.rows.iter().all(|r| r.energy_error.is_some()));
    assert!(parsed.fit.is_some());
}

#[test]
fn timing_off_is_deterministic() {
    let args = ["--geometry", "square", "--p", "0", "--max-dofs", "80", "--no-timing"];
    assert_eq!(stdout(&igabem(&args)), stdout(&igabem(&args)));
}

#[test]
fn dumps_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (out, mesh, ind, mat) = (path("r.csv"), path("m.txt"), path("i.csv"), path("a.txt"));
    let o = igabem(&[
        "--geometry", "pacman", "--p", "1", "--max-iters", "4", "--no-timing",
        "--out", &out, "--dump-mesh", &mesh, "--dump-indicators", &ind, "--dump-matrix", &mat,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout(&o);
    assert!(summary.contains("4 iterations"), "{summary}");
    assert!(summary.lines().any(|l| l.starts_with("fit s=")), "{summary}");

    let report = parse_report(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 4);
    let last = report.rows.last().unwrap();

    let traces = parse_trace(&fs::read_to_string(&mesh).unwrap()).unwrap();
    assert_eq!(traces.len(), 4);

    let indicators = fs::read_to_string(&ind).unwrap();
    assert_eq!(indicators.lines().next(), Some("iter,node_param,mu2,eta2"));
    let last_rows = indicators.lines().filter(|l| l.starts_with("3,")).count();
    assert!(last_rows > 0);

    let triplets = parse_triplets(&fs::read_to_string(&mat).unwrap()).unwrap();
    let a = triplets_to_matrix(&triplets).unwrap();
    assert_eq!(a.nrows(), last.dofs);
    assert!((&a - a.transpose()).amax() <= 1e-12 * a.amax());
    assert!(a.diagonal().iter().all(|&d| d > 0.0));
}

#[test]
fn config_errors_exit_2() {
    let cases: [&[&str]; 5] = [
        &["--geometry", "slit", "--p", "1", "--theta", "0"],
        &["--geometry", "slit", "--p", "1", "--theta", "1.5"],
        &["--geometry", "ellipse", "--p", "1"],
        &["--geometry", "circle", "--p", "1", "--n0", "2"],
        &["--geometry", "slit", "--p", "1", "--out", "/nonexistent/dir/r.csv"],
    ];
    for args in cases {
        let o = igabem(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn numerical_failure_exits_3() {
    let o = igabem(&["--geometry", "pacman", "--p", "2", "--quad-n", "1", "--quad-log-n", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("positive definite"));
}
