use std::fs;
use std::path::Path;

use metricguard::app::output::parse_csv;
use metricguard::app::{run, EXIT_FAILURE, EXIT_GUARD, EXIT_OK, EXIT_USAGE};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("metricguard").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn value<'a>(summary: &'a str, key: &str) -> &'a str {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}` in summary:\n{summary}"))
}

fn num(summary: &str, key: &str) -> f64 {
    value(summary, key).parse().unwrap()
}

#[test]
fn landing_defaults_reach_the_horizon_above_ground() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = cli(&["simulate", "Landing", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert_eq!(value(&out, "status"), "horizon_reached");
    assert!(num(&out, "q2_min") > 0.0);
    let text = fs::read_to_string(dir.path().join("Landing.csv")).unwrap();
    let (header, rows) = parse_csv(&text).unwrap();
    assert_eq!(header.join(","), "t,q1,q2,qd1,qd2,u1,E,E_Lf,phi");
    assert_eq!(rows.len(), num(&out, "samples") as usize);
    assert!(rows.iter().all(|r| r[2] > 0.0));
    assert!(dir.path().join("Landing.plot.py").exists());
}

#[test]
fn upright_pendulum_without_barrier_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = cli(&[
        "simulate",
        "PendulumCartUp",
        "k_b=0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(code == EXIT_OK || code == EXIT_GUARD, "{out}");
    assert_eq!(value(&out, "bound_enforced"), "false");
}

#[test]
fn usage_errors_exit_64() {
    let (code, _, err) = cli(&["simulate", "NotAScenario"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("NotAScenario"));
    assert_eq!(cli(&["simulate", "Landing", "bogus=1"]).0, EXIT_USAGE);
    assert_eq!(
        cli(&["simulate", "Landing", "--set", "G=oops"]).0,
        EXIT_USAGE
    );
    assert_eq!(cli(&["simulate", "DiskBounce", "kappa=0.5"]).0, EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(cli(&["sweep", "EscapeTime"]).0, EXIT_USAGE);
    assert_eq!(cli(&["--help"]).0, EXIT_OK);
}

#[test]
fn config_file_is_validated_and_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "scenario = \"DiskAvoid\"\nhorizon = 4.0\n[output]\nstem = \"disk\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let (code, out, _) = cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--horizon",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!((num(&out, "t_end") - 2.0).abs() < 1e-12);
    assert!(out_dir.join("disk.csv").exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "scenario = \"DiskAvoid\"\nhorizn = 4.0\n").unwrap();
    let (code, _, err) = cli(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("horizn"));
}

#[test]
fn escape_run_ends_on_a_guard() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = cli(&[
        "simulate",
        "EscapeTime",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_GUARD);
    assert!(value(&out, "status").starts_with("guard_speed@"));
}

fn csv_bytes(dir: &Path, args: &[&str]) -> Vec<u8> {
    let mut full = args.to_vec();
    full.extend(["--out", dir.to_str().unwrap()]);
    let (code, _, _) = cli(&full);
    assert_eq!(code, EXIT_OK);
    let name = format!("{}.csv", args[1]);
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "Square", "--seed", "7", "--horizon", "5"];
    assert_eq!(csv_bytes(a.path(), &args), csv_bytes(b.path(), &args));
}

#[test]
fn verify_detects_an_injected_fault() {
    let (code, out, _) = cli(&["verify", "Landing"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4);
    let (code, out, _) = cli(&["verify", "Landing", "--perturb-control", "1.01"]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(out
        .lines()
        .any(|l| l.starts_with("FAIL Landing feedback_equivalence")));
}

#[test]
fn stability_reports_follow_the_analysis() {
    let (code, out, _) = cli(&["stability", "PendulumCartDown"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(value(&out, "classification"), "CenterCandidate");
    assert_eq!(value(&out, "structural_zeros"), "2");
    let (_, out, _) = cli(&["stability", "PendulumCartDown", "k_d=0.3"]);
    assert_eq!(value(&out, "routh"), "stable");
    for k in ["0.1", "1", "10"] {
        let (_, out, _) = cli(&[
            "stability",
            "PendulumCartUp",
            "--dissipation",
            "simple",
            "--gain",
            k,
        ]);
        assert_eq!(value(&out, "classification"), "Unstable", "k_d = {k}");
    }
    assert_eq!(cli(&["stability", "Landing"]).0, EXIT_USAGE);
}

#[test]
fn sweep_rows_keep_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = cli(&[
        "sweep",
        "EscapeTime",
        "--grid",
        "eps=0.5,1,2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{out}");
    let text = fs::read_to_string(dir.path().join("EscapeTime_sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let col = |name: &str| lines[0].split(',').position(|c| c == name).unwrap();
    let (eps, t) = (col("eps"), col("guard_t"));
    let rows: Vec<(f64, f64)> = lines[1..]
        .iter()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            (cells[eps].parse().unwrap(), cells[t].parse().unwrap())
        })
        .collect();
    assert_eq!(
        rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        vec![0.5, 1.0, 2.0]
    );
    assert!(rows[0].1 > rows[1].1 && rows[1].1 > rows[2].1);
}

#[test]
fn shipped_configs_resolve() {
    use metricguard::app::config::{resolve, Overrides, RunConfig};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let file = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            resolve(&file, &Overrides::default())
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 10);
}
