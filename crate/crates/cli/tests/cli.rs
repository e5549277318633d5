use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn heraldlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heraldlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_error(out: &Output, code: i32, prefix: &str) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", stderr(out));
    let err = stderr(out);
    assert_eq!(err.lines().count(), 1, "error must be one line: {err}");
    assert!(err.starts_with(prefix), "{err}");
}

// a small, strongly pumped run so every stage has enough signal
const SMALL: [&str; 8] = [
    "--set",
    "n_traces=4000",
    "--set",
    "vacuum_traces=4000",
    "--set",
    "epsilon=0.2",
    "--set",
    "cutoff_check_nmax=0",
];

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(heraldlab(&["--help"], dir.path()).status.code(), Some(0));
    assert_error(&heraldlab(&["frobnicate"], dir.path()), 2, "E_USAGE:");
    assert_error(&heraldlab(&["run", "--stages", "simulate,plot"], dir.path()), 2, "E_USAGE:");
    assert_error(&heraldlab(&["simulate", "--set", "bogus=1"], dir.path()), 2, "E_CONFIG:");
    assert_error(&heraldlab(&["extract", "--mode", "wiggly"], dir.path()), 2, "E_USAGE:");
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn missing_upstream_file_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = heraldlab(&["run", "--stages", "tomo"], dir.path());
    assert_error(&out, 3, "E_DEPENDENCY:");
    assert!(stderr(&out).contains("quads.tsv"));
}

#[test]
fn simulate_stage_alone_writes_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = heraldlab(&["run", "--stages", "simulate", "--set", "n_traces=50"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let files: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["traces.hpt"]);
    let bytes = fs::read(dir.path().join("traces.hpt")).unwrap();
    assert_eq!(&bytes[..4], b"HPT1");
    assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 50);
}

#[test]
fn subcommands_chain_and_runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--manifest", "--threads", "2"];
    args.extend(SMALL);
    let out = heraldlab(&args, a.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("eta_fit"), "{stdout}");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    let outputs: Vec<&serde_json::Value> = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["outputs"].as_array().unwrap())
        .collect();
    for name in ["traces.hpt", "quads.tsv", "rho.tsv", "wigner.tsv", "g2.tsv", "g2.svg", "report.txt"] {
        let entry = outputs
            .iter()
            .find(|o| o["path"].as_str().unwrap().ends_with(name))
            .unwrap_or_else(|| panic!("{name} missing from manifest"));
        assert_eq!(entry["sha256"].as_str().unwrap().len(), 64);
    }

    // the same steps one subcommand at a time
    let b = tempfile::tempdir().unwrap();
    let steps: [&[&str]; 5] = [
        &["simulate"],
        &["extract"],
        &["tomo"],
        &["g2"],
        &["report"],
    ];
    for step in steps {
        let mut args = step.to_vec();
        args.extend(SMALL);
        let out = heraldlab(&args, b.path());
        assert!(out.status.success(), "{step:?}: {}", stderr(&out));
    }
    for name in ["traces.hpt", "quads.tsv", "rho.tsv", "g2.tsv", "report.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn non_convergence_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--stages", "simulate,extract,tomo", "--set", "mle_max_iter=3"];
    args.extend(SMALL);
    let out = heraldlab(&args, dir.path());
    assert_error(&out, 4, "E_NOT_CONVERGED:");
    assert!(dir.path().join("rho.tsv").exists());
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = heraldlab(&["selfcheck"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().count() >= 10);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
}
