//! End-to-end checks of the command-line surface: argument parsing, report
//! files in both formats, the spectra dump, and exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_substruct"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("substruct-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn run_writes_csv_report() {
    let out = tmp("run.csv");
    let status = bin()
        .args([
            "run", "--dim", "2", "--n", "2", "--hh", "4", "--method", "2", "--coeff",
            "random:7", "--out",
        ])
        .arg(&out)
        .arg("--format")
        .arg("csv")
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("method,pnum1,pnum2,pnumE,iter,lambda_min,lambda_max,kappa,time\n"));
    assert!(text.contains("method2,"));
}

#[test]
fn run_emits_json_to_stdout() {
    let output = bin()
        .args([
            "run", "--dim", "2", "--n", "2", "--hh", "3", "--method", "0", "--coeff",
            "constant", "--format", "json",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["method"], "method0");
    assert!(report["iterations"].as_u64().unwrap() > 0);
}

#[test]
fn spectra_dump_has_expected_rows() {
    let output = bin()
        .args([
            "spectra", "--dim", "2", "--n", "2", "--hh", "4", "--method", "3", "--coeff",
            "channels:1:1000",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "eta,class,kind,infinite,eigenvalues");
    // Four faces on the 2x2 partition.
    assert_eq!(lines.filter(|l| l.contains(",face,")).count(), 4);
}

#[test]
fn eta_variants_parse() {
    for eta in ["full", "h", "2h"] {
        let status = bin()
            .args([
                "run", "--dim", "2", "--n", "2", "--hh", "4", "--method", "3", "--coeff",
                "random:1", "--eta", eta,
            ])
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "eta {eta}");
    }
}

#[test]
fn bad_arguments_are_rejected() {
    for args in [
        vec!["run", "--method", "7"],
        vec!["run", "--coeff", "channels:2"],
        vec!["run", "--coeff", "mystery:1"],
        vec!["run", "--eta", "1.5x"],
        vec!["run", "--tol-face", "eleven"],
    ] {
        let output = bin().args(&args).output().unwrap();
        assert!(!output.status.success(), "args {args:?} should fail");
    }
}

#[test]
fn tolerance_formulas_accepted() {
    let status = bin()
        .args([
            "run", "--dim", "2", "--n", "2", "--hh", "4", "--method", "2", "--coeff",
            "random:3", "--tol-face", "1+log(H/h)", "--tol-edge", "4H/h",
        ])
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
}
