//! Exit-code contract and report reproducibility of the command-line
//! frontend.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_corechk"));
    c.env("CHKBOX_COLOR", "0");
    c
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn typecheck_exit_codes() {
    let out = bin().args(["typecheck"]).arg(fixture("value.chk")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok: int"));

    let out = bin().args(["typecheck"]).arg(fixture("reject_uc_deref.chk")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().args(["typecheck"]).arg(fixture("reject_cu_deref.chk")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("T-Def"));

    let out = bin()
        .args(["typecheck"])
        .arg(fixture("reject_checked_interface.chk"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("T-Checked"));
}

#[test]
fn run_outcomes_and_exit_codes() {
    for (file, expect, code) in [
        ("value.chk", "value 3 : int", 0),
        ("null_deref.chk", "null", 0),
        ("out_of_bounds.chk", "bounds", 0),
    ] {
        let out = bin().args(["run"]).arg(fixture(file)).output().unwrap();
        assert_eq!(out.status.code(), Some(code), "{file}");
        assert!(
            String::from_utf8_lossy(&out.stdout).contains(expect),
            "{file}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
    }
    // Fuel exhaustion is an ordinary outcome.
    let out = bin()
        .args(["run", "--fuel", "1"])
        .arg(fixture("deref_array.chk"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("out-of-fuel"));
    // Traces are line-per-step.
    let out = bin()
        .args(["run", "--trace"])
        .arg(fixture("value.chk"))
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("S-Add"));
}

#[test]
fn compile_runc_roundtrip_and_tamper() {
    let dir = std::env::temp_dir().join(format!("corechk-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out_path = dir.join("value.corec");
    let out = bin()
        .args(["compile"])
        .arg(fixture("value.chk"))
        .args(["-o"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = bin().args(["runc"]).arg(&out_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("value 3"));

    // A tampered target with an arity mismatch is stuck: exit 2.
    let out = bin().args(["runc"]).arg(fixture("tampered_arity.corec")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("stuck"));

    // Compiling an ill-typed program is a type error: exit 1.
    let out = bin()
        .args(["compile"])
        .arg(fixture("reject_uc_deref.chk"))
        .args(["-o"])
        .arg(dir.join("never.corec"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fuzz_reports_are_reproducible() {
    let dir = std::env::temp_dir().join(format!("corechk-rep-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (a, b) = (dir.join("a.json"), dir.join("b.json"));
    for path in [&a, &b] {
        let out = bin()
            .args(["fuzz", "--count", "40", "--max-depth", "6", "--seed", "5", "--check", "all"])
            .args(["--report"])
            .arg(path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let ja = std::fs::read(&a).unwrap();
    let jb = std::fs::read(&b).unwrap();
    assert_eq!(ja, jb, "identical invocations must produce byte-identical reports");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fuzz_empty_count_passes() {
    let out = bin()
        .args(["fuzz", "--count", "0", "--check", "progress"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}
