use std::path::Path;
use std::process::{Command, Output};

fn covertscope(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covertscope")).args(args.iter().map(|a| a.as_ref())).output().unwrap()
}

fn gen(dir: &Path, name: &str, manifest: &str) -> std::path::PathBuf {
    let m = dir.join(format!("{name}.json"));
    std::fs::write(&m, manifest).unwrap();
    let out = dir.join(name);
    let o = covertscope(&[&"gen-fixture", &m, &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn clean_bundle_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), "clean", r#"{"seed": 3}"#);
    let o = covertscope(&[&"inspect", &bundle]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["runs"][0]["findings"].as_array().unwrap().is_empty());
}

#[test]
fn weak_cipher_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), "des", r#"{"seed": 4, "planted_operations": [{"algorithm": "DES/CBC/PKCS5Padding"}]}"#);
    let out = dir.path().join("report.md");
    let o = covertscope(&[&"inspect", &bundle, &"--format", &"markdown", &"--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(std::fs::read_to_string(out).unwrap().contains("weak_cipher_des"));
}

#[test]
fn needle_dump_goes_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), "n", r#"{"seed": 5}"#);
    let o = covertscope(&[&"inspect", &bundle, &"--dump-needles"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.lines().filter(|l| !l.starts_with('#')).count() > 100);
    assert!(err.lines().skip(1).all(|l| l.contains('\t')));
    assert!(serde_json::from_slice::<serde_json::Value>(&o.stdout).is_ok());
}

#[test]
fn missing_bundle_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = covertscope(&[&"inspect", &dir.path().join("absent")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn malformed_allow_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), "a", r#"{"seed": 6}"#);
    let list = dir.path().join("allow.txt");
    std::fs::write(&list, "not-an-address\n").unwrap();
    let o = covertscope(&[&"inspect", &bundle, &"--active-probe", &"--amp-allow-list", &list]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not ip:port"));
}
