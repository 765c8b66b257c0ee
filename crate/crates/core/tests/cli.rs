use std::path::Path;
use std::process::{Command, Output};

fn akdv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akdv")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_writes_report_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = akdv(&["verify", "--out", "rep"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep/verify.json")).unwrap()).unwrap();
    assert_eq!(doc["pass"], true);
    assert!(doc["checks"].as_array().unwrap().len() >= 25);
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn out_of_theory_needs_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "[model]\nm = 3\nlambda = 0.9\n").unwrap();
    let o = akdv(&["adiabatic", "--config", "s.toml", "--out", "a"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("allow-out-of-theory"));
    let o = akdv(&["verify", "--allow-out-of-theory", "--config", "s.toml", "--out", "v"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("dup.toml"), "[model]\nm = 3\nlambda = 0.1\nlambda = 0.2\n").unwrap();
    let o = akdv(&["verify", "--config", "dup.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duplicate key `lambda`"), "{}", stderr(&o));
    std::fs::write(dir.path().join("typo.toml"), "[grid]\nnodes = 10\n").unwrap();
    let o = akdv(&["verify", "--config", "typo.toml"], dir.path());
    assert!(stderr(&o).contains("nodes"), "{}", stderr(&o));
}

#[test]
fn sweep_needs_two_epsilons_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = akdv(&["sweep", "--eps", "0.05", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = akdv(&["sweep", "--eps", "0.1,0.05", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = akdv(&["--threads", "1", "sweep", "--eps", "0.1,0.05", "--out", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_akdv"))
        .args(["sweep", "--eps", "0.1,0.05", "--out", "c"])
        .env("AKDV_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["sweep.csv", "sweep.json", "config.toml"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, std::fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn adiabatic_and_correction_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(akdv(&["adiabatic", "--out", "o"], dir.path()).status.success());
    assert!(akdv(&["correction", "--out", "o"], dir.path()).status.success());
    let csv = std::fs::read_to_string(dir.path().join("o/adiabatic.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# akdv "));
    assert_eq!(lines.next().unwrap(), "t,c,rho,dc_dt,drho_dt");
    assert_eq!(lines.count(), akdv::commands::ADIABATIC_SAMPLES);
    let echo = std::fs::read_to_string(dir.path().join("o/config.toml")).unwrap();
    let scn = akdv::config::Scenario::parse(&echo, false).unwrap();
    assert_eq!(scn.echo(), echo);
}
