//! End-to-end runs of the library entry points behind the subcommands.

use akdv::commands::{self, analyze_to, simulate_to, sweep, verify, verify_with_profile};
use akdv::config::Scenario;
use akdv::io::{read_csv, read_snapshots};

fn small() -> Scenario {
    Scenario::parse(
        "name = \"small\"\n[model]\nepsilon = 0.1\n[time]\nhorizon = 1.0\nsnapshots_per_t_eps = 4\n",
        false,
    )
    .unwrap()
}

#[test]
fn default_verify_passes_with_enough_checks() {
    let r = verify(&Scenario::default().resolve(false).unwrap(), false).unwrap();
    assert!(r.total >= 25, "{} checks", r.total);
    let failed: Vec<_> = r.checks.iter().filter(|c| !c.pass).map(|c| &c.name).collect();
    assert!(r.pass, "{failed:?}");
}

fn corrupted_q(m: u32, x: f64) -> f64 {
    akdv::soliton::q(m, x) * (1.0 + 1e-3 * (-x * x).exp())
}

#[test]
fn corrupted_profile_fails_the_ode_residual() {
    let r = verify_with_profile(&Scenario::default().resolve(false).unwrap(), false, corrupted_q).unwrap();
    assert!(!r.pass);
    let ode: Vec<_> = r.checks.iter().filter(|c| c.name.ends_with("ode_residual_sup")).collect();
    assert_eq!(ode.len(), 12);
    assert!(ode.iter().all(|c| !c.pass));
}

#[test]
fn every_m_verifies() {
    for (m, lam) in [(2, 0.2), (4, 0.05)] {
        let s = Scenario::parse(&format!("[model]\nm = {m}\nlambda = {lam}\n"), false).unwrap();
        let r = verify(&s, false).unwrap();
        assert!(r.pass, "m = {m}");
    }
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small();
    let s = simulate_to(&scn, false, dir.path()).unwrap();
    assert_eq!(s.snapshots.len(), 9);
    assert!(s.run.l1_drift < 1e-10);
    assert!(s.run.energy_drift < 1e-6);
    let inv = read_csv(&dir.path().join("invariants.csv")).unwrap();
    assert_eq!(inv.columns, commands::INVARIANT_COLUMNS);
    assert!(inv.provenance_line.contains(&scn.hash_hex()));
    let snaps = read_snapshots(dir.path()).unwrap();
    assert!(snaps.windows(2).all(|w| w[0].0.t < w[1].0.t));
    assert_eq!(snaps[0].0.config_hash, scn.hash());

    let r = analyze_to(dir.path(), false, dir.path()).unwrap();
    let exit = r.exit.expect("snapshot at T_eps");
    assert!(exit.within_tolerance, "{exit:?}");
    assert!(r.shelf.is_some() && r.tail.is_none());
    let fits = read_csv(&dir.path().join("modulation.csv")).unwrap();
    assert_eq!(fits.rows.len(), 9);
    assert!(fits.rows.iter().all(|row| row[3].abs() < 1e-10 && row[4].abs() < 1e-10));
    let budget: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("budget.json")).unwrap()).unwrap();
    assert_eq!(budget["config_hash"], scn.hash_hex());
    assert_eq!(budget["version"], akdv::VERSION);
}

#[test]
fn analyze_rejects_foreign_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut scn = small();
    scn.output.snapshots = true;
    scn.time.horizon = -0.9;
    simulate_to(&scn, false, dir.path()).unwrap();
    let mut other = scn.clone();
    other.name = "renamed".into();
    std::fs::write(dir.path().join("config.toml"), other.echo()).unwrap();
    assert!(analyze_to(dir.path(), false, dir.path()).is_err());
}

#[test]
fn sweep_rules_and_determinism() {
    let scn = Scenario::default().resolve(false).unwrap();
    assert!(sweep(&scn, &[0.05], false).is_err());
    assert!(sweep(&scn, &[0.05, 0.05], false).is_err());
    let a = sweep(&scn, &[0.1, 0.05, 0.025], false).unwrap();
    let b = sweep(&scn, &[0.025, 0.1, 0.05], false).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!((1.3..=1.7).contains(&a.slopes.residual_corrected));
    assert!((0.8..=1.2).contains(&a.slopes.residual_uncorrected));
}

#[test]
fn sweep_with_simulation() {
    let mut scn = Scenario::parse("[time]\nhorizon = 0.0\nsnapshots_per_t_eps = 2\n", false).unwrap();
    scn.sweep.simulate = true;
    scn.sweep.residual_samples = 5;
    assert!(sweep(&scn, &[0.1, 0.7], false).is_err());
    // At ε = 0.5 the trailing window [-2/ε, -10] is empty: that row fails alone.
    let r = sweep(&scn, &[0.5, 0.15], false).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows[0].status.contains("trailing window"), "{}", r.rows[0].status);
    let ok = &r.rows[1];
    assert_eq!(ok.status, "ok");
    assert!(ok.shelf_error.is_finite() && ok.exit_error.is_nan() && ok.tail_l1_error.is_nan());
}
