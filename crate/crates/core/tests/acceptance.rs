//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Criteria 6 to 10 share three long interaction runs (ε = 0.05 and 0.025 up
//! to 3T_ε, plus a constant-medium control at ε = 0.025) and three short runs
//! up to t = 0 for the shelf. Expect about ten minutes on one core.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use akdv::adiabatic::integrate_adiabatic;
use akdv::analysis::ModulationFit;
use akdv::commands::{analyze_samples, simulate, AnalysisReport, IDENTITY_SCALINGS};
use akdv::config::Scenario;
use akdv::correction::{
    beta_hat, beta_tilde, forcing_hat, forcing_tilde, residual_scaling, CorrectionProfiles, ModelSolution,
};
use akdv::grid::{inner, Grid1D};
use akdv::pde::{run, RunOutput, Simulation};
use akdv::potential::{PotentialFamily, PotentialSpec};
use akdv::soliton::{self as sol, c_infinity_residual, lambda0, solve_c_infinity, soliton_identities, ModelConstants};

struct Verdict {
    id: u32,
    pass: bool,
}

fn verdict(id: u32, pass: bool, detail: String) -> Verdict {
    println!("criterion {id:>2}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { id, pass }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn c1() -> Verdict {
    let t0 = Instant::now();
    let mut failed = Vec::new();
    let mut total = 0;
    for m in 2..=4u32 {
        let k = ModelConstants::new(m, 0.5 * lambda0(m)).unwrap();
        for &c in &IDENTITY_SCALINGS {
            for ch in soliton_identities(&k, c).unwrap() {
                total += 1;
                if !ch.pass {
                    failed.push(format!("m{m}/c{c}/{} err {:.2e}", ch.name, ch.error));
                }
            }
        }
    }
    let el = t0.elapsed();
    let ok = failed.is_empty() && el < Duration::from_secs(10);
    verdict(1, ok, format!("{} of {total} identities hold in {} {}", total - failed.len(), secs(el), failed.join("; ")))
}

fn c2() -> Verdict {
    let t0 = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for m in 2..=4u32 {
        let l0 = lambda0(m);
        let mut cs = Vec::new();
        let mut worst: f64 = 0.0;
        for i in 0..=10 {
            let k = ModelConstants::new(m, (l0 * i as f64 / 10.0).min(l0)).unwrap();
            let c = solve_c_infinity(&k).unwrap();
            if !k.at_critical_lambda() {
                worst = worst.max(c_infinity_residual(&k, c).abs());
            }
            cs.push(c);
        }
        let zero = (cs[0] - 2f64.powf(4.0 / (m as f64 + 3.0))).abs();
        let crit = (cs[10] - 1.0).abs();
        let decreasing = cs.windows(2).all(|w| w[1] < w[0]);
        ok &= worst < 1e-12 && zero < 1e-12 && crit < 1e-12 && decreasing;
        notes.push(format!("m{m}: |g| {worst:.1e}, c(0) err {zero:.1e}, c(l0) err {crit:.1e}, decreasing {decreasing}"));
    }
    let el = t0.elapsed();
    verdict(2, ok && el < Duration::from_secs(1), format!("{} in {}", notes.join("; "), secs(el)))
}

fn c3() -> Verdict {
    let t0 = Instant::now();
    let pot = PotentialSpec::default();
    let k = ModelConstants::new(3, 0.1).unwrap();
    let tr = integrate_adiabatic(&k, &pot, 0.05, false).unwrap();
    let drift = tr.first_integral_drift();
    let mut ok = drift < 1e-8 && tr.exit_bounds().pass;
    let mut notes = vec![format!("drift {drift:.2e}, exit bounds {}", tr.exit_bounds().pass)];
    for lam in [0.0, 0.1, lambda0(3)] {
        let k = ModelConstants::new(3, lam).unwrap();
        let tr = integrate_adiabatic(&k, &pot, 0.01, false).unwrap();
        let gap = (tr.final_state()[0] - tr.c_infinity).abs();
        ok &= gap < 1e-5 && tr.exit_bounds().pass;
        notes.push(format!("lambda {lam:.4}: |c(10T) - c_inf| {gap:.3e}"));
    }
    let el = t0.elapsed();
    verdict(3, ok && el < Duration::from_secs(5), format!("{} in {}", notes.join("; "), secs(el)))
}

fn model_ok(m: u32, s: &ModelSolution, forcing: fn(u32, f64) -> f64, beta: f64) -> (bool, String) {
    let g = &s.grid;
    let f = g.sample(|y| forcing(m, y));
    let q = g.sample(|y| sol::q(m, y));
    let orth = inner(g, &f, &q).abs();
    let db = (s.beta - beta).abs();
    let fl = (s.far_left() + 2.0 * s.beta).abs();
    let fr = s.far_right().abs();
    let ok = g.n == 4096 && orth < 1e-10 && db < 1e-10 && s.residual_l2 < 1e-6 && fl < 1e-4 && fr < 1e-4;
    (ok, format!("(F,Q) {orth:.1e} beta {db:.1e} res {:.1e} far {fl:.1e}/{fr:.1e}", s.residual_l2))
}

fn c4() -> Verdict {
    let t0 = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for m in 2..=4u32 {
        let k = ModelConstants::new(m, 0.5 * lambda0(m)).unwrap();
        let prof = CorrectionProfiles::compute(&k).unwrap();
        let (a, na) = model_ok(m, &prof.tilde, forcing_tilde, beta_tilde(m));
        let (b, nb) = model_ok(m, &prof.hat, forcing_hat, beta_hat(m));
        ok &= a && b;
        notes.push(format!("m{m} tilde {na}, hat {nb}"));
    }
    let el = t0.elapsed();
    verdict(4, ok && el < Duration::from_secs(30), format!("{} in {}", notes.join("; "), secs(el)))
}

fn c5() -> Verdict {
    let t0 = Instant::now();
    let k = ModelConstants::new(3, 0.1).unwrap();
    let eps = [0.1, 0.05, 0.025];
    let pot = PotentialSpec::default();
    let with = residual_scaling(&k, &pot, &eps, true, 41, false).unwrap();
    let without = residual_scaling(&k, &pot, &eps, false, 41, false).unwrap();
    let el = t0.elapsed();
    let ok = (1.3..=1.7).contains(&with.slope)
        && (0.8..=1.2).contains(&without.slope)
        && el < Duration::from_secs(600);
    verdict(5, ok, format!("slope {:.4} corrected, {:.4} uncorrected in {}", with.slope, without.slope, secs(el)))
}

fn scenario(lambda: f64, eps: f64, horizon: f64) -> Scenario {
    let mut s = Scenario::default();
    s.model.lambda = lambda;
    s.model.epsilon = eps;
    s.time.horizon = horizon;
    s.resolve(false).unwrap()
}

struct Run {
    scn: Scenario,
    grid: Grid1D,
    out: RunOutput,
    elapsed: Duration,
}

impl Run {
    fn analyze(&self) -> (AnalysisReport, Vec<ModulationFit>) {
        let samples: Vec<(f64, &[f64])> = self.out.snapshots.iter().map(|s| (s.t, s.u.as_slice())).collect();
        let a = analyze_samples(&self.scn, &self.grid, &samples).unwrap();
        (a.report, a.fits)
    }
}

fn interaction(lambda: f64, eps: f64, horizon: f64) -> Run {
    let scn = scenario(lambda, eps, horizon);
    let t0 = Instant::now();
    let out = simulate(&scn, false).unwrap();
    let elapsed = t0.elapsed();
    eprintln!("  run lambda {lambda} eps {eps} to {horizon} T: {} steps in {}", out.summary.steps, secs(elapsed));
    Run { grid: scn.grid(), scn, out, elapsed }
}

/// `a ≡ 2` with the exit soliton `2^{-1/(m-1)} Q_{c_∞}` from the same start.
fn control(eps: f64) -> Run {
    let mut scn = Scenario::default();
    scn.model.epsilon = eps;
    scn.potential.family = PotentialFamily::Constant;
    scn.potential.a_minus = 2.0;
    scn.potential.a_plus = 2.0;
    let scn = scn.resolve(true).unwrap();
    let cfg = scn.sim_config(true).unwrap();
    let k = scn.constants();
    let c_inf = solve_c_infinity(&k).unwrap();
    let center = cfg.t_start * (1.0 - k.lambda);
    let amp = 2f64.powf(-1.0 / (k.mf() - 1.0));
    let t0 = Instant::now();
    let out = run(Simulation::soliton(cfg, c_inf, center, amp).unwrap()).unwrap();
    let elapsed = t0.elapsed();
    eprintln!("  control eps {eps}: {} steps in {}", out.summary.steps, secs(elapsed));
    Run { grid: scn.grid(), scn, out, elapsed }
}

fn c6(r: &Run) -> Verdict {
    let s = &r.out.summary;
    let ok = r.grid.n == 16384
        && s.energy_drift < 1e-6
        && s.l1_drift < 1e-10
        && s.max_mass_increase <= 1e-10
        && s.mass_ordering_violation <= 0.0
        && r.elapsed < Duration::from_secs(1200);
    verdict(
        6,
        ok,
        format!(
            "n {} energy drift {:.2e}, L1 drift {:.2e}, max step increase of M {:.2e}, ordering violation {:.1e}, {}",
            r.grid.n,
            s.energy_drift,
            s.l1_drift,
            s.max_mass_increase,
            s.mass_ordering_violation,
            secs(r.elapsed)
        ),
    )
}

fn c7(a: &AnalysisReport, b: &AnalysisReport) -> Verdict {
    let (ea, eb) = (a.exit.as_ref().unwrap(), b.exit.as_ref().unwrap());
    let (ka, kb) = (ea.w_h1_over_sqrt_eps, eb.w_h1_over_sqrt_eps);
    let ratio = ka.max(kb) / ka.min(kb);
    let ok = ea.within_tolerance && eb.within_tolerance && ratio <= 2.0;
    verdict(
        7,
        ok,
        format!(
            "c2 {:.4}/{:.4} vs c_inf {:.4} (rel {:.3}/{:.3}, tol {:.3}/{:.3}); K {ka:.3}/{kb:.3}, ratio {ratio:.3}",
            ea.c2, eb.c2, ea.c_infinity, ea.rel_error, eb.rel_error, ea.tolerance, eb.tolerance
        ),
    )
}

fn c8(a: &AnalysisReport, b: &AnalysisReport, floor: f64) -> Verdict {
    let nv = b.nonvanishing.as_ref().unwrap();
    let (ta, tb) = (a.tail.as_ref().unwrap(), b.tail.as_ref().unwrap());
    let ok = nv.min_w_h1 > 10.0 * floor && ta.rel_gap <= 0.25 && tb.rel_gap <= 0.25 && tb.rel_gap < ta.rel_gap;
    verdict(
        8,
        ok,
        format!(
            "min |w|_H1 {:.3e} vs floor {floor:.3e} (x{:.1}); tail L1 {:.5}/{:.5} vs {:.5}, gap {:.2e} -> {:.2e}",
            nv.min_w_h1,
            nv.min_w_h1 / floor,
            ta.tail_mean,
            tb.tail_mean,
            tb.predicted,
            ta.rel_gap,
            tb.rel_gap
        ),
    )
}

fn c9(shelves: &[(f64, AnalysisReport)]) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut prev = f64::INFINITY;
    for (eps, r) in shelves {
        let s = r.shelf.as_ref().unwrap();
        let sign = s.measured_mean.signum() == s.predicted_mean.signum() && s.sign_agreement == 1.0;
        ok &= sign && s.rel_error < prev;
        prev = s.rel_error;
        notes.push(format!(
            "eps {eps}: mean {:.3e} vs {:.3e}, same sign at {:.2}% of nodes, rel err {:.3}",
            s.measured_mean,
            s.predicted_mean,
            100.0 * s.sign_agreement,
            s.rel_error
        ));
    }
    ok &= beta_tilde(3) < 0.0;
    verdict(9, ok, notes.join("; "))
}

fn c10(a: &AnalysisReport, b: &AnalysisReport) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for r in [a, b] {
        let c = &r.cutoffs;
        let cut = c.psi_bounds_violation <= 1e-12
            && c.psi_odd_violation <= 1e-12
            && c.phi_reflection_violation <= 1e-12
            && c.phi_monotone;
        let mono = r.monotonicity.as_ref().unwrap();
        let bounds = mono.i.iter().chain(&mono.i_tilde).chain(&mono.j).all(|t| t.pass) && mono.mass_back_pass;
        ok &= cut && bounds;
        let worst = |v: &[akdv::analysis::BoundTest]| {
            v.iter().map(|t| format!("{:.1e}/{:.1e}", t.violation, t.slack)).collect::<Vec<_>>().join(" ")
        };
        notes.push(format!(
            "eps {}: cutoffs {cut}, I [{}] I~ [{}] J [{}] M {}",
            r.epsilon,
            worst(&mono.i),
            worst(&mono.i_tilde),
            worst(&mono.j),
            mono.mass_back_pass
        ));
    }
    let (la, lb) = (a.localized_over_eps.unwrap(), b.localized_over_eps.unwrap());
    let ratio = la.max(lb) / la.min(lb);
    ok &= ratio <= 2.0;
    notes.push(format!("localized/eps {la:.3}/{lb:.3}, ratio {ratio:.2}"));
    verdict(10, ok, notes.join("; "))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut all = vec![c1(), c2(), c3(), c4(), c5()];

    let shelves: Vec<(f64, AnalysisReport)> =
        [0.1, 0.05, 0.025].iter().map(|&e| (e, interaction(0.0, e, 0.0).analyze().0)).collect();
    all.push(c9(&shelves));

    let ra = interaction(0.1, 0.05, 3.0);
    all.push(c6(&ra));
    let (rep_a, _) = ra.analyze();
    drop(ra);

    let ctl = control(0.025);
    let te = akdv::adiabatic::t_eps(0.025, ctl.scn.model.lambda);
    let floor = ctl
        .analyze()
        .1
        .iter()
        .filter(|f| f.t >= 2.0 * te * (1.0 - 1e-9) && f.t <= 3.0 * te * (1.0 + 1e-9))
        .map(|f| f.w_h1)
        .fold(0.0, f64::max);
    drop(ctl);

    let mut rb = interaction(0.1, 0.025, 3.0);
    rb.scn.analysis.control_floor = Some(floor);
    let (rep_b, _) = rb.analyze();
    drop(rb);

    all.push(c7(&rep_a, &rep_b));
    all.push(c8(&rep_a, &rep_b, floor));
    all.push(c10(&rep_a, &rep_b));

    all.sort_by_key(|v| v.id);
    println!("\nsummary ({} total)", secs(start.elapsed()));
    for v in &all {
        println!("criterion {:>2}: {}", v.id, if v.pass { "PASS" } else { "FAIL" });
    }
    let failed = all.iter().filter(|v| !v.pass).count();
    println!("{} of {} criteria passed", all.len() - failed, all.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
