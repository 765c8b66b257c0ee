//! The six subcommands as library calls. Each `*_to` variant also writes its
//! artifacts into an output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{integrate_adiabatic, ExitBounds};
use crate::analysis::{
    cutoff_identities, energy_budget, fit_series, l1_budget, monotonicity_series, nonvanishing_residual,
    shelf_compare, time_shift, virial_series, CutoffCheck, EnergyBudget, FitContext, L1Budget, ModulationFit,
    MonitorRow, MonotonicityReport, NonvanishingReport, ShelfReport,
};
use crate::config::{InitialProfile, Scenario};
use crate::correction::{
    beta_hat, beta_tilde, endpoint_check, forcing_hat, forcing_tilde, loglog_slope, max_residual,
    ApproximateSolution, CorrectionProfiles, EndpointReport, ModelSolution, ResidualRow,
};
use crate::error::{Error, Result};
use crate::grid::{inner, Grid1D};
use crate::io::{write_atomic, write_json, write_snapshot, CsvTable, Provenance};
use crate::pde::{run, run_with, InvariantRecord, RunOutput, RunSummary, Simulation};
use crate::potential::{verify_hypotheses, PotentialFamily};
use crate::soliton::{self as sol, lambda0, solve_c_infinity, soliton_identities_with, Check, ModelConstants};

fn provenance(scn: &Scenario) -> Provenance {
    Provenance::new(scn.hash())
}

fn write_echo(scn: &Scenario, out: &Path) -> Result<()> {
    write_atomic(&out.join("config.toml"), scn.echo().as_bytes())
}

// verify

/// Scalings at which the closed-form identities are checked.
pub const IDENTITY_SCALINGS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub total: usize,
    pub failed: usize,
    pub pass: bool,
    pub checks: Vec<Check>,
}

pub fn verify(scn: &Scenario, allow_out_of_theory: bool) -> Result<VerifyReport> {
    verify_with_profile(scn, allow_out_of_theory, sol::q)
}

/// [`verify`] with the soliton profile replaced, for negative controls.
pub fn verify_with_profile(
    scn: &Scenario,
    allow_out_of_theory: bool,
    profile: fn(u32, f64) -> f64,
) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for m in 2..=4u32 {
        let l0 = lambda0(m);
        let lam = if m == scn.model.m { scn.model.lambda.min(l0) } else { 0.5 * l0 };
        let k = ModelConstants::new(m, lam)?;
        let per_c = IDENTITY_SCALINGS
            .par_iter()
            .map(|&c| soliton_identities_with(&k, c, profile))
            .collect::<Result<Vec<_>>>()?;
        for (c, list) in IDENTITY_SCALINGS.iter().zip(per_c) {
            checks.extend(list.into_iter().map(|mut ch| {
                ch.name = format!("m{m}/c{c}/{}", ch.name);
                ch
            }));
        }
        checks.extend(c_infinity_checks(m)?);
    }

    let m = scn.model.m;
    let k = scn.constants();
    let pot = scn.potential.spec();
    let constant = pot.family == PotentialFamily::Constant;
    if !constant {
        checks.push(Check::flag("potential/hypotheses", verify_hypotheses(&pot, m)?.holds));
    }
    let prof = CorrectionProfiles::compute(&k)?;
    checks.extend(model_checks(m, "tilde", &prof.tilde, forcing_tilde, beta_tilde(m)));
    checks.extend(model_checks(m, "hat", &prof.hat, forcing_hat, beta_hat(m)));
    // The exit bounds are theorems only inside the hypotheses.
    if !constant && k.check_in_theory().is_ok() {
        let tr = integrate_adiabatic(&k, &pot, scn.model.epsilon, allow_out_of_theory)?;
        checks.push(Check::absolute("adiabatic/first_integral_drift", tr.first_integral_drift(), 0.0, 1e-8));
        checks.push(Check::flag("adiabatic/exit_bounds", tr.exit_bounds().pass));
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    Ok(VerifyReport { scenario: scn.name.clone(), total: checks.len(), failed, pass: failed == 0, checks })
}

fn c_infinity_checks(m: u32) -> Result<Vec<Check>> {
    let l0 = lambda0(m);
    let lams: Vec<f64> = (0..=10).map(|i| l0 * i as f64 / 10.0).collect();
    let mut cs = Vec::with_capacity(lams.len());
    let mut worst: f64 = 0.0;
    for &lam in &lams {
        let k = ModelConstants::new(m, lam.min(l0))?;
        let c = solve_c_infinity(&k)?;
        if !k.at_critical_lambda() {
            worst = worst.max(sol::c_infinity_residual(&k, c).abs());
        }
        cs.push(c);
    }
    Ok(vec![
        Check::absolute(format!("m{m}/c_inf/residual_max"), worst, 0.0, 1e-12),
        Check::absolute(format!("m{m}/c_inf/lambda_zero"), cs[0], 2f64.powf(4.0 / (m as f64 + 3.0)), 1e-12),
        Check::absolute(format!("m{m}/c_inf/lambda_critical"), cs[10], 1.0, 1e-12),
        Check::flag(format!("m{m}/c_inf/strictly_decreasing"), cs.windows(2).all(|w| w[1] < w[0])),
    ])
}

fn model_checks(m: u32, tag: &str, s: &ModelSolution, forcing: fn(u32, f64) -> f64, beta: f64) -> Vec<Check> {
    let g = &s.grid;
    let f = g.sample(|y| forcing(m, y));
    let q = g.sample(|y| sol::q(m, y));
    let p = format!("m{m}/model_{tag}");
    vec![
        Check::absolute(format!("{p}/forcing_orthogonal_to_Q"), inner(g, &f, &q), 0.0, 1e-10),
        Check::absolute(format!("{p}/beta"), s.beta, beta, 1e-10),
        Check::absolute(format!("{p}/residual_l2"), s.residual_l2, 0.0, 1e-6),
        Check::absolute(format!("{p}/far_left"), s.far_left(), -2.0 * s.beta, 1e-4),
        Check::absolute(format!("{p}/far_right"), s.far_right(), 0.0, 1e-4),
    ]
}

pub fn verify_to(scn: &Scenario, allow_out_of_theory: bool, out: &Path) -> Result<VerifyReport> {
    let report = verify(scn, allow_out_of_theory)?;
    write_json(&out.join("verify.json"), &provenance(scn), &report)?;
    Ok(report)
}

// adiabatic

/// Rows of `adiabatic.csv`.
pub const ADIABATIC_SAMPLES: usize = 1101;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdiabaticSummary {
    pub scenario: String,
    pub m: u32,
    pub lambda: f64,
    pub epsilon: f64,
    pub t_eps: f64,
    pub c_infinity: f64,
    pub c_at_t_eps: f64,
    pub rho_at_t_eps: f64,
    pub c_end: f64,
    pub c_limit_from_integral: f64,
    pub entry_coefficient: f64,
    pub first_integral_drift: f64,
    pub exit_bounds: ExitBounds,
    pub accepted_steps: usize,
}

pub fn adiabatic(scn: &Scenario, allow_out_of_theory: bool) -> Result<(AdiabaticSummary, Vec<[f64; 5]>)> {
    let k = scn.constants();
    let tr = integrate_adiabatic(&k, &scn.potential.spec(), scn.model.epsilon, allow_out_of_theory)?;
    let te = tr.t_eps;
    let t0 = tr.t_start();
    let t1 = crate::adiabatic::HORIZON * te;
    let times: Vec<f64> =
        (0..ADIABATIC_SAMPLES).map(|i| t0 + (t1 - t0) * i as f64 / (ADIABATIC_SAMPLES - 1) as f64).collect();
    let rows = tr.sample(&times);
    let [c_te, rho_te] = tr.state(te);
    let summary = AdiabaticSummary {
        scenario: scn.name.clone(),
        m: k.m,
        lambda: k.lambda,
        epsilon: tr.eps,
        t_eps: te,
        c_infinity: tr.c_infinity,
        c_at_t_eps: c_te,
        rho_at_t_eps: rho_te,
        c_end: tr.final_state()[0],
        c_limit_from_integral: tr.c_limit_from_integral()?,
        entry_coefficient: tr.entry_coefficient(),
        first_integral_drift: tr.first_integral_drift(),
        exit_bounds: tr.exit_bounds(),
        accepted_steps: tr.path.t.len(),
    };
    Ok((summary, rows))
}

pub fn adiabatic_to(scn: &Scenario, allow_out_of_theory: bool, out: &Path) -> Result<AdiabaticSummary> {
    let (summary, rows) = adiabatic(scn, allow_out_of_theory)?;
    let prov = provenance(scn);
    let mut csv = CsvTable::new(&prov, &["t", "c", "rho", "dc_dt", "drho_dt"]);
    for r in &rows {
        csv.row(r);
    }
    csv.write(&out.join("adiabatic.csv"))?;
    write_json(&out.join("adiabatic.json"), &prov, &summary)?;
    write_echo(scn, out)?;
    Ok(summary)
}

// correction

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub beta: f64,
    pub beta_closed_form: f64,
    pub residual_l2: f64,
    pub far_left: f64,
    pub far_right: f64,
    pub multiplier: f64,
    pub gmres_iterations: usize,
}

impl ModelSummary {
    fn new(s: &ModelSolution, closed: f64) -> Self {
        Self {
            beta: s.beta,
            beta_closed_form: closed,
            residual_l2: s.residual_l2,
            far_left: s.far_left(),
            far_right: s.far_right(),
            multiplier: s.multiplier,
            gmres_iterations: s.gmres_iterations,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub scenario: String,
    pub m: u32,
    pub lambda: f64,
    pub epsilon: f64,
    pub tilde: ModelSummary,
    pub hat: ModelSummary,
    pub endpoint: EndpointReport,
    pub residual_corrected: ResidualRow,
    pub residual_uncorrected: ResidualRow,
}

/// Model-problem profiles and the residual of the approximate solution at
/// the scenario's `ε`. Rows of the table are `(y, Ã, Â)`.
pub fn correction(scn: &Scenario, allow_out_of_theory: bool) -> Result<(CorrectionSummary, Vec<[f64; 3]>)> {
    let k = scn.constants();
    let m = k.m;
    let prof = Arc::new(CorrectionProfiles::compute(&k)?);
    let tr = Arc::new(integrate_adiabatic(&k, &scn.potential.spec(), scn.model.epsilon, allow_out_of_theory)?);
    let with = ApproximateSolution::new(tr.clone(), prof.clone(), true);
    let without = ApproximateSolution::new(tr, prof.clone(), false);
    let samples = scn.sweep.residual_samples;
    let g = &prof.tilde.grid;
    let rows = (0..g.n).step_by(4).map(|j| [g.x(j), prof.tilde.profile[j], prof.hat.profile[j]]).collect();
    let summary = CorrectionSummary {
        scenario: scn.name.clone(),
        m,
        lambda: k.lambda,
        epsilon: scn.model.epsilon,
        tilde: ModelSummary::new(&prof.tilde, beta_tilde(m)),
        hat: ModelSummary::new(&prof.hat, beta_hat(m)),
        endpoint: endpoint_check(&with)?,
        residual_corrected: max_residual(&with, samples),
        residual_uncorrected: max_residual(&without, samples),
    };
    Ok((summary, rows))
}

pub fn correction_to(scn: &Scenario, allow_out_of_theory: bool, out: &Path) -> Result<CorrectionSummary> {
    let (summary, rows) = correction(scn, allow_out_of_theory)?;
    let prov = provenance(scn);
    let mut csv = CsvTable::new(&prov, &["y", "A_tilde", "A_hat"]);
    for r in &rows {
        csv.row(r);
    }
    csv.write(&out.join("profiles.csv"))?;
    write_json(&out.join("correction.json"), &prov, &summary)?;
    write_echo(scn, out)?;
    Ok(summary)
}

// simulate

/// Simulation at `-T_ε` with the scenario's initial profile.
pub fn build_simulation(scn: &Scenario, allow_out_of_theory: bool) -> Result<Simulation> {
    let cfg = scn.sim_config(allow_out_of_theory)?;
    match scn.time.initial {
        InitialProfile::Bare => Simulation::initialize_soliton(cfg),
        InitialProfile::MediumScaled => {
            let center = cfg.t_start * (1.0 - cfg.constants.lambda);
            let amp = cfg.potential.a(cfg.eps * center).powf(-1.0 / (cfg.constants.mf() - 1.0));
            Simulation::soliton(cfg, 1.0, center, amp)
        }
    }
}

/// Whole run with every snapshot kept in memory.
pub fn simulate(scn: &Scenario, allow_out_of_theory: bool) -> Result<RunOutput> {
    run(build_simulation(scn, allow_out_of_theory)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub scenario: String,
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub initial: InitialProfile,
    pub snapshots: Vec<String>,
    pub run: RunSummary,
}

pub const INVARIANT_COLUMNS: [&str; 6] = ["t", "M", "Mhat", "Ea", "L1", "Mscript"];

fn invariant_row(r: &InvariantRecord) -> [f64; 6] {
    [r.t, r.mass, r.mass_hat, r.energy, r.l1, r.mass_back]
}

/// Runs the scenario, streaming snapshots to `out` as they are produced.
pub fn simulate_to(scn: &Scenario, allow_out_of_theory: bool, out: &Path) -> Result<SimulateSummary> {
    let sim = build_simulation(scn, allow_out_of_theory)?;
    let prov = provenance(scn);
    let grid = *sim.grid();
    std::fs::create_dir_all(out)?;
    write_echo(scn, out)?;
    let mut names = Vec::new();
    let keep = scn.output.snapshots;
    let (records, summary, _) = run_with(sim, |s| {
        if keep {
            let p = write_snapshot(out, &prov, &grid, s.t(), &s.field())?;
            names.push(p.file_name().expect("file").to_string_lossy().into_owned());
        }
        Ok(())
    })?;
    let mut csv = CsvTable::new(&prov, &INVARIANT_COLUMNS);
    for r in &records {
        csv.row(&invariant_row(r));
    }
    csv.write(&out.join("invariants.csv"))?;
    let s = SimulateSummary {
        scenario: scn.name.clone(),
        n: grid.n,
        x_min: grid.x_min,
        x_max: grid.x_max,
        initial: scn.time.initial,
        snapshots: names,
        run: summary,
    };
    write_json(&out.join("summary.json"), &prov, &s)?;
    Ok(s)
}

// analyze

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitReport {
    pub t: f64,
    pub c2: f64,
    pub c_infinity: f64,
    pub rel_error: f64,
    /// `max(5%, 3√ε)`.
    pub tolerance: f64,
    pub within_tolerance: bool,
    pub w_h1: f64,
    pub w_h1_over_sqrt_eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    pub t_range: [f64; 2],
    pub samples: usize,
    /// Mean of the windowed tail `∫(u - R)` over the late fits.
    pub tail_mean: f64,
    pub predicted: f64,
    pub rel_gap: f64,
    pub last: L1Budget,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub scenario: String,
    pub epsilon: f64,
    pub t_eps: f64,
    pub c_infinity: f64,
    pub exit: Option<ExitReport>,
    /// Adiabatic position minus fitted position at `T_ε`, over the speed.
    pub time_shift_at_t_eps: Option<f64>,
    /// `sup_{t ≥ T_ε} ‖w⁺‖_{H¹} / √ε`.
    pub stability_ceiling: Option<f64>,
    pub nonvanishing: Option<NonvanishingReport>,
    pub tail: Option<TailReport>,
    /// Shelf comparison at the sample nearest `t = 0`.
    pub shelf: Option<ShelfReport>,
    pub energy: Option<EnergyBudget>,
    pub monotonicity: Option<MonotonicityReport>,
    /// `∫∫(z_x² + z²)e^{-|y|/A₀}` over `t ≥ T_ε`.
    pub localized_integral: Option<f64>,
    pub localized_over_eps: Option<f64>,
    pub cutoffs: CutoffCheck,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub fits: Vec<ModulationFit>,
    pub monitors: Vec<MonitorRow>,
}

fn near(t: f64, target: f64, scale: f64) -> bool {
    (t - target).abs() <= 1e-6 * scale
}

/// Fits and budgets for a time-ordered set of snapshots of one run.
pub fn analyze_samples(scn: &Scenario, grid: &Grid1D, samples: &[(f64, &[f64])]) -> Result<Analysis> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no snapshots to analyze".into()));
    }
    let k = scn.constants();
    let eps = scn.model.epsilon;
    let ctx = FitContext { constants: k, potential: scn.potential.spec(), eps };
    let te = ctx.t_eps();
    let c_inf = solve_c_infinity(&k)?;
    let fits = fit_series(&ctx, grid, samples)?;
    let params = scn.monitor_params();

    let at = |target: f64| fits.iter().position(|f| near(f.t, target, te));
    let exit = at(te).map(|i| {
        let f = &fits[i];
        let rel_error = (f.c2 - c_inf).abs() / c_inf;
        let tolerance = 0.05f64.max(3.0 * eps.sqrt());
        ExitReport {
            t: f.t,
            c2: f.c2,
            c_infinity: c_inf,
            rel_error,
            tolerance,
            within_tolerance: rel_error <= tolerance,
            w_h1: f.w_h1,
            w_h1_over_sqrt_eps: f.w_h1 / eps.sqrt(),
        }
    });
    let time_shift_at_t_eps = match at(te) {
        Some(i) if scn.potential.family != PotentialFamily::Constant => {
            let tr = integrate_adiabatic(&k, &ctx.potential, eps, true)?;
            let [c, rho] = tr.state(te);
            Some(time_shift(&fits[i], rho, c - k.lambda))
        }
        _ => None,
    };

    let post: Vec<usize> = (0..fits.len()).filter(|&i| fits[i].t >= te * (1.0 - 1e-9)).collect();
    let stability_ceiling =
        (!post.is_empty()).then(|| post.iter().map(|&i| fits[i].w_h1).fold(0.0, f64::max) / eps.sqrt());

    let late = [2.0 * te, 3.0 * te];
    let last_t = fits.last().expect("non-empty").t;
    let late_available = last_t >= late[1] * (1.0 - 1e-9);
    let floor = scn.analysis.control_floor.unwrap_or(f64::NAN);
    let nonvanishing = if late_available { Some(nonvanishing_residual(&fits, late, floor)?) } else { None };
    let tail = if late_available {
        let idx: Vec<usize> =
            (0..fits.len()).filter(|&i| fits[i].t >= late[0] * (1.0 - 1e-9) && fits[i].t <= late[1] * (1.0 + 1e-9)).collect();
        let budgets: Vec<L1Budget> = idx.iter().map(|&i| l1_budget(&ctx, grid, samples[i].1, &fits[i], c_inf)).collect();
        let mean = budgets.iter().map(|b| b.tail_window).sum::<f64>() / budgets.len() as f64;
        let last = budgets.last().expect("non-empty window").clone();
        Some(TailReport {
            t_range: late,
            samples: budgets.len(),
            tail_mean: mean,
            predicted: last.predicted_tail,
            rel_gap: (mean - last.predicted_tail).abs() / last.predicted_tail,
            last,
        })
    } else {
        None
    };

    let shelf = match at(0.0) {
        Some(i) if scn.potential.family != PotentialFamily::Constant => {
            let prof = CorrectionProfiles::compute(&k)?;
            Some(shelf_compare(&ctx, &prof, grid, samples[i].1, &fits[i])?)
        }
        _ => None,
    };
    let energy = post.last().map(|&i| energy_budget(&ctx, grid, samples[i].1, &fits[i], c_inf));

    let (monotonicity, localized_integral) = if post.len() >= 2 && !k.at_critical_lambda() {
        let ps: Vec<(f64, &[f64])> = post.iter().map(|&i| samples[i]).collect();
        let pf: Vec<ModulationFit> = post.iter().map(|&i| fits[i].clone()).collect();
        let (series, report) =
            monotonicity_series(&ctx, grid, &ps, &pf, &params, c_inf, scn.analysis.decay_rate)?;
        (Some(report), Some(series.localized_integral))
    } else {
        (None, None)
    };
    let monitors = virial_series(&ctx, grid, samples, &fits, params.a0).rows;
    let k0 = if params.k0.is_finite() { params.k0 } else { 1.0 };
    let report = AnalysisReport {
        scenario: scn.name.clone(),
        epsilon: eps,
        t_eps: te,
        c_infinity: c_inf,
        exit,
        time_shift_at_t_eps,
        stability_ceiling,
        nonvanishing,
        tail,
        shelf,
        energy,
        monotonicity,
        localized_integral,
        localized_over_eps: localized_integral.map(|v| v / eps),
        cutoffs: cutoff_identities(grid, params.a0, k0),
    };
    Ok(Analysis { report, fits, monitors })
}

/// Analyzes a directory written by [`simulate_to`]; results go to `out`.
pub fn analyze_to(run_dir: &Path, allow_out_of_theory: bool, out: &Path) -> Result<AnalysisReport> {
    let scn = Scenario::from_file(&run_dir.join("config.toml"), allow_out_of_theory)?;
    let snaps = crate::io::read_snapshots(run_dir)?;
    if snaps.is_empty() {
        return Err(Error::InvalidParameter(format!("no snapshots in {}", run_dir.display())));
    }
    let hash = scn.hash();
    let grid = snaps[0].0.grid;
    for (h, _) in &snaps {
        if h.config_hash != hash {
            return Err(Error::Format(format!("snapshot at t = {} was written by another configuration", h.t)));
        }
        if h.grid != grid {
            return Err(Error::Format(format!("snapshot at t = {} uses a different grid", h.t)));
        }
    }
    let samples: Vec<(f64, &[f64])> = snaps.iter().map(|(h, u)| (h.t, u.as_slice())).collect();
    let a = analyze_samples(&scn, &grid, &samples)?;
    let prov = provenance(&scn);
    let mut csv = CsvTable::new(&prov, &["t", "c2", "rho2", "resid1", "resid2", "w_h1"]);
    for f in &a.fits {
        csv.row(&[f.t, f.c2, f.rho2, f.resid[0], f.resid[1], f.w_h1]);
    }
    csv.write(&out.join("modulation.csv"))?;
    let mut csv = CsvTable::new(&prov, &["t", "virial", "localized", "Mscript"]);
    for r in &a.monitors {
        csv.row(&[r.t, r.virial, r.localized, r.mass_back]);
    }
    csv.write(&out.join("monitors.csv"))?;
    write_json(&out.join("budget.json"), &prov, &a.report)?;
    Ok(a.report)
}

// sweep

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// `ok` or the error that stopped this row.
    pub status: String,
    pub residual_corrected: f64,
    pub residual_uncorrected: f64,
    /// `|c(T_ε) - c_∞| / c_∞` of the adiabatic ODE.
    pub adiabatic_exit_error: f64,
    /// `|c₂(T_ε) - c_∞| / c_∞` of the simulation.
    pub exit_error: f64,
    pub shelf_error: f64,
    pub tail_l1_error: f64,
}

/// Least-squares slopes of each column against `ε` on a log-log scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSlopes {
    pub residual_corrected: f64,
    pub residual_uncorrected: f64,
    pub adiabatic_exit_error: f64,
    pub exit_error: f64,
    pub shelf_error: f64,
    pub tail_l1_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub simulate: bool,
    pub rows: Vec<SweepRow>,
    pub slopes: SweepSlopes,
}

fn sweep_row(
    scn: &Scenario,
    eps: f64,
    allow_out_of_theory: bool,
    profiles: &Arc<CorrectionProfiles>,
) -> Result<SweepRow> {
    let s = scn.with_epsilon(eps, allow_out_of_theory)?;
    let k = s.constants();
    let tr = Arc::new(integrate_adiabatic(&k, &s.potential.spec(), eps, allow_out_of_theory)?);
    let n = s.sweep.residual_samples;
    let corrected = max_residual(&ApproximateSolution::new(tr.clone(), profiles.clone(), true), n);
    let uncorrected = max_residual(&ApproximateSolution::new(tr.clone(), profiles.clone(), false), n);
    let c_inf = tr.c_infinity;
    let mut row = SweepRow {
        epsilon: eps,
        status: "ok".into(),
        residual_corrected: corrected.max_l2,
        residual_uncorrected: uncorrected.max_l2,
        adiabatic_exit_error: (tr.state(tr.t_eps)[0] - c_inf).abs() / c_inf,
        exit_error: f64::NAN,
        shelf_error: f64::NAN,
        tail_l1_error: f64::NAN,
    };
    if s.sweep.simulate {
        let out = simulate(&s, allow_out_of_theory)?;
        let grid = s.grid();
        let samples: Vec<(f64, &[f64])> = out.snapshots.iter().map(|q| (q.t, q.u.as_slice())).collect();
        let a = analyze_samples(&s, &grid, &samples)?.report;
        row.exit_error = a.exit.map_or(f64::NAN, |e| e.rel_error);
        row.shelf_error = a.shelf.map_or(f64::NAN, |r| r.rel_error);
        row.tail_l1_error = a.tail.map_or(f64::NAN, |r| r.rel_gap);
    }
    Ok(row)
}

fn slope_of(rows: &[SweepRow], pick: impl Fn(&SweepRow) -> f64) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.status == "ok").map(|r| (r.epsilon, pick(r))).filter(|p| p.1 > 0.0 && p.1.is_finite()).unzip();
    if x.len() < 2 {
        f64::NAN
    } else {
        loglog_slope(&x, &y)
    }
}

/// Independent runs over `epsilons`, in parallel. A failing run marks its
/// row; only invalid input fails the sweep.
pub fn sweep(scn: &Scenario, epsilons: &[f64], allow_out_of_theory: bool) -> Result<SweepReport> {
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    if eps.len() < 2 {
        return Err(Error::InvalidParameter("a sweep needs at least two distinct epsilon values".into()));
    }
    for &e in &eps {
        crate::adiabatic::check_eps(e)?;
    }
    let profiles = Arc::new(CorrectionProfiles::compute(&scn.constants())?);
    let rows: Vec<SweepRow> = eps
        .par_iter()
        .map(|&e| {
            sweep_row(scn, e, allow_out_of_theory, &profiles).unwrap_or_else(|err| SweepRow {
                epsilon: e,
                status: err.to_string().replace([',', '\n'], ";"),
                residual_corrected: f64::NAN,
                residual_uncorrected: f64::NAN,
                adiabatic_exit_error: f64::NAN,
                exit_error: f64::NAN,
                shelf_error: f64::NAN,
                tail_l1_error: f64::NAN,
            })
        })
        .collect();
    let slopes = SweepSlopes {
        residual_corrected: slope_of(&rows, |r| r.residual_corrected),
        residual_uncorrected: slope_of(&rows, |r| r.residual_uncorrected),
        adiabatic_exit_error: slope_of(&rows, |r| r.adiabatic_exit_error),
        exit_error: slope_of(&rows, |r| r.exit_error),
        shelf_error: slope_of(&rows, |r| r.shelf_error),
        tail_l1_error: slope_of(&rows, |r| r.tail_l1_error),
    };
    Ok(SweepReport { scenario: scn.name.clone(), simulate: scn.sweep.simulate, rows, slopes })
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "status",
    "epsilon",
    "residual_corrected",
    "residual_uncorrected",
    "adiabatic_exit_error",
    "exit_error",
    "shelf_error",
    "tail_l1_error",
];

pub fn sweep_to(scn: &Scenario, epsilons: &[f64], allow_out_of_theory: bool, out: &Path) -> Result<SweepReport> {
    let report = sweep(scn, epsilons, allow_out_of_theory)?;
    let prov = provenance(scn);
    let mut csv = CsvTable::new(&prov, &SWEEP_COLUMNS);
    for r in &report.rows {
        csv.row_labeled(
            &[&r.status],
            &[r.epsilon, r.residual_corrected, r.residual_uncorrected, r.adiabatic_exit_error, r.exit_error, r.shelf_error, r.tail_l1_error],
        );
    }
    let s = &report.slopes;
    csv.row_labeled(
        &["slope"],
        &[f64::NAN, s.residual_corrected, s.residual_uncorrected, s.adiabatic_exit_error, s.exit_error, s.shelf_error, s.tail_l1_error],
    );
    csv.write(&out.join("sweep.csv"))?;
    write_json(&out.join("sweep.json"), &prov, &report)?;
    write_echo(scn, out)?;
    Ok(report)
}

/// Output directory: the explicit one if given, else the scenario's.
pub fn output_dir(scn: &Scenario, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&scn.output.dir))
}
