//! Post-processing of simulated fields: modulation fits, shelf and `L¹`
//! budgets, energy budget, and the virial and monotonicity monitors.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic::t_eps;
use crate::correction::CorrectionProfiles;
use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, Grid1D, Spectral};
use crate::potential::PotentialSpec;
use crate::soliton::{self as sol, ModelConstants};

/// Distance kept from the domain edges by every analysis window.
pub const EDGE_MARGIN: f64 = 20.0;
/// Windows behind the soliton start this far from its center.
pub const CORE_EXCLUSION: f64 = 10.0;
const FIT_TOLERANCE: f64 = 1e-12;

/// Everything a fit needs to know about the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitContext {
    pub constants: ModelConstants,
    pub potential: PotentialSpec,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// `R = Q_c(x-ρ) / a(ερ)^{1/(m-1)}`
    Interaction,
    /// `R = 2^{-1/(m-1)} Q_c(x-ρ)`
    Post,
}

impl FitContext {
    pub fn t_eps(&self) -> f64 {
        t_eps(self.eps, self.constants.lambda)
    }

    /// Interaction normalization up to (not including) `T_ε`.
    pub fn phase(&self, t: f64) -> Phase {
        if t < self.t_eps() {
            Phase::Interaction
        } else {
            Phase::Post
        }
    }

    pub fn normalization(&self, phase: Phase, rho: f64) -> f64 {
        let e = 1.0 / (self.constants.mf() - 1.0);
        match phase {
            Phase::Interaction => self.potential.a(self.eps * rho).powf(-e),
            Phase::Post => self.potential.a_plus.powf(-e),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationFit {
    pub t: f64,
    pub c2: f64,
    pub rho2: f64,
    /// `[∫zR, ∫(x-ρ₂)Rz]`
    pub resid: [f64; 2],
    pub iterations: usize,
    pub phase: Phase,
    pub normalization: f64,
    /// `‖u - R‖_{H¹}` on the whole grid.
    pub w_h1: f64,
}

fn soliton_window(grid: &Grid1D, c: f64, rho: f64) -> Result<(usize, usize)> {
    let reach = 40.0 / c.sqrt();
    let h = grid.h();
    let lo = ((rho - reach - grid.x_min) / h).floor();
    let hi = ((rho + reach - grid.x_min) / h).ceil();
    if lo < 0.0 || hi >= grid.n as f64 {
        return Err(Error::InvalidParameter(format!("soliton at {rho} too close to the domain edge")));
    }
    Ok((lo as usize, hi as usize))
}

fn orthogonality(ctx: &FitContext, phase: Phase, grid: &Grid1D, u: &[f64], c: f64, rho: f64) -> Result<[f64; 2]> {
    if !(c > 0.0 && c.is_finite() && rho.is_finite()) {
        return Err(Error::NoConvergence(format!("fit left the admissible set at c = {c}")));
    }
    let (lo, hi) = soliton_window(grid, c, rho)?;
    let s = ctx.normalization(phase, rho);
    let m = ctx.constants.m;
    let (mut f1, mut f2) = (0.0, 0.0);
    for (j, &uj) in u.iter().enumerate().take(hi + 1).skip(lo) {
        let y = grid.x(j) - rho;
        let r = s * sol::q_c(m, c, y);
        let z = uj - r;
        f1 += z * r;
        f2 += y * r * z;
    }
    Ok([f1 * grid.h(), f2 * grid.h()])
}

/// `u - R` on the whole grid.
pub fn residual_field(ctx: &FitContext, grid: &Grid1D, u: &[f64], fit: &ModulationFit) -> Vec<f64> {
    let m = ctx.constants.m;
    let reach = 40.0 / fit.c2.sqrt();
    u.iter()
        .enumerate()
        .map(|(j, &uj)| {
            let y = grid.x(j) - fit.rho2;
            if y.abs() > reach {
                uj
            } else {
                uj - fit.normalization * sol::q_c(m, fit.c2, y)
            }
        })
        .collect()
}

/// `(‖w‖²_{L²}, ‖w_x‖²_{L²})`
fn squared_norms(spectral: &Spectral, grid: &Grid1D, w: &[f64]) -> (f64, f64) {
    let wx = spectral.derivative(w, 1);
    let h = grid.h();
    (h * w.iter().map(|v| v * v).sum::<f64>(), h * wx.iter().map(|v| v * v).sum::<f64>())
}

/// Initial guess from the largest value of `u`.
pub fn peak_guess(ctx: &FitContext, phase: Phase, grid: &Grid1D, u: &[f64]) -> Result<[f64; 2]> {
    let (j, &peak) = u
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite field"))
        .ok_or_else(|| Error::InvalidParameter("empty field".into()))?;
    let rho = grid.x(j);
    let m = ctx.constants.m;
    let scale = ctx.normalization(phase, rho) * sol::q(m, 0.0);
    if !(peak > 0.1 * scale) {
        return Err(Error::InvalidParameter(format!("no soliton-like bump: peak {peak:.3e}")));
    }
    Ok([(peak / scale).powf(ctx.constants.mf() - 1.0), rho])
}

/// Newton iteration on the two orthogonality conditions in `(c₂, ρ₂)`, with
/// a centered finite-difference Jacobian. A guess that already satisfies the
/// conditions to `1e-12` is returned unchanged.
pub fn fit_modulation(
    ctx: &FitContext,
    spectral: &Spectral,
    grid: &Grid1D,
    t: f64,
    u: &[f64],
    guess: Option<[f64; 2]>,
) -> Result<ModulationFit> {
    let phase = ctx.phase(t);
    let [mut c, mut rho] = match guess {
        Some(g) => g,
        None => peak_guess(ctx, phase, grid, u)?,
    };
    let mut f = orthogonality(ctx, phase, grid, u, c, rho)?;
    let mut iterations = 0;
    while f[0].abs().max(f[1].abs()) > FIT_TOLERANCE {
        if iterations == 50 {
            return Err(Error::NoConvergence(format!(
                "modulation fit at t = {t}: residuals {:.3e}, {:.3e}",
                f[0], f[1]
            )));
        }
        let hc = 1e-6 * c;
        let hr = 1e-6;
        let fcp = orthogonality(ctx, phase, grid, u, c + hc, rho)?;
        let fcm = orthogonality(ctx, phase, grid, u, c - hc, rho)?;
        let frp = orthogonality(ctx, phase, grid, u, c, rho + hr)?;
        let frm = orthogonality(ctx, phase, grid, u, c, rho - hr)?;
        let j = [
            [(fcp[0] - fcm[0]) / (2.0 * hc), (frp[0] - frm[0]) / (2.0 * hr)],
            [(fcp[1] - fcm[1]) / (2.0 * hc), (frp[1] - frm[1]) / (2.0 * hr)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Singular(format!("modulation Jacobian at t = {t}")));
        }
        let dc = (f[0] * j[1][1] - f[1] * j[0][1]) / det;
        let dr = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        // Damped step: halve until the residual decreases.
        let norm = |v: [f64; 2]| v[0].hypot(v[1]);
        let mut step = 1.0;
        loop {
            let (cn, rn) = (c - step * dc, rho - step * dr);
            if let Ok(fnew) = orthogonality(ctx, phase, grid, u, cn, rn) {
                if norm(fnew) < norm(f) || step < 1e-3 {
                    c = cn;
                    rho = rn;
                    f = fnew;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-3 {
                return Err(Error::NoConvergence(format!("modulation fit at t = {t} stalled")));
            }
        }
        iterations += 1;
    }
    let mut fit = ModulationFit {
        t,
        c2: c,
        rho2: rho,
        resid: f,
        iterations,
        phase,
        normalization: ctx.normalization(phase, rho),
        w_h1: 0.0,
    };
    let z = residual_field(ctx, grid, u, &fit);
    let (l2, d1) = squared_norms(spectral, grid, &z);
    fit.w_h1 = (l2 + d1).sqrt();
    Ok(fit)
}

/// Fits a time-ordered sequence, warm-starting each fit from the previous one.
pub fn fit_series(
    ctx: &FitContext,
    grid: &Grid1D,
    samples: &[(f64, &[f64])],
) -> Result<Vec<ModulationFit>> {
    let spectral = Spectral::new(grid);
    let mut out: Vec<ModulationFit> = Vec::with_capacity(samples.len());
    for &(t, u) in samples {
        let guess = out.last().map(|f| [f.c2, f.rho2]);
        let fit = match fit_modulation(ctx, &spectral, grid, t, u, guess) {
            Ok(f) => f,
            Err(_) => fit_modulation(ctx, &spectral, grid, t, u, None)?,
        };
        out.push(fit);
    }
    Ok(out)
}

/// `κ_m = c_∞^{(3-m)/(2(m-1))} / 2^{1/(m-1)}`, the share of `∫Q` kept by the
/// outgoing soliton.
pub fn kappa_m(constants: &ModelConstants, c_infinity: f64) -> f64 {
    let m = constants.mf();
    c_infinity.powf((3.0 - m) / (2.0 * (m - 1.0))) / 2f64.powf(1.0 / (m - 1.0))
}

/// Trailing window `y ∈ [-min(2/ε, ρ₂ - x_min - margin), -10]`.
pub fn trailing_window(grid: &Grid1D, eps: f64, rho2: f64) -> Result<[f64; 2]> {
    let back = (2.0 / eps).min(rho2 - grid.x_min - EDGE_MARGIN);
    if back <= CORE_EXCLUSION {
        return Err(Error::InvalidParameter(format!("empty trailing window behind {rho2}")));
    }
    Ok([-back, -CORE_EXCLUSION])
}

fn window_indices(grid: &Grid1D, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
    let h = grid.h();
    let a = ((lo - grid.x_min) / h).ceil().max(0.0) as usize;
    let b = (((hi - grid.x_min) / h).floor() as usize).min(grid.n - 1);
    a..=b
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShelfReport {
    pub t: f64,
    pub window: [f64; 2],
    /// `‖z - εA_c‖ / ‖εA_c‖` on the window.
    pub rel_error: f64,
    pub measured_mean: f64,
    pub predicted_mean: f64,
    /// Share of window nodes where `z` and `εA_c` have the same sign.
    pub sign_agreement: f64,
    pub predicted_norm: f64,
    pub measured_norm: f64,
}

/// Compares `z = u - R` behind the soliton with the predicted shelf `εA_c`
/// evaluated at the fitted `(c₂, ρ₂)`.
pub fn shelf_compare(
    ctx: &FitContext,
    profiles: &CorrectionProfiles,
    grid: &Grid1D,
    u: &[f64],
    fit: &ModulationFit,
) -> Result<ShelfReport> {
    let window = trailing_window(grid, ctx.eps, fit.rho2)?;
    let z = residual_field(ctx, grid, u, fit);
    let idx = window_indices(grid, fit.rho2 + window[0], fit.rho2 + window[1]);
    let count = idx.clone().count();
    if count == 0 {
        return Err(Error::InvalidParameter("empty shelf window".into()));
    }
    let (mut num, mut den, mut zz, mut sz, mut sp, mut agree) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
    for j in idx {
        let y = grid.x(j) - fit.rho2;
        let p = ctx.eps * profiles.shelf(&ctx.potential, ctx.eps, fit.c2, fit.rho2, y);
        num += (z[j] - p).powi(2);
        den += p * p;
        zz += z[j] * z[j];
        sz += z[j];
        sp += p;
        if z[j] * p > 0.0 {
            agree += 1;
        }
    }
    let h = grid.h();
    Ok(ShelfReport {
        t: fit.t,
        window,
        rel_error: (num / den).sqrt(),
        measured_mean: sz / count as f64,
        predicted_mean: sp / count as f64,
        sign_agreement: agree as f64 / count as f64,
        predicted_norm: (den * h).sqrt(),
        measured_norm: (zz * h).sqrt(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L1Budget {
    pub t: f64,
    /// `∫u` over the grid.
    pub total: f64,
    /// `2^{-1/(m-1)} ∫Q_{c₂}`.
    pub soliton: f64,
    /// `total - soliton`.
    pub tail: f64,
    /// `∫(u - R)` over `x ∈ [x_min + margin, ρ₂ - 10]`.
    pub tail_window: f64,
    pub kappa: f64,
    /// `(1 - κ_m) ∫Q`.
    pub predicted_tail: f64,
    /// `|tail_window - predicted| / predicted`.
    pub rel_gap: f64,
}

pub fn l1_budget(
    ctx: &FitContext,
    grid: &Grid1D,
    u: &[f64],
    fit: &ModulationFit,
    c_infinity: f64,
) -> L1Budget {
    let k = &ctx.constants;
    let mf = k.mf();
    let int_q = sol::moment(k.m, 1.0);
    let h = grid.h();
    let total = h * u.iter().sum::<f64>();
    let soliton = 2f64.powf(-1.0 / (mf - 1.0)) * fit.c2.powf(1.0 / (mf - 1.0) - 0.5) * int_q;
    let z = residual_field(ctx, grid, u, fit);
    let tail_window =
        h * window_indices(grid, grid.x_min + EDGE_MARGIN, fit.rho2 - CORE_EXCLUSION).map(|j| z[j]).sum::<f64>();
    let kappa = kappa_m(k, c_infinity);
    let predicted_tail = (1.0 - kappa) * int_q;
    L1Budget {
        t: fit.t,
        total,
        soliton,
        tail: total - soliton,
        tail_window,
        kappa,
        predicted_tail,
        rel_gap: (tail_window - predicted_tail).abs() / predicted_tail,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NonvanishingReport {
    pub t_range: [f64; 2],
    pub min_w_h1: f64,
    pub t_at_min: f64,
    pub floor: f64,
    pub ratio: f64,
}

/// Minimum of `‖w⁺‖_{H¹}` over fits in `t_range`, against a noise floor.
pub fn nonvanishing_residual(fits: &[ModulationFit], t_range: [f64; 2], floor: f64) -> Result<NonvanishingReport> {
    let (min, t) = fits
        .iter()
        .filter(|f| f.t >= t_range[0] - 1e-9 && f.t <= t_range[1] + 1e-9)
        .fold((f64::INFINITY, f64::NAN), |acc, f| if f.w_h1 < acc.0 { (f.w_h1, f.t) } else { acc });
    if !min.is_finite() {
        return Err(Error::InvalidParameter("no fits inside the late-time window".into()));
    }
    Ok(NonvanishingReport { t_range, min_w_h1: min, t_at_min: t, floor, ratio: min / floor })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyBudget {
    pub t: f64,
    pub c_plus: f64,
    /// `E_a[u]` of the run.
    pub total: f64,
    /// `total - E_a[R]`, with `E_a[R] = 2^{-2/(m-1)} c^{2θ}(λ - λ₀c) M[Q]`.
    pub e_plus: f64,
    /// `E_a[u - R]` evaluated directly.
    pub e_plus_direct: f64,
    /// `(c⁺)^{2θ} 2^{-2/(m-1)} (λ₀c⁺ - λ) M[Q] + (λ - λ₀) M[Q]`.
    pub e_plus_formula: f64,
    pub identity_residual: f64,
    /// For `m = 3, λ = 0`: `(3/2 E⁺, (c⁺/c_∞)^{3/2} - 1)`.
    pub cubic_identity: Option<[f64; 2]>,
}

/// `E_a[w]` for a field on the grid.
pub fn energy_of(ctx: &FitContext, spectral: &Spectral, grid: &Grid1D, w: &[f64]) -> f64 {
    let (l2, d1) = squared_norms(spectral, grid, w);
    let m = ctx.constants.m as i32;
    let nl: f64 = w
        .iter()
        .enumerate()
        .map(|(j, v)| ctx.potential.a(ctx.eps * grid.x(j)) * v.powi(m + 1))
        .sum::<f64>()
        * grid.h();
    0.5 * d1 + 0.5 * ctx.constants.lambda * l2 - nl / (ctx.constants.mf() + 1.0)
}

pub fn energy_budget(
    ctx: &FitContext,
    grid: &Grid1D,
    u: &[f64],
    fit: &ModulationFit,
    c_infinity: f64,
) -> EnergyBudget {
    let k = &ctx.constants;
    let (mf, lam, l0, th) = (k.mf(), k.lambda, k.lambda0(), k.theta());
    let mq = 0.5 * sol::moment(k.m, 2.0);
    let spectral = Spectral::new(grid);
    let total = energy_of(ctx, &spectral, grid, u);
    let c = fit.c2;
    let s2 = 2f64.powf(-2.0 / (mf - 1.0));
    let soliton = s2 * c.powf(2.0 * th) * (lam - l0 * c) * mq;
    let z = residual_field(ctx, grid, u, fit);
    let e_plus = total - soliton;
    let e_plus_formula = c.powf(2.0 * th) * s2 * (l0 * c - lam) * mq + (lam - l0) * mq;
    let cubic_identity = (k.m == 3 && lam == 0.0).then(|| [1.5 * e_plus, (c / c_infinity).powf(1.5) - 1.0]);
    EnergyBudget {
        t: fit.t,
        c_plus: c,
        total,
        e_plus,
        e_plus_direct: energy_of(ctx, &spectral, grid, &z),
        e_plus_formula,
        identity_residual: (e_plus - e_plus_formula).abs(),
        cubic_identity,
    }
}

// Monitor weights.

fn smoothstep3(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Even profile with `φ = 1` on `[0, 1]`, `φ = e^{-|x|}` for `|x| ≥ 2`,
/// `φ' ≤ 0` on `[0, ∞)` and `e^{-|x|} ≤ φ ≤ 3e^{-|x|}`; built as
/// `exp(-|x| S(|x| - 1))` with the cubic smoothstep `S`.
pub fn virial_profile(x: f64) -> f64 {
    let a = x.abs();
    (-a * smoothstep3(a - 1.0)).exp()
}

fn psi_on_one_two() -> f64 {
    gauss_legendre(virial_profile, 1.0, 2.0, 0.05)
}

/// `ψ(x) = ∫₀^x φ`, odd.
pub fn virial_primitive(x: f64) -> f64 {
    let a = x.abs();
    let v = if a <= 1.0 {
        a
    } else if a <= 2.0 {
        1.0 + gauss_legendre(virial_profile, 1.0, a, 0.05)
    } else {
        1.0 + psi_on_one_two() + (-2f64).exp() - (-a).exp()
    };
    v.copysign(x)
}

/// `ψ(+∞)`
pub fn virial_primitive_limit() -> f64 {
    1.0 + psi_on_one_two() + (-2f64).exp()
}

/// `ψ_A(x) = A(ψ(+∞) + ψ(x/A))`; `ψ_A' = φ(x/A)`.
pub fn psi_a(a: f64, x: f64) -> f64 {
    a * (virial_primitive_limit() + virial_primitive(x / a))
}

pub fn psi_a_prime(a: f64, x: f64) -> f64 {
    virial_profile(x / a)
}

/// `φ_{K₀}(x) = (2/π) arctan(e^{x/K₀})`, written to keep `φ(-x) = 1 - φ(x)`
/// accurate in both tails.
pub fn phi_k(k0: f64, x: f64) -> f64 {
    if x <= 0.0 {
        2.0 / PI * (x / k0).exp().atan()
    } else {
        1.0 - 2.0 / PI * (-x / k0).exp().atan()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutoffCheck {
    pub psi_bounds_violation: f64,
    pub psi_odd_violation: f64,
    pub phi_reflection_violation: f64,
    pub phi_half: f64,
    pub phi_monotone: bool,
}

/// Evaluates the cutoff identities at every node of `grid`.
pub fn cutoff_identities(grid: &Grid1D, a0: f64, k0: f64) -> CutoffCheck {
    let mut out = CutoffCheck {
        psi_bounds_violation: 0.0,
        psi_odd_violation: 0.0,
        phi_reflection_violation: 0.0,
        phi_half: phi_k(k0, 0.0),
        phi_monotone: true,
    };
    let mut prev = f64::NEG_INFINITY;
    for x in grid.nodes() {
        let d = psi_a_prime(a0, x);
        let e = (-x.abs() / a0).exp();
        out.psi_bounds_violation = out.psi_bounds_violation.max(e - d).max(d - 3.0 * e);
        let odd = virial_primitive(x / a0) + virial_primitive(-x / a0);
        out.psi_odd_violation = out.psi_odd_violation.max(odd.abs());
        let p = phi_k(k0, x);
        out.phi_reflection_violation = out.phi_reflection_violation.max((phi_k(k0, -x) + p - 1.0).abs());
        if p < prev {
            out.phi_monotone = false;
        }
        prev = p;
    }
    out
}

/// Default monitor parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorParams {
    pub a0: f64,
    pub sigma: f64,
    pub k0: f64,
    pub x0: Vec<f64>,
}

impl MonitorParams {
    /// `A₀ = 10`, `σ = 0.4(c_∞-λ)`, `K₀ = 1.5√(2/σ)`, `x₀ ∈ {5, 10, 20}`.
    pub fn defaults(constants: &ModelConstants, c_infinity: f64) -> Self {
        let sigma = 0.4 * (c_infinity - constants.lambda);
        Self { a0: 10.0, sigma, k0: 1.5 * (2.0 / sigma).sqrt(), x0: vec![5.0, 10.0, 20.0] }
    }

    pub fn validate(&self, constants: &ModelConstants, c_infinity: f64) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.a0 > 0.0) {
            errs.push(format!("A0 must be positive, got {}", self.a0));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5 * (c_infinity - constants.lambda)) {
            errs.push(format!("sigma must lie in (0, (c_inf - lambda)/2), got {}", self.sigma));
        }
        if !(self.k0 > (2.0 / self.sigma).sqrt()) {
            errs.push(format!("K0 must exceed sqrt(2/sigma), got {}", self.k0));
        }
        if self.x0.is_empty() || self.x0.iter().any(|&x| !(x > 0.0)) {
            errs.push("x0 values must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(errs.join("; ")))
        }
    }
}

/// One row of `monitors.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonitorRow {
    pub t: f64,
    /// `∫z²ψ_{A₀}(x - ρ₂)`
    pub virial: f64,
    /// `∫(z_x² + z²) e^{-|x-ρ₂|/A₀}`
    pub localized: f64,
    /// `∫u²/a_ε`
    pub mass_back: f64,
}

/// Per-snapshot quantities reused by the monitors.
struct Densities {
    t: f64,
    rho2: f64,
    u2: Vec<f64>,
    energy: Vec<f64>,
    row: MonitorRow,
}

fn densities(ctx: &FitContext, spectral: &Spectral, grid: &Grid1D, u: &[f64], fit: &ModulationFit, a0: f64) -> Densities {
    let z = residual_field(ctx, grid, u, fit);
    let zx = spectral.derivative(&z, 1);
    let ux = spectral.derivative(u, 1);
    let m = ctx.constants.m as i32;
    let mf = ctx.constants.mf();
    let h = grid.h();
    let (mut vir, mut loc, mut back) = (0.0, 0.0, 0.0);
    let mut u2 = Vec::with_capacity(u.len());
    let mut energy = Vec::with_capacity(u.len());
    for j in 0..u.len() {
        let x = grid.x(j);
        let y = x - fit.rho2;
        let a = ctx.potential.a(ctx.eps * x);
        vir += z[j] * z[j] * psi_a(a0, y);
        loc += (zx[j] * zx[j] + z[j] * z[j]) * (-y.abs() / a0).exp();
        back += u[j] * u[j] / a;
        u2.push(u[j] * u[j]);
        energy.push(ux[j] * ux[j] + u[j] * u[j] - 2.0 * a / (mf + 1.0) * u[j].powi(m + 1));
    }
    Densities {
        t: fit.t,
        rho2: fit.rho2,
        u2,
        energy,
        row: MonitorRow { t: fit.t, virial: vir * h, localized: loc * h, mass_back: back * h },
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundTest {
    pub x0: f64,
    /// Largest value of the one-sided difference (0 if it never turns positive).
    pub violation: f64,
    /// `SLACK_MARGIN · K e^{-x₀/K₀}` with `K` fitted at the smallest `x₀`.
    pub slack: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub params: MonitorParams,
    pub fitted_k: [f64; 3],
    /// `I(t₀) - I(t)`, `t ≤ t₀`.
    pub i: Vec<BoundTest>,
    /// `Ĩ(t) - Ĩ(t₀)`, `t ≥ t₀`.
    pub i_tilde: Vec<BoundTest>,
    /// `J(t₀) - J(t)`, `t ≤ t₀`.
    pub j: Vec<BoundTest>,
    /// `max_{t' ≥ t} 𝓜(t) - 𝓜(t')` at each sample time.
    pub mass_back_drop: Vec<[f64; 2]>,
    /// `K e^{-εγt}` envelope of `mass_back_drop` fitted on its first half.
    pub mass_back_rate: f64,
    pub mass_back_pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonitorSeries {
    pub rows: Vec<MonitorRow>,
    /// Centered differences of the virial series, `(t, d/dt)`.
    pub virial_rate: Vec<[f64; 2]>,
    /// `∫ localized dt` by the trapezoid rule.
    pub localized_integral: f64,
}

/// Virial series and its time integral over the supplied samples.
pub fn virial_series(
    ctx: &FitContext,
    grid: &Grid1D,
    samples: &[(f64, &[f64])],
    fits: &[ModulationFit],
    a0: f64,
) -> MonitorSeries {
    let spectral = Spectral::new(grid);
    let rows: Vec<MonitorRow> = samples
        .par_iter()
        .zip(fits.par_iter())
        .map(|(&(_, u), fit)| densities(ctx, &spectral, grid, u, fit, a0).row)
        .collect();
    series_from_rows(rows)
}

fn series_from_rows(rows: Vec<MonitorRow>) -> MonitorSeries {
    let virial_rate = rows
        .windows(3)
        .map(|w| [w[1].t, (w[2].virial - w[0].virial) / (w[2].t - w[0].t)])
        .collect();
    let localized_integral = rows.windows(2).map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].localized + w[1].localized)).sum();
    MonitorSeries { rows, virial_rate, localized_integral }
}

/// Headroom on the fitted slack `K e^{-x₀/K₀}` at the larger `x₀`.
pub const SLACK_MARGIN: f64 = 2.0;

fn bound_tests(values: &[f64], x0s: &[f64], k0: f64) -> (Vec<BoundTest>, f64) {
    let k = values[0].max(0.0) * (x0s[0] / k0).exp();
    let tests = x0s
        .iter()
        .zip(values)
        .map(|(&x0, &v)| {
            let slack = SLACK_MARGIN * k * (-x0 / k0).exp();
            BoundTest { x0, violation: v.max(0.0), slack, pass: v <= slack * (1.0 + 1e-9) + 1e-14 }
        })
        .collect();
    (tests, k)
}

/// Monotonicity monitors over post-interaction samples (time ordered).
pub fn monotonicity_series(
    ctx: &FitContext,
    grid: &Grid1D,
    samples: &[(f64, &[f64])],
    fits: &[ModulationFit],
    params: &MonitorParams,
    c_infinity: f64,
    decay_rate: f64,
) -> Result<(MonitorSeries, MonotonicityReport)> {
    params.validate(&ctx.constants, c_infinity)?;
    if samples.len() < 2 || samples.len() != fits.len() {
        return Err(Error::InvalidParameter("need matching samples and fits, at least two".into()));
    }
    let spectral = Spectral::new(grid);
    let dens: Vec<Densities> = samples
        .par_iter()
        .zip(fits.par_iter())
        .map(|(&(_, u), fit)| densities(ctx, &spectral, grid, u, fit, params.a0))
        .collect();
    let nodes = grid.nodes();
    let h = grid.h();
    let weighted = |_d: &Densities, which: &[f64], shift: f64| -> f64 {
        which.iter().zip(&nodes).map(|(w, &x)| w * phi_k(params.k0, x - shift)).sum::<f64>() * h
    };
    let line = |t0: &Densities, t: f64, x0: f64| t0.rho2 + params.sigma * (t - t0.t) + x0;
    let n = dens.len();
    let mut worst_i = vec![0.0_f64; params.x0.len()];
    let mut worst_it = vec![0.0_f64; params.x0.len()];
    let mut worst_j = vec![0.0_f64; params.x0.len()];
    for (q, &x0) in params.x0.iter().enumerate() {
        let per_t0: Vec<[f64; 3]> = (0..n)
            .into_par_iter()
            .map(|b| {
                let t0 = &dens[b];
                let i_t0 = weighted(t0, &t0.u2, line(t0, t0.t, x0));
                let j_t0 = weighted(t0, &t0.energy, line(t0, t0.t, x0));
                let it_t0 = weighted(t0, &t0.u2, line(t0, t0.t, -x0));
                let (mut wi, mut wj, mut wit) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for d in &dens[..b] {
                    wi = wi.max(i_t0 - weighted(d, &d.u2, line(t0, d.t, x0)));
                    wj = wj.max(j_t0 - weighted(d, &d.energy, line(t0, d.t, x0)));
                }
                for d in &dens[b + 1..] {
                    wit = wit.max(weighted(d, &d.u2, line(t0, d.t, -x0)) - it_t0);
                }
                [wi, wj, wit]
            })
            .collect();
        for v in per_t0 {
            worst_i[q] = worst_i[q].max(v[0]);
            worst_j[q] = worst_j[q].max(v[1]);
            worst_it[q] = worst_it[q].max(v[2]);
        }
    }
    let (i, ki) = bound_tests(&worst_i, &params.x0, params.k0);
    let (it, kit) = bound_tests(&worst_it, &params.x0, params.k0);
    let (j, kj) = bound_tests(&worst_j, &params.x0, params.k0);

    let rows: Vec<MonitorRow> = dens.iter().map(|d| d.row.clone()).collect();
    let mut drop = Vec::with_capacity(n);
    let mut later_min = f64::INFINITY;
    for d in dens.iter().rev() {
        drop.push([d.t, (d.row.mass_back - later_min).max(0.0)]);
        later_min = later_min.min(d.row.mass_back);
    }
    drop.reverse();
    drop.pop();
    // Envelope K e^{-εγt} anchored at the largest drop in the first half.
    let rate = ctx.eps * decay_rate;
    let half = drop.len().div_ceil(2);
    let k_env = drop[..half].iter().map(|&[t, v]| v * (rate * t).exp()).fold(0.0, f64::max);
    let mass_back_pass = drop[half..].iter().all(|&[t, v]| v <= k_env * (-rate * t).exp() * (1.0 + 1e-9) + 1e-14);
    let report = MonotonicityReport {
        params: params.clone(),
        fitted_k: [ki, kit, kj],
        i,
        i_tilde: it,
        j,
        mass_back_drop: drop,
        mass_back_rate: rate,
        mass_back_pass,
    };
    Ok((series_from_rows(rows), report))
}

/// Best time shift `τ` with `ρ_adiabatic(t + τ) = ρ₂(t)`, to first order.
pub fn time_shift(fit: &ModulationFit, rho_adiabatic: f64, speed: f64) -> f64 {
    (fit.rho2 - rho_adiabatic) / speed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(lambda: f64) -> FitContext {
        FitContext { constants: ModelConstants::new(3, lambda).unwrap(), potential: PotentialSpec::default(), eps: 0.05 }
    }

    fn bump(ctx: &FitContext, grid: &Grid1D, t: f64, c: f64, rho: f64) -> Vec<f64> {
        let s = ctx.normalization(ctx.phase(t), rho);
        grid.sample(|x| s * sol::q_c(3, c, x - rho))
    }

    #[test]
    fn exact_soliton_is_recovered() {
        let c = ctx(0.1);
        let grid = Grid1D::symmetric(100.0, 4096).unwrap();
        let spec = Spectral::new(&grid);
        for (t, c0, r0) in [(0.0, 1.23, 3.7), (40.0, 1.41, -12.2)] {
            let u = bump(&c, &grid, t, c0, r0);
            let fit = fit_modulation(&c, &spec, &grid, t, &u, None).unwrap();
            assert!((fit.c2 - c0).abs() < 1e-10, "{fit:?}");
            assert!((fit.rho2 - r0).abs() < 1e-10, "{fit:?}");
            assert!(fit.resid[0].abs() < 1e-10 && fit.resid[1].abs() < 1e-10);
            assert!(fit.w_h1 < 1e-9);
        }
    }

    #[test]
    fn refit_is_bitwise_idempotent() {
        let c = ctx(0.1);
        let grid = Grid1D::symmetric(100.0, 4096).unwrap();
        let spec = Spectral::new(&grid);
        let mut u = bump(&c, &grid, 0.0, 1.2, 0.4);
        for (j, v) in u.iter_mut().enumerate() {
            *v += 1e-3 * (0.3 * j as f64).sin() * (-(grid.x(j) / 20.0).powi(2)).exp();
        }
        let f1 = fit_modulation(&c, &spec, &grid, 0.0, &u, None).unwrap();
        let f2 = fit_modulation(&c, &spec, &grid, 0.0, &u, Some([f1.c2, f1.rho2])).unwrap();
        assert_eq!(f1.c2.to_bits(), f2.c2.to_bits());
        assert_eq!(f1.rho2.to_bits(), f2.rho2.to_bits());
        assert_eq!(f2.iterations, 0);
    }

    #[test]
    fn noise_moves_fit_linearly() {
        let c = ctx(0.1);
        let grid = Grid1D::symmetric(100.0, 4096).unwrap();
        let spec = Spectral::new(&grid);
        let base = bump(&c, &grid, 0.0, 1.2, 0.4);
        let noise: Vec<f64> =
            grid.sample(|x| (0.7 * x + 0.3).sin() * (-(x / 15.0).powi(2)).exp());
        let shift = |amp: f64| {
            let u: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + amp * n).collect();
            let f = fit_modulation(&c, &spec, &grid, 0.0, &u, None).unwrap();
            (f.c2 - 1.2).abs()
        };
        let (d1, d2) = (shift(1e-3), shift(2e-3));
        assert!(d1 < 1e-2, "{d1}");
        assert!((d2 / d1 - 2.0).abs() < 0.1, "{d1} {d2}");
    }

    #[test]
    fn rejects_flat_field() {
        let c = ctx(0.1);
        let grid = Grid1D::symmetric(50.0, 1024).unwrap();
        let spec = Spectral::new(&grid);
        let u = vec![1e-4; 1024];
        assert!(fit_modulation(&c, &spec, &grid, 0.0, &u, None).is_err());
    }

    #[test]
    fn kappa_examples() {
        let k3 = ModelConstants::new(3, 0.0).unwrap();
        let c3 = sol::solve_c_infinity(&k3).unwrap();
        assert!((kappa_m(&k3, c3) - 0.5f64.sqrt()).abs() < 1e-14);
        let tail = (1.0 - kappa_m(&k3, c3)) * sol::moment(3, 1.0);
        assert!((tail - 1.3015).abs() < 5e-4, "{tail}");
        let k2 = ModelConstants::new(2, 0.0).unwrap();
        let c2 = sol::solve_c_infinity(&k2).unwrap();
        assert!((kappa_m(&k2, c2) - 2f64.powf(-0.6)).abs() < 1e-12);
        for m in 2..=4 {
            let k = ModelConstants::new(m, 0.5 * sol::lambda0(m)).unwrap();
            let ci = sol::solve_c_infinity(&k).unwrap();
            let lhs = 2f64.powf(-1.0 / (k.mf() - 1.0)) * ci.powf(k.theta() - 0.25) * sol::moment(m, 1.0);
            assert!((lhs - kappa_m(&k, ci) * sol::moment(m, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoffs_satisfy_their_bounds() {
        let grid = Grid1D::symmetric(200.0, 8192).unwrap();
        let chk = cutoff_identities(&grid, 10.0, 3.0);
        assert!(chk.psi_bounds_violation <= 0.0, "{chk:?}");
        assert!(chk.psi_odd_violation < 1e-14);
        assert!(chk.phi_reflection_violation < 1e-15);
        assert_eq!(chk.phi_half, 0.5);
        assert!(chk.phi_monotone);
        assert!((psi_a(10.0, -1e4)).abs() < 1e-12);
        let d = 1e-5;
        for x in [-15.0, -3.0, 0.5, 12.0, 25.0] {
            let fd = (psi_a(10.0, x + d) - psi_a(10.0, x - d)) / (2.0 * d);
            assert!((fd - psi_a_prime(10.0, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_residual_gives_zero_virial() {
        let c = ctx(0.1);
        let grid = Grid1D::symmetric(100.0, 2048).unwrap();
        let spec = Spectral::new(&grid);
        let u = bump(&c, &grid, 0.0, 1.3, 0.0);
        let fit = fit_modulation(&c, &spec, &grid, 0.0, &u, None).unwrap();
        let s = virial_series(&c, &grid, &[(0.0, &u)], &[fit], 10.0);
        assert!(s.rows[0].virial < 1e-18 && s.rows[0].localized < 1e-18);
    }

    #[test]
    fn zero_field_monitors_vanish() {
        let c = ctx(0.1);
        let grid = Grid1D::symmetric(100.0, 1024).unwrap();
        let u = vec![0.0; 1024];
        let fits: Vec<ModulationFit> = (0..3)
            .map(|i| ModulationFit {
                t: 50.0 + i as f64,
                c2: 1.4,
                rho2: i as f64,
                resid: [0.0; 2],
                iterations: 0,
                phase: Phase::Post,
                normalization: 0.0,
                w_h1: 0.0,
            })
            .collect();
        let samples: Vec<(f64, &[f64])> = fits.iter().map(|f| (f.t, u.as_slice())).collect();
        let ci = sol::solve_c_infinity(&c.constants).unwrap();
        let params = MonitorParams::defaults(&c.constants, ci);
        let (series, rep) = monotonicity_series(&c, &grid, &samples, &fits, &params, ci, 1.0).unwrap();
        assert!(series.rows.iter().all(|r| r.virial == 0.0 && r.mass_back == 0.0));
        assert!(rep.i.iter().chain(&rep.j).chain(&rep.i_tilde).all(|b| b.violation == 0.0 && b.pass));
    }

    #[test]
    fn monitor_parameter_constraints() {
        let k = ModelConstants::new(3, 0.1).unwrap();
        let ci = sol::solve_c_infinity(&k).unwrap();
        let mut p = MonitorParams::defaults(&k, ci);
        assert!(p.validate(&k, ci).is_ok());
        p.k0 = 0.5;
        assert!(p.validate(&k, ci).is_err());
    }
}
