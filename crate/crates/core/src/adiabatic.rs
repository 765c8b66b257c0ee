//! Modulation ODE for the soliton scaling `c(t)` and position `ρ(t)`:
//!
//! ```text
//! c' = ε p c (c - λ/λ₀) a'(ερ) / a(ερ),    ρ' = c - λ,
//! c(-T_ε) = 1,  ρ(-T_ε) = -(1-λ) T_ε,      T_ε = ε^{-1.01} / (1-λ).
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{dopri5, rk4, Dopri5Options, Trajectory};
use crate::potential::{require_hypotheses, PotentialSpec};
use crate::soliton::{solve_c_infinity, ModelConstants};

/// Interaction half-time `T_ε = ε^{-1.01} / (1-λ)`.
pub fn t_eps(eps: f64, lambda: f64) -> f64 {
    eps.powf(-1.01) / (1.0 - lambda)
}

/// Integration horizon in units of `T_ε`.
pub const HORIZON: f64 = 10.0;

pub fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 0.5], got {eps}")));
    }
    Ok(())
}

/// Right-hand side `[c', ρ']` at state `[c, ρ]`.
pub fn modulation_rhs(
    constants: &ModelConstants,
    potential: &PotentialSpec,
    eps: f64,
    y: &[f64; 2],
) -> [f64; 2] {
    let [c, rho] = *y;
    let j = potential.jet(eps * rho);
    let shift = if constants.at_critical_lambda() { 1.0 } else { constants.lambda / constants.lambda0() };
    [eps * constants.p() * c * (c - shift) * j.d1 / j.a, c - constants.lambda]
}

/// Slow-time derivative `dc/ds` (with `s = εt`) at state `[c, ρ]`.
pub fn dc_ds(constants: &ModelConstants, potential: &PotentialSpec, eps: f64, y: &[f64; 2]) -> f64 {
    modulation_rhs(constants, potential, eps, y)[0] / eps
}

#[derive(Clone, Debug)]
pub struct AdiabaticTrajectory {
    pub constants: ModelConstants,
    pub potential: PotentialSpec,
    pub eps: f64,
    pub t_eps: f64,
    pub c_infinity: f64,
    pub path: Trajectory<2>,
}

/// Integrates on `[-T_ε, 10 T_ε]` with adaptive Dormand-Prince at
/// `rtol = 1e-10`; `-T_ε`, `0` and `T_ε` are stored exactly.
pub fn integrate_adiabatic(
    constants: &ModelConstants,
    potential: &PotentialSpec,
    eps: f64,
    allow_out_of_theory: bool,
) -> Result<AdiabaticTrajectory> {
    check_eps(eps)?;
    if !allow_out_of_theory {
        constants.check_in_theory()?;
    }
    require_hypotheses(potential, constants.m, allow_out_of_theory)?;
    let te = t_eps(eps, constants.lambda);
    let opts = Dopri5Options { h_init: 1e-2, h_max: te / 20.0, ..Dopri5Options::default() };
    let y0 = [1.0, -(1.0 - constants.lambda) * te];
    let path = dopri5(
        |_, y| modulation_rhs(constants, potential, eps, y),
        -te,
        y0,
        HORIZON * te,
        &[0.0, te],
        &opts,
    )?;
    let c_infinity = if constants.lambda <= constants.lambda0() {
        solve_c_infinity(constants)?
    } else {
        f64::NAN
    };
    Ok(AdiabaticTrajectory {
        constants: *constants,
        potential: *potential,
        eps,
        t_eps: te,
        c_infinity,
        path,
    })
}

/// Fixed-step RK4 over the same window, returning the final `[c, ρ]`.
pub fn integrate_rk4(
    constants: &ModelConstants,
    potential: &PotentialSpec,
    eps: f64,
    steps: usize,
) -> [f64; 2] {
    let te = t_eps(eps, constants.lambda);
    rk4(
        |_, y| modulation_rhs(constants, potential, eps, y),
        -te,
        [1.0, -(1.0 - constants.lambda) * te],
        HORIZON * te,
        steps,
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitBounds {
    pub rho_exit: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub c_upper: f64,
    pub pass: bool,
}

impl AdiabaticTrajectory {
    pub fn t_start(&self) -> f64 {
        -self.t_eps
    }

    /// `[c, ρ]` at time `t` (cubic Hermite between accepted steps).
    pub fn state(&self, t: f64) -> [f64; 2] {
        self.path.eval(t)
    }

    /// State at `t + dt` reached by one RK4 step from the interpolated state
    /// at `t`; used for short centered differences.
    pub fn state_offset(&self, t: f64, dt: f64) -> [f64; 2] {
        let y = self.state(t);
        rk4(|_, y| modulation_rhs(&self.constants, &self.potential, self.eps, y), t, y, t + dt, 1)
    }

    pub fn rhs(&self, y: &[f64; 2]) -> [f64; 2] {
        modulation_rhs(&self.constants, &self.potential, self.eps, y)
    }

    /// `a(ερ(-T_ε))`, the medium seen at the start of the window.
    pub fn entry_coefficient(&self) -> f64 {
        self.potential.a(self.eps * self.path.y[0][1])
    }

    fn integral_lhs(&self, c: f64) -> f64 {
        let l0 = self.constants.lambda0();
        let r = if self.constants.at_critical_lambda() { 1.0 } else { self.constants.lambda / l0 };
        c.powf(l0) * (c - r).max(0.0).powf(1.0 - l0)
    }

    fn integral_rhs(&self, rho: f64) -> f64 {
        let l0 = self.constants.lambda0();
        let r = if self.constants.at_critical_lambda() { 1.0 } else { self.constants.lambda / l0 };
        let p = self.constants.p();
        (1.0 - r).max(0.0).powf(1.0 - l0) * (self.potential.a(self.eps * rho) / self.entry_coefficient()).powf(p)
    }

    /// `max_t |c^{λ₀}(c-λ/λ₀)^{1-λ₀} - (1-λ/λ₀)^{1-λ₀} a^p(ερ)/a^p(ερ(-T_ε))|`
    /// over the stored steps.
    pub fn first_integral_drift(&self) -> f64 {
        self.path
            .y
            .iter()
            .map(|&[c, rho]| (self.integral_lhs(c) - self.integral_rhs(rho)).abs())
            .fold(0.0, f64::max)
    }

    /// Limit of `c` implied by the first integral when `a(ερ) → a_plus`.
    pub fn c_limit_from_integral(&self) -> Result<f64> {
        if self.constants.at_critical_lambda() {
            return Ok(1.0);
        }
        let l0 = self.constants.lambda0();
        let r = self.constants.lambda / l0;
        let target = (1.0 - r).max(0.0).powf(1.0 - l0)
            * (self.potential.a_plus / self.entry_coefficient()).powf(self.constants.p());
        let (mut lo, mut hi) = (1.0, 2f64.powf(4.0 / (5.0 - self.constants.mf())) * 2.0);
        if !(self.integral_lhs(lo) <= target && self.integral_lhs(hi) >= target) {
            return Err(Error::NotBracketed("first-integral limit".into()));
        }
        while hi - lo > 1e-15 * hi {
            let mid = 0.5 * (lo + hi);
            if self.integral_lhs(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn exit_bounds(&self) -> ExitBounds {
        let te = self.t_eps;
        let lam = self.constants.lambda;
        let rho_exit = self.state(te)[1];
        let (c_min, c_max) = self
            .path
            .y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y[0]), hi.max(y[0])));
        let c_upper = 2f64.powf(4.0 / (5.0 - self.constants.mf()));
        let rho_lower = (1.0 - lam) * te;
        let rho_upper = (2.0 * self.c_infinity - lam - 1.0) * te;
        let tol = 1e-12 * te;
        let pass = rho_exit >= rho_lower - tol
            && rho_exit <= rho_upper + tol
            && c_min >= 1.0 - 1e-12
            && c_max <= c_upper;
        ExitBounds { rho_exit, rho_lower, rho_upper, c_min, c_max, c_upper, pass }
    }

    /// Rows `(t, c, ρ, dc/dt, dρ/dt)` at the given times.
    pub fn sample(&self, times: &[f64]) -> Vec<[f64; 5]> {
        times
            .iter()
            .map(|&t| {
                let y = self.state(t);
                let d = self.rhs(&y);
                [t, y[0], y[1], d[0], d[1]]
            })
            .collect()
    }

    pub fn final_state(&self) -> [f64; 2] {
        self.path.last()
    }
}
