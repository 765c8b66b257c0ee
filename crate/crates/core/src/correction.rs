//! Shelf correction behind the soliton and the residual of the corrected
//! approximate solution `ũ = R + ε A_#`.
//!
//! The model problem `(𝓛₀ A)' = F` with even `F ∈ 𝓨`, `∫ F Q = 0` has a
//! bounded solution `A = β(φ - 1) + A₁`, `β = ½∫F`, `A₁ ∈ 𝓨`, `∫ A₁ Q' = 0`,
//! so that `A(+∞) = 0` and `A(-∞) = -2β`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adiabatic::AdiabaticTrajectory;
use crate::error::{Error, Result};
use crate::grid::{inner, l2_norm, trapezoid, Grid1D, Spectral};
use crate::linalg::{gmres, GmresOptions};
use crate::potential::PotentialSpec;
use crate::soliton::{self as sol, ModelConstants};

/// `F̃₁ = p ΛQ - Q/(m-1) + (y Q^m)'`.
pub fn forcing_tilde(m: u32, y: f64) -> f64 {
    let mf = m as f64;
    let q = sol::q(m, y);
    let ym = q.powi(m as i32) + mf * y * q.powi(m as i32 - 1) * sol::dq(m, y);
    4.0 / (mf + 3.0) * sol::lambda_q(m, y) - q / (mf - 1.0) + ym
}

/// `F̂₁ = Q/(m-1) - 4 ΛQ/(5-m)`.
pub fn forcing_hat(m: u32, y: f64) -> f64 {
    let mf = m as f64;
    sol::q(m, y) / (mf - 1.0) - 4.0 / (5.0 - mf) * sol::lambda_q(m, y)
}

/// `β̃ = ½∫F̃₁ = -3∫Q / (2(m+3))`.
pub fn beta_tilde(m: u32) -> f64 {
    -3.0 * sol::moment(m, 1.0) / (2.0 * (m as f64 + 3.0))
}

/// `β̂ = ½∫F̂₁ = ∫Q / (2(5-m))`.
pub fn beta_hat(m: u32) -> f64 {
    sol::moment(m, 1.0) / (2.0 * (5.0 - m as f64))
}

/// Default grid of the model problem.
pub fn model_grid() -> Grid1D {
    Grid1D::symmetric(48.0, 4096).expect("static grid")
}

/// Bounded solution of the model problem on a grid.
#[derive(Clone, Debug)]
pub struct ModelSolution {
    pub m: u32,
    pub grid: Grid1D,
    pub beta: f64,
    /// `A₁ ∈ 𝓨`, with `∫ A₁ Q' = 0`.
    pub decaying: Vec<f64>,
    /// Full profile `A = β(φ - 1) + A₁`.
    pub profile: Vec<f64>,
    /// Lagrange multiplier of the orthogonality constraint.
    pub multiplier: f64,
    /// `‖(𝓛₀A)' - F‖` in the discrete L² norm.
    pub residual_l2: f64,
    pub gmres_iterations: usize,
}

/// Solves `(𝓛₀A)' = F` for `F` sampled on `grid`.
///
/// The primitive of `F` is taken spectrally after subtracting `βφ'`, and the
/// decaying part solves the bordered system `𝓛₀A₁ + μQ' = r`, `⟨A₁, Q'⟩ = 0`
/// by Fourier collocation and GMRES preconditioned with `(1 - ∂²)⁻¹`.
pub fn solve_model_problem(m: u32, grid: &Grid1D, f: &[f64]) -> Result<ModelSolution> {
    if f.len() != grid.n {
        return Err(Error::InvalidParameter("forcing length does not match grid".into()));
    }
    if grid.h() > 0.1 || grid.x_min > -30.0 || grid.x_max < 30.0 {
        return Err(Error::GridTooCoarse(format!(
            "model problem needs h <= 0.1 on at least [-30, 30], got h = {} on [{}, {}]",
            grid.h(),
            grid.x_min,
            grid.x_max
        )));
    }
    let mf = m as f64;
    let n = grid.n;
    let xs = grid.nodes();
    let q: Vec<f64> = xs.iter().map(|&x| sol::q(m, x)).collect();
    let dq: Vec<f64> = xs.iter().map(|&x| sol::dq(m, x)).collect();
    let pot: Vec<f64> = q.iter().map(|v| mf * v.powi(m as i32 - 1)).collect();
    let phi: Vec<f64> = xs.iter().map(|&x| sol::phi(m, x)).collect();
    let dphi: Vec<f64> = xs.iter().map(|&x| sol::dphi(m, x)).collect();
    let d2phi: Vec<f64> = xs.iter().map(|&x| sol::d2phi(m, x)).collect();
    let d3phi: Vec<f64> = xs.iter().map(|&x| sol::d3phi(m, x)).collect();

    let fq = inner(grid, f, &q);
    let scale = l2_norm(grid, f).max(1.0);
    if fq.abs() > 1e-8 * scale {
        return Err(Error::InvalidParameter(format!("forcing is not orthogonal to Q: ∫FQ = {fq:e}")));
    }
    let beta = 0.5 * trapezoid(grid, f);
    let spec = Spectral::new(grid);

    let g_src: Vec<f64> = (0..n).map(|j| f[j] - beta * dphi[j]).collect();
    let (g, _) = spec.antiderivative(&g_src);
    let rhs: Vec<f64> =
        (0..n).map(|j| g[j] + beta * d2phi[j] + beta * pot[j] * (phi[j] - 1.0)).collect();

    let dq_norm2 = inner(grid, &dq, &dq);
    let project = |v: &[f64]| -> Vec<f64> {
        let s = inner(grid, v, &dq) / dq_norm2;
        v.iter().zip(&dq).map(|(a, b)| a - s * b).collect()
    };
    let l0 = |w: &[f64]| -> Vec<f64> {
        let w2 = spec.derivative(w, 2);
        (0..n).map(|j| -w2[j] + w[j] - pot[j] * w[j]).collect()
    };
    let k = spec.wavenumbers().to_vec();
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut s = spec.forward(&project(r));
        for (j, v) in s.iter_mut().enumerate() {
            *v /= 1.0 + k[j] * k[j];
        }
        project(&spec.inverse(s))
    };
    let b = project(&rhs);
    let opts = GmresOptions { tol: 1e-11, ..GmresOptions::default() };
    let out = gmres(|w| project(&l0(&project(w))), precond, &b, &opts)?;
    let a1 = project(&out.x);
    let la1 = l0(&a1);
    let defect: Vec<f64> = (0..n).map(|j| rhs[j] - la1[j]).collect();
    let multiplier = inner(grid, &defect, &dq) / dq_norm2;
    if !multiplier.is_finite() {
        return Err(Error::Singular("non-finite multiplier".into()));
    }

    let profile: Vec<f64> = (0..n).map(|j| beta * (phi[j] - 1.0) + a1[j]).collect();
    let d_la1 = spec.derivative(&la1, 1);
    let res: Vec<f64> = (0..n)
        .map(|j| {
            let x = xs[j];
            let dpot = mf * (mf - 1.0) * q[j].powi(m as i32 - 2) * sol::dq(m, x);
            let d_lphi = -d3phi[j] + (1.0 - pot[j]) * dphi[j] - dpot * (phi[j] - 1.0);
            beta * d_lphi + d_la1[j] - f[j]
        })
        .collect();
    Ok(ModelSolution {
        m,
        grid: *grid,
        beta,
        decaying: a1,
        profile,
        multiplier,
        residual_l2: l2_norm(grid, &res),
        gmres_iterations: out.iterations,
    })
}

/// Degree-7 Lagrange interpolation on a uniform grid; zero outside the
/// interior `[x_min + 4h, x_max - 4h]`.
fn interp_uniform(grid: &Grid1D, v: &[f64], x: f64) -> f64 {
    let h = grid.h();
    let s = (x - grid.x_min) / h;
    let i0 = s.floor() as isize - 3;
    if i0 < 0 || (i0 + 7) as usize >= grid.n {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..8isize {
        let mut w = 1.0;
        let sa = s - (i0 + a) as f64;
        if sa == 0.0 {
            return v[(i0 + a) as usize];
        }
        for b in 0..8isize {
            if b != a {
                w *= (s - (i0 + b) as f64) / (a - b) as f64;
            }
        }
        total += w * v[(i0 + a) as usize];
    }
    total
}

impl ModelSolution {
    /// `A(y)` at an arbitrary point.
    pub fn eval(&self, y: f64) -> f64 {
        self.beta * (sol::phi(self.m, y) - 1.0) + interp_uniform(&self.grid, &self.decaying, y)
    }

    pub fn far_left(&self) -> f64 {
        self.profile[0]
    }

    pub fn far_right(&self) -> f64 {
        self.profile[self.grid.n - 1]
    }
}

/// The two model-problem solutions `Ã` (forcing `F̃₁`) and `Â` (forcing `F̂₁`).
#[derive(Clone, Debug)]
pub struct CorrectionProfiles {
    pub constants: ModelConstants,
    pub tilde: ModelSolution,
    pub hat: ModelSolution,
}

impl CorrectionProfiles {
    pub fn compute(constants: &ModelConstants) -> Result<Self> {
        let grid = model_grid();
        let m = constants.m;
        let ft = grid.sample(|y| forcing_tilde(m, y));
        let fh = grid.sample(|y| forcing_hat(m, y));
        Ok(Self {
            constants: *constants,
            tilde: solve_model_problem(m, &grid, &ft)?,
            hat: solve_model_problem(m, &grid, &fh)?,
        })
    }

    /// Shelf profile
    /// `A_c(y) = (a'/ã^m)(ερ) c^{1/(m-1)-1/2} [Ã + λc⁻¹Â](√c y)`, `ã = a^{1/(m-1)}`.
    pub fn shelf(&self, potential: &PotentialSpec, eps: f64, c: f64, rho: f64, y: f64) -> f64 {
        let h = self.amplitude(potential, eps, rho);
        let mf = self.constants.mf();
        let z = c.sqrt() * y;
        h * c.powf(1.0 / (mf - 1.0) - 0.5)
            * (self.tilde.eval(z) + self.constants.lambda / c * self.hat.eval(z))
    }

    /// `h = a'(ερ) / ã^m(ερ)`.
    pub fn amplitude(&self, potential: &PotentialSpec, eps: f64, rho: f64) -> f64 {
        let j = potential.jet(eps * rho);
        let mf = self.constants.mf();
        j.d1 / j.a.powf(mf / (mf - 1.0))
    }

    /// Plateau coefficient `b = a' c^{1/(m-1)-1} (β̃ + λβ̂/c) / ã^m`, so that
    /// `A_c(-∞) = -2√c b`.
    pub fn plateau_coefficient(&self, potential: &PotentialSpec, eps: f64, c: f64, rho: f64) -> f64 {
        let mf = self.constants.mf();
        self.amplitude(potential, eps, rho)
            * c.powf(1.0 / (mf - 1.0) - 1.0)
            * (self.tilde.beta + self.constants.lambda / c * self.hat.beta)
    }
}

/// Quintic smoothstep: 0 for `s ≤ -1`, 1 for `s ≥ 1`, `|η'| ≤ 15/16`.
pub fn cutoff(s: f64) -> f64 {
    let u = (0.5 * (s + 1.0)).clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// `η(εy + 2)`: zero for `y ≤ -3/ε`, one for `y ≥ -1/ε`.
pub fn cutoff_eps(eps: f64, y: f64) -> f64 {
    cutoff(eps * y + 2.0)
}

/// A space-time field with an analytic or semi-analytic time derivative.
pub trait ApproximateField {
    fn field(&self, t: f64, xs: &[f64]) -> Vec<f64>;
    fn time_derivative(&self, t: f64, xs: &[f64]) -> Vec<f64>;
    /// Position of the soliton at time `t`.
    fn center(&self, t: f64) -> f64;
}

/// `Q_c(x - x₀ - (c-λ)t)`, an exact solution when `a ≡ 1`.
#[derive(Clone, Copy, Debug)]
pub struct TravelingSoliton {
    pub constants: ModelConstants,
    pub c: f64,
    pub x0: f64,
}

impl ApproximateField for TravelingSoliton {
    fn field(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let x0 = self.center(t);
        xs.iter().map(|&x| sol::q_c(self.constants.m, self.c, x - x0)).collect()
    }

    fn time_derivative(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let x0 = self.center(t);
        let v = self.c - self.constants.lambda;
        xs.iter().map(|&x| -v * sol::dq_c(self.constants.m, self.c, x - x0)).collect()
    }

    fn center(&self, t: f64) -> f64 {
        self.x0 + (self.c - self.constants.lambda) * t
    }
}

/// Time step of the centered difference applied to `ε A_#`.
pub const SHELF_TIME_STEP: f64 = 1e-4;

/// `ũ = R + ε A_#` built on an adiabatic trajectory, with
/// `R = Q_{c(t)}(x - ρ(t)) / ã(ερ(t))`.
#[derive(Clone, Debug)]
pub struct ApproximateSolution {
    pub trajectory: Arc<AdiabaticTrajectory>,
    pub profiles: Arc<CorrectionProfiles>,
    pub corrected: bool,
}

impl ApproximateSolution {
    pub fn new(
        trajectory: Arc<AdiabaticTrajectory>,
        profiles: Arc<CorrectionProfiles>,
        corrected: bool,
    ) -> Self {
        Self { trajectory, profiles, corrected }
    }

    fn eps(&self) -> f64 {
        self.trajectory.eps
    }

    fn a_tilde(&self, rho: f64) -> f64 {
        let mf = self.trajectory.constants.mf();
        self.trajectory.potential.a(self.eps() * rho).powf(1.0 / (mf - 1.0))
    }

    /// `ε A_#` at state `[c, ρ]`.
    fn correction_at(&self, state: [f64; 2], xs: &[f64]) -> Vec<f64> {
        let [c, rho] = state;
        let eps = self.eps();
        let pot = &self.trajectory.potential;
        xs.iter()
            .map(|&x| {
                let y = x - rho;
                let eta = cutoff_eps(eps, y);
                if eta == 0.0 {
                    0.0
                } else {
                    eps * eta * self.profiles.shelf(pot, eps, c, rho, y)
                }
            })
            .collect()
    }

    /// `ε A_c(y)` without cutoff at time `t`.
    pub fn shelf(&self, t: f64, ys: &[f64]) -> Vec<f64> {
        let [c, rho] = self.trajectory.state(t);
        let eps = self.eps();
        ys.iter()
            .map(|&y| eps * self.profiles.shelf(&self.trajectory.potential, eps, c, rho, y))
            .collect()
    }

    /// Leading forcing `ε F₁` at time `t`, with
    /// `F₁ = (a'/ã^m)[p c (c - λ/λ₀) ΛQ_c - (c-λ) Q_c/(m-1) + (y Q_c^m)']`.
    pub fn leading_forcing(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let k = &self.trajectory.constants;
        let (m, mf) = (k.m, k.mf());
        let [c, rho] = self.trajectory.state(t);
        let eps = self.eps();
        let h = self.profiles.amplitude(&self.trajectory.potential, eps, rho);
        let shift = if k.at_critical_lambda() { 1.0 } else { k.lambda / k.lambda0() };
        xs.iter()
            .map(|&x| {
                let y = x - rho;
                let qc = sol::q_c(m, c, y);
                let yqm = qc.powi(m as i32) + mf * y * qc.powi(m as i32 - 1) * sol::dq_c(m, c, y);
                eps * h
                    * (k.p() * c * (c - shift) * sol::lambda_q_c(m, c, y)
                        - (c - k.lambda) * qc / (mf - 1.0)
                        + yqm)
            })
            .collect()
    }
}

impl ApproximateField for ApproximateSolution {
    fn field(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let m = self.trajectory.constants.m;
        let state = self.trajectory.state(t);
        let [c, rho] = state;
        let at = self.a_tilde(rho);
        let mut u: Vec<f64> = xs.iter().map(|&x| sol::q_c(m, c, x - rho) / at).collect();
        if self.corrected {
            for (ui, ai) in u.iter_mut().zip(self.correction_at(state, xs)) {
                *ui += ai;
            }
        }
        u
    }

    fn time_derivative(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let k = &self.trajectory.constants;
        let (m, mf) = (k.m, k.mf());
        let eps = self.eps();
        let state = self.trajectory.state(t);
        let [c, rho] = state;
        let [dc, drho] = self.trajectory.rhs(&state);
        let j = self.trajectory.potential.jet(eps * rho);
        let at = j.a.powf(1.0 / (mf - 1.0));
        let dat = at / ((mf - 1.0) * j.a) * j.d1 * eps * drho;
        let mut ut: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let y = x - rho;
                (dc * sol::lambda_q_c(m, c, y) - drho * sol::dq_c(m, c, y)) / at
                    - sol::q_c(m, c, y) * dat / (at * at)
            })
            .collect();
        if self.corrected {
            let dt = SHELF_TIME_STEP;
            let plus = self.correction_at(self.trajectory.state_offset(t, dt), xs);
            let minus = self.correction_at(self.trajectory.state_offset(t, -dt), xs);
            for ((u, p), q) in ut.iter_mut().zip(plus).zip(minus) {
                *u += (p - q) / (2.0 * dt);
            }
        }
        ut
    }

    fn center(&self, t: f64) -> f64 {
        self.trajectory.state(t)[1]
    }
}

/// Grid in the frame of the soliton covering the cutoff region
/// `[-3/ε - 40, 40]` with spacing at most 0.1.
pub fn residual_grid(eps: f64, center: f64) -> Grid1D {
    let lo = -3.0 / eps - 40.0;
    let hi = 40.0;
    let n = (((hi - lo) / 0.1).ceil() as usize).next_power_of_two();
    Grid1D::new(center + lo, center + hi, n).expect("valid residual grid")
}

/// `S[ũ] = ũ_t + (ũ_xx - λũ + a(εx) ũ^m)_x` on `grid`.
pub fn residual_s(
    field: &impl ApproximateField,
    constants: &ModelConstants,
    potential: &PotentialSpec,
    eps: f64,
    t: f64,
    grid: &Grid1D,
) -> Vec<f64> {
    let xs = grid.nodes();
    let u = field.field(t, &xs);
    let ut = field.time_derivative(t, &xs);
    let spec = Spectral::new(grid);
    let uxx = spec.derivative(&u, 2);
    let m = constants.m as i32;
    let flux: Vec<f64> = (0..grid.n)
        .map(|j| uxx[j] - constants.lambda * u[j] + potential.a(eps * xs[j]) * u[j].powi(m))
        .collect();
    let dflux = spec.derivative(&flux, 1);
    ut.iter().zip(&dflux).map(|(a, b)| a + b).collect()
}

/// `(‖w‖_{L²}, ‖w‖_{H¹}, ‖w‖_{H²})` with spectral derivatives.
pub fn sobolev_norms(grid: &Grid1D, w: &[f64]) -> (f64, f64, f64) {
    let spec = Spectral::new(grid);
    let d1 = spec.derivative(w, 1);
    let d2 = spec.derivative(w, 2);
    let l2 = inner(grid, w, w);
    let h1 = l2 + inner(grid, &d1, &d1);
    let h2 = h1 + inner(grid, &d2, &d2);
    (l2.sqrt(), h1.sqrt(), h2.sqrt())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualRow {
    pub eps: f64,
    pub t_at_max: f64,
    pub max_l2: f64,
    pub max_h2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualScaling {
    pub corrected: bool,
    pub rows: Vec<ResidualRow>,
    /// Least-squares slope of `log max‖S‖_{L²}` against `log ε`.
    pub slope: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `max_{t ∈ [-T_ε, T_ε]} ‖S[ũ](t)‖` sampled at `samples` equispaced times.
pub fn max_residual(approx: &ApproximateSolution, samples: usize) -> ResidualRow {
    let tr = &approx.trajectory;
    let te = tr.t_eps;
    let mut row = ResidualRow { eps: tr.eps, t_at_max: f64::NAN, max_l2: 0.0, max_h2: 0.0 };
    for i in 0..samples {
        let t = -te + 2.0 * te * i as f64 / (samples - 1) as f64;
        let grid = residual_grid(tr.eps, approx.center(t));
        let s = residual_s(approx, &tr.constants, &tr.potential, tr.eps, t, &grid);
        let (l2, _, h2) = sobolev_norms(&grid, &s);
        if l2 > row.max_l2 {
            row.max_l2 = l2;
            row.t_at_max = t;
        }
        row.max_h2 = row.max_h2.max(h2);
    }
    row
}

/// Residual norms over a set of `ε` and the fitted scaling exponent.
pub fn residual_scaling(
    constants: &ModelConstants,
    potential: &PotentialSpec,
    epsilons: &[f64],
    corrected: bool,
    samples: usize,
    allow_out_of_theory: bool,
) -> Result<ResidualScaling> {
    let profiles = Arc::new(CorrectionProfiles::compute(constants)?);
    let rows = epsilons
        .iter()
        .map(|&eps| {
            let tr = crate::adiabatic::integrate_adiabatic(
                constants,
                potential,
                eps,
                allow_out_of_theory,
            )?;
            let approx = ApproximateSolution::new(Arc::new(tr), profiles.clone(), corrected);
            Ok(max_residual(&approx, samples))
        })
        .collect::<Result<Vec<_>>>()?;
    let e: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.max_l2).collect();
    Ok(ResidualScaling { corrected, slope: loglog_slope(&e, &s), rows })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndpointReport {
    /// `‖ũ(-T_ε) - Q(· + (1-λ)T_ε)‖_{H¹}`.
    pub entry_distance: f64,
    /// `‖ũ(T_ε) - 2^{-1/(m-1)} Q_{c(T_ε)}(· - ρ(T_ε))‖_{H¹}`.
    pub exit_distance: f64,
    /// `e^{-γ ε^{-1/100}}` with `γ` the measured left decay rate of `a`.
    pub predicted_scale: f64,
    /// `a(ερ(-T_ε)) - a_minus`.
    pub entry_gap: f64,
}

pub fn endpoint_check(approx: &ApproximateSolution) -> Result<EndpointReport> {
    let tr = &approx.trajectory;
    let k = &tr.constants;
    let te = tr.t_eps;
    let eps = tr.eps;
    let rate = crate::potential::verify_hypotheses(&tr.potential, k.m)?.left_decay_rate;
    let m = k.m;
    let dist = |t: f64, target: &dyn Fn(f64) -> f64| -> f64 {
        let grid = residual_grid(eps, approx.center(t));
        let xs = grid.nodes();
        let u = approx.field(t, &xs);
        let w: Vec<f64> = xs.iter().zip(&u).map(|(&x, &ui)| ui - target(x)).collect();
        sobolev_norms(&grid, &w).1
    };
    let rho0 = -(1.0 - k.lambda) * te;
    let entry_distance = dist(-te, &|x| sol::q(m, x - rho0));
    let [c1, rho1] = tr.state(te);
    let amp = 2f64.powf(-1.0 / (k.mf() - 1.0));
    let exit_distance = dist(te, &|x| amp * sol::q_c(m, c1, x - rho1));
    Ok(EndpointReport {
        entry_distance,
        exit_distance,
        predicted_scale: (-rate * eps.powf(-0.01)).exp(),
        entry_gap: tr.potential.gap_minus(eps * rho0),
    })
}
