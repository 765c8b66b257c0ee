//! Periodic pseudo-spectral solver for
//!
//! ```text
//! u_t + (u_xx - λu + a(εx) u^m)_x = 0
//! ```
//!
//! In Fourier space `û_t = i(k³ + λk)û - ik 𝓕[a_ε u^m]`; the stiff diagonal
//! part is integrated exactly by ETDRK4 (Cox-Matthews coefficients evaluated
//! by contour means) and the product `a_ε u^m` is dealiased by the 2/3 rule.
//! The zero mode is never touched, so `∫u` is conserved bit for bit.

use std::f64::consts::PI;

use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{check_eps, t_eps};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, Spectral};
use crate::potential::{require_hypotheses, PotentialFamily, PotentialSpec};
use crate::soliton::{self as sol, ModelConstants};

/// Field magnitude allowed near the domain edges.
pub const BOUNDARY_TOLERANCE: f64 = 1e-10;
/// Margin between the initial soliton and the domain edges.
pub const INITIAL_MARGIN: f64 = 30.0;
const CONTOUR_POINTS: usize = 64;
/// Steps per `T_ε` in [`SimConfig::interaction`] are a multiple of this.
pub const STEP_BLOCK: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub constants: ModelConstants,
    pub potential: PotentialSpec,
    pub eps: f64,
    pub grid: Grid1D,
    /// Requested step; shortened so that `(t_end - t_start)/dt` is an integer.
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub dealias: bool,
    /// Steps between invariant records.
    pub record_every: usize,
    /// Steps between stored snapshots, 0 for none.
    pub snapshot_every: usize,
    pub allow_out_of_theory: bool,
}

/// `5e-3 (h/0.05)³`, capped at `1e-2`.
pub fn default_dt(grid: &Grid1D) -> f64 {
    (5e-3 * (grid.h() / 0.05).powi(3)).min(1e-2)
}

/// Symmetric domain of length `30/ε` with `h ≤ 0.0375` and a power-of-two
/// node count: `ε = 0.05` gives `[-300, 300]` with 16384 nodes.
pub fn default_grid(eps: f64) -> Result<Grid1D> {
    check_eps(eps)?;
    let length = (30.0 / eps).max(200.0);
    let n = ((length / 0.0375).ceil() as usize).next_power_of_two();
    Grid1D::symmetric(0.5 * length, n)
}

impl SimConfig {
    /// Interaction run on `[-T_ε, horizon·T_ε]` with the default step rounded
    /// so that `T_ε` is a multiple of `STEP_BLOCK` steps; every multiple of
    /// `T_ε / STEP_BLOCK` is then hit exactly.
    pub fn interaction(
        constants: ModelConstants,
        potential: PotentialSpec,
        eps: f64,
        grid: Grid1D,
        horizon: f64,
    ) -> Result<Self> {
        Self::interaction_with_dt(constants, potential, eps, grid, horizon, default_dt(&grid))
    }

    /// As [`SimConfig::interaction`] with the step `dt` rounded down to the
    /// same block structure.
    pub fn interaction_with_dt(
        constants: ModelConstants,
        potential: PotentialSpec,
        eps: f64,
        grid: Grid1D,
        horizon: f64,
        dt: f64,
    ) -> Result<Self> {
        check_eps(eps)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let te = t_eps(eps, constants.lambda);
        let blocks = (te / dt / STEP_BLOCK as f64).ceil();
        let dt = te / (blocks * STEP_BLOCK as f64);
        let record_every = ((0.1 / dt).round() as usize).max(1);
        Ok(Self {
            constants,
            potential,
            eps,
            grid,
            dt,
            t_start: -te,
            t_end: horizon * te,
            dealias: true,
            record_every,
            snapshot_every: 0,
            allow_out_of_theory: false,
        })
    }

    /// Steps between snapshots so that `T_ε` holds `per_t_eps` of them.
    pub fn cadence_for(&self, per_t_eps: usize) -> usize {
        let te = t_eps(self.eps, self.constants.lambda);
        ((te / self.dt).round() as usize / per_t_eps).max(1)
    }

    pub fn steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    pub fn effective_dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps() as f64
    }

    pub fn validate(&self) -> Result<()> {
        check_eps(self.eps)?;
        self.potential.validate()?;
        if !self.allow_out_of_theory {
            self.constants.check_in_theory()?;
        }
        // Constant media are the control runs and need no hypothesis check.
        if self.potential.family != PotentialFamily::Constant {
            require_hypotheses(&self.potential, self.constants.m, self.allow_out_of_theory)?;
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.t_start) {
            return Err(Error::InvalidParameter("t_end must exceed t_start".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of `invariants.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub t: f64,
    /// `½∫u²`
    pub mass: f64,
    /// `½∫a_ε^{1/m}u²`
    pub mass_hat: f64,
    /// `½∫u_x² + λ/2∫u² - 1/(m+1)∫a_ε u^{m+1}`
    pub energy: f64,
    /// `∫u`
    pub l1: f64,
    /// `∫u²/a_ε`
    pub mass_back: f64,
    /// Energy with `a ≡ 1`.
    pub energy_one: f64,
    /// `max |u|` over the outer bands of the domain.
    pub boundary: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
}

struct Etdrk4 {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl Etdrk4 {
    /// Coefficients for `L = i(k³ + λk)` by means over a unit circle around
    /// `L dt`, which avoids the cancellation of the closed forms near 0.
    fn new(k: &[f64], lambda: f64, dt: f64, nyquist: usize) -> Self {
        let nodes: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let len = k.len();
        let mut out = Self {
            e: vec![Complex64::default(); len],
            e2: vec![Complex64::default(); len],
            q: vec![Complex64::default(); len],
            f1: vec![Complex64::default(); len],
            f2: vec![Complex64::default(); len],
            f3: vec![Complex64::default(); len],
        };
        let w = 1.0 / CONTOUR_POINTS as f64;
        for (j, &kj) in k.iter().enumerate() {
            if j == nyquist {
                continue;
            }
            let z0 = Complex64::new(0.0, (kj * kj * kj + lambda * kj) * dt);
            out.e[j] = z0.exp();
            out.e2[j] = (0.5 * z0).exp();
            let zero = Complex64::default();
            let (mut q, mut f1, mut f2, mut f3) = (zero, zero, zero, zero);
            for r in &nodes {
                let z = z0 + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((0.5 * z).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            let s = w * dt;
            out.q[j] = q * s;
            out.f1[j] = f1 * s;
            out.f2[j] = f2 * s;
            out.f3[j] = f3 * s;
        }
        out
    }
}

/// Per-run summary; also serialized as `summary.json`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Largest increase of `M` over one step.
    pub max_mass_increase: f64,
    /// `max |E_a(t) - E_a(t₀)| / |E_a(t₀)|` over records.
    pub energy_drift: f64,
    /// `max |∫u(t) - ∫u(t₀)|` over records.
    pub l1_drift: f64,
    /// Largest violation of `M ≤ M̂ ≤ 2^{1/m} M` over records (0 if none).
    pub mass_ordering_violation: f64,
    pub max_boundary: f64,
    /// Largest ratio of the spectral tail to the peak amplitude.
    pub max_spectral_tail: f64,
    pub warnings: Vec<String>,
}

/// Full solver state: the half spectrum of `u` plus workspaces.
pub struct Simulation {
    cfg: SimConfig,
    spectral: Spectral,
    a: Vec<f64>,
    a_root: Vec<f64>,
    mask: Vec<f64>,
    ik: Vec<Complex64>,
    coef: Etdrk4,
    dt: f64,
    steps_total: usize,
    step: usize,
    v: Vec<Complex64>,
    // workspaces
    u: Vec<f64>,
    spec_buf: Vec<Complex64>,
    stage: [Vec<Complex64>; 4],
    nl: [Vec<Complex64>; 4],
    mass_prev: f64,
    max_mass_increase: f64,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation").field("t", &self.t()).field("n", &self.cfg.grid.n).finish()
    }
}

impl Simulation {
    /// Starts from arbitrary grid data at `t_start`.
    pub fn from_field(cfg: SimConfig, u0: &[f64]) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid.n;
        if u0.len() != n {
            return Err(Error::InvalidParameter(format!("field has {} values, grid has {n}", u0.len())));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("initial field is not finite".into()));
        }
        let spectral = Spectral::new(&cfg.grid);
        let xs = cfg.grid.nodes();
        let a = cfg.potential.sample_scaled(cfg.eps, &xs);
        let mf = cfg.constants.mf();
        let a_root = a.iter().map(|v| v.powf(1.0 / mf)).collect();
        let k = spectral.wavenumbers().to_vec();
        let nyquist = k.len() - 1;
        let cut = if cfg.dealias { n / 3 } else { nyquist - 1 };
        let mask = (0..k.len()).map(|j| if j <= cut { 1.0 } else { 0.0 }).collect();
        let ik = k.iter().map(|&kj| Complex64::new(0.0, kj)).collect();
        let steps_total = cfg.steps();
        let dt = cfg.effective_dt();
        let coef = Etdrk4::new(&k, cfg.constants.lambda, dt, nyquist);
        let mut v = spectral.forward(u0);
        v[nyquist] = Complex64::default();
        let len = v.len();
        let zeros = || vec![Complex64::default(); len];
        let mut sim = Self {
            cfg,
            spectral,
            a,
            a_root,
            mask,
            ik,
            coef,
            dt,
            steps_total,
            step: 0,
            v,
            u: vec![0.0; n],
            spec_buf: zeros(),
            stage: [zeros(), zeros(), zeros(), zeros()],
            nl: [zeros(), zeros(), zeros(), zeros()],
            mass_prev: 0.0,
            max_mass_increase: f64::NEG_INFINITY,
        };
        sim.mass_prev = sim.record().mass;
        Ok(sim)
    }

    /// `u(x) = amplitude · Q_c(x - center)` at `t_start`.
    pub fn soliton(cfg: SimConfig, c: f64, center: f64, amplitude: f64) -> Result<Self> {
        let g = &cfg.grid;
        let reach = INITIAL_MARGIN / c.sqrt().min(1.0);
        if center - g.x_min < reach || g.x_max - center < reach {
            return Err(Error::InvalidParameter(format!(
                "soliton at {center} needs a margin of {reach} inside [{}, {}]",
                g.x_min, g.x_max
            )));
        }
        let m = cfg.constants.m;
        let u0 = g.sample(|x| amplitude * sol::q_c(m, c, x - center));
        Self::from_field(cfg, &u0)
    }

    /// `u(-T_ε) = Q(x + (1-λ)T_ε)`.
    pub fn initialize_soliton(cfg: SimConfig) -> Result<Self> {
        let center = -(1.0 - cfg.constants.lambda) * t_eps(cfg.eps, cfg.constants.lambda);
        Self::soliton(cfg, 1.0, center, 1.0)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid1D {
        &self.cfg.grid
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn t(&self) -> f64 {
        if self.step == self.steps_total {
            self.cfg.t_end
        } else {
            self.cfg.t_start + self.step as f64 * self.dt
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.steps_total
    }

    pub fn finished(&self) -> bool {
        self.step >= self.steps_total
    }

    /// Medium `a(εx_j)` on the grid.
    pub fn medium(&self) -> &[f64] {
        &self.a
    }

    pub fn field(&self) -> Vec<f64> {
        self.spectral.inverse(self.v.clone())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { t: self.t(), u: self.field() }
    }

    /// Largest one-step increase of `M` so far.
    pub fn max_mass_increase(&self) -> f64 {
        self.max_mass_increase
    }

    fn load_physical(&mut self, spec: &[Complex64]) {
        self.spec_buf.copy_from_slice(spec);
        let last = self.spec_buf.len() - 1;
        self.spec_buf[0].im = 0.0;
        self.spec_buf[last] = Complex64::default();
        let plan = self.spectral.c2r_plan();
        plan.process(&mut self.spec_buf, &mut self.u).expect("fft length mismatch");
        let s = 1.0 / self.cfg.grid.n as f64;
        self.u.iter_mut().for_each(|v| *v *= s);
    }

    /// `-ik 𝓕[a u^m]` (masked) for the state in `stage[src]`, into `nl[dst]`.
    fn nonlinear(&mut self, src: Option<usize>, dst: usize) {
        let spec = match src {
            Some(i) => std::mem::take(&mut self.stage[i]),
            None => std::mem::take(&mut self.v),
        };
        self.load_physical(&spec);
        match src {
            Some(i) => self.stage[i] = spec,
            None => self.v = spec,
        }
        let m = self.cfg.constants.m as i32;
        let mut w: Vec<f64> = self.u.iter().zip(&self.a).map(|(u, a)| a * u.powi(m)).collect();
        let plan = self.spectral.r2c_plan();
        let out = &mut self.nl[dst];
        plan.process(&mut w, out).expect("fft length mismatch");
        for ((o, ik), mk) in out.iter_mut().zip(&self.ik).zip(&self.mask) {
            *o = -*ik * *o * *mk;
        }
    }

    /// One ETDRK4 step.
    pub fn step(&mut self) -> Result<()> {
        if self.finished() {
            return Err(Error::InvalidParameter("run already finished".into()));
        }
        let t = self.t();
        self.nonlinear(None, 0);
        // `u` now holds the field at the start of the step.
        if let Some(j) = self.u.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t, what: format!("non-finite field at node {j}") });
        }
        let h = self.cfg.grid.h();
        let mass = 0.5 * h * self.u.iter().map(|v| v * v).sum::<f64>();
        if self.step > 0 {
            self.max_mass_increase = self.max_mass_increase.max(mass - self.mass_prev);
        }
        self.mass_prev = mass;

        let len = self.v.len();
        let c = &self.coef;
        for j in 0..len {
            self.stage[0][j] = c.e2[j] * self.v[j] + c.q[j] * self.nl[0][j];
        }
        self.nonlinear(Some(0), 1);
        let c = &self.coef;
        for j in 0..len {
            self.stage[1][j] = c.e2[j] * self.v[j] + c.q[j] * self.nl[1][j];
        }
        self.nonlinear(Some(1), 2);
        let c = &self.coef;
        for j in 0..len {
            self.stage[2][j] = c.e2[j] * self.stage[0][j] + c.q[j] * (2.0 * self.nl[2][j] - self.nl[0][j]);
        }
        self.nonlinear(Some(2), 3);
        let c = &self.coef;
        for j in 0..len {
            self.v[j] = c.e[j] * self.v[j]
                + c.f1[j] * self.nl[0][j]
                + 2.0 * c.f2[j] * (self.nl[1][j] + self.nl[2][j])
                + c.f3[j] * self.nl[3][j];
        }
        self.v[0].im = 0.0;
        self.step += 1;
        if self.finished() {
            let u = self.field();
            if let Some(j) = u.iter().position(|v| !v.is_finite()) {
                return Err(Error::BlowUp { t: self.t(), what: format!("non-finite field at node {j}") });
            }
            let mass = 0.5 * h * u.iter().map(|v| v * v).sum::<f64>();
            self.max_mass_increase = self.max_mass_increase.max(mass - self.mass_prev);
            self.mass_prev = mass;
        }
        Ok(())
    }

    /// Steps until `t ≥ target - dt/2` or the run ends.
    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        while !self.finished() && self.t() < target - 0.5 * self.dt {
            self.step()?;
        }
        Ok(())
    }

    /// Invariants of the current state.
    pub fn record(&self) -> InvariantRecord {
        let u = self.field();
        let ux = self.spectral.derivative(&u, 1);
        invariants(&self.cfg, &self.a, &self.a_root, self.t(), &u, &ux)
    }

    /// `max |û_k|` over `k ∈ [k_max/2, 2k_max/3]` relative to `max |û|`.
    pub fn spectral_tail(&self) -> f64 {
        let n = self.cfg.grid.n;
        let peak = self.v.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        self.v[n / 4..=n / 3].iter().map(|c| c.norm()).fold(0.0, f64::max) / peak
    }

    /// `[dM/dt, dM̂/dt, d𝓜/dt]` from the flux identities at the current state.
    pub fn mass_rates(&self) -> [f64; 3] {
        let u = self.field();
        mass_rates(&self.cfg, &self.spectral, &u)
    }
}

fn boundary_band(n: usize) -> usize {
    (n / 50).max(4)
}

fn invariants(cfg: &SimConfig, a: &[f64], a_root: &[f64], t: f64, u: &[f64], ux: &[f64]) -> InvariantRecord {
    let h = cfg.grid.h();
    let m = cfg.constants.m as i32;
    let lam = cfg.constants.lambda;
    let (mut s2, mut s2hat, mut s2back, mut s1, mut sx, mut sp, mut sp1) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..u.len() {
        let v = u[j];
        let v2 = v * v;
        s1 += v;
        s2 += v2;
        s2hat += a_root[j] * v2;
        s2back += v2 / a[j];
        sx += ux[j] * ux[j];
        let p = v.powi(m + 1);
        sp += a[j] * p;
        sp1 += p;
    }
    let mf = cfg.constants.mf();
    let band = boundary_band(u.len());
    let boundary = u[..band].iter().chain(&u[u.len() - band..]).fold(0.0_f64, |b, v| b.max(v.abs()));
    InvariantRecord {
        t,
        mass: 0.5 * h * s2,
        mass_hat: 0.5 * h * s2hat,
        energy: h * (0.5 * sx + 0.5 * lam * s2 - sp / (mf + 1.0)),
        l1: h * s1,
        mass_back: h * s2back,
        energy_one: h * (0.5 * sx + 0.5 * lam * s2 - sp1 / (mf + 1.0)),
        boundary,
    }
}

/// Derivatives `[f, f', f'', f''']` of `f(a(r)) = a^q`, composed with the jet of `a`.
fn power_jet(pot: &PotentialSpec, q: f64, r: f64) -> [f64; 4] {
    let j = pot.jet(r);
    let g0 = j.a.powf(q);
    let g1 = q * j.a.powf(q - 1.0);
    let g2 = q * (q - 1.0) * j.a.powf(q - 2.0);
    let g3 = q * (q - 1.0) * (q - 2.0) * j.a.powf(q - 3.0);
    [
        g0,
        g1 * j.d1,
        g2 * j.d1 * j.d1 + g1 * j.d2,
        g3 * j.d1.powi(3) + 3.0 * g2 * j.d1 * j.d2 + g1 * j.d3,
    ]
}

/// `d/dt ∫ψu²` for a time-independent weight `ψ(x) = a(εx)^q`:
///
/// ```text
/// -3∫ψ'u_x² - λ∫ψ'u² + ∫ψ'''u² + 2/(m+1)∫(mψ'a - ψa_x)u^{m+1}
/// ```
fn weighted_rate(cfg: &SimConfig, xs: &[f64], u: &[f64], ux: &[f64], q: f64) -> f64 {
    let eps = cfg.eps;
    let m = cfg.constants.mf();
    let lam = cfg.constants.lambda;
    let mut acc = 0.0;
    for j in 0..u.len() {
        let r = eps * xs[j];
        let w = power_jet(&cfg.potential, q, r);
        let a = cfg.potential.jet(r);
        let psi = w[0];
        let psi1 = eps * w[1];
        let psi3 = eps.powi(3) * w[3];
        let ax = eps * a.d1;
        let u2 = u[j] * u[j];
        acc += -3.0 * psi1 * ux[j] * ux[j] - lam * psi1 * u2
            + psi3 * u2
            + 2.0 / (m + 1.0) * (m * psi1 * a.a - psi * ax) * u[j].powi(cfg.constants.m as i32 + 1);
    }
    acc * cfg.grid.h()
}

/// `[dM/dt, dM̂/dt, d𝓜/dt]` for the field `u`:
///
/// ```text
/// dM/dt = -ε/(m+1) ∫a'(εx)u^{m+1}
/// dM̂/dt = -(3/2)ε∫(a^{1/m})'u_x² - (ε/2)∫[λ(a^{1/m})' - ε²(a^{1/m})''']u²
/// d𝓜/dt = 3ε∫u_x² a'/a² + ε∫u²[λa'/a² - ε²(a'/a²)''] - 2ε∫(a'/a)u^{m+1}
/// ```
pub fn mass_rates(cfg: &SimConfig, spectral: &Spectral, u: &[f64]) -> [f64; 3] {
    let ux = spectral.derivative(u, 1);
    let xs = cfg.grid.nodes();
    [
        0.5 * weighted_rate(cfg, &xs, u, &ux, 0.0),
        0.5 * weighted_rate(cfg, &xs, u, &ux, 1.0 / cfg.constants.mf()),
        weighted_rate(cfg, &xs, u, &ux, -1.0),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassDerivativeReport {
    pub cadence: f64,
    pub samples: usize,
    /// `max |centered difference - identity|` for `M`, `M̂`, `𝓜`.
    pub mismatch: [f64; 3],
    /// `max |identity|` over the samples, for scale.
    pub scale: [f64; 3],
    /// Largest value of the `M̂` identity.
    pub max_mass_hat_rate: f64,
}

/// Compares centered time differences of `M`, `M̂`, `𝓜` across equally spaced
/// snapshots with the flux identities at the middle snapshot.
pub fn mass_derivative_check(cfg: &SimConfig, snapshots: &[Snapshot]) -> Result<MassDerivativeReport> {
    if snapshots.len() < 3 {
        return Err(Error::InvalidParameter("need at least three snapshots".into()));
    }
    let cadence = snapshots[1].t - snapshots[0].t;
    if !(cadence > 0.0) || snapshots.windows(2).any(|w| ((w[1].t - w[0].t) - cadence).abs() > 1e-9 * cadence.max(1.0)) {
        return Err(Error::InvalidParameter("snapshots must be equally spaced in time".into()));
    }
    let spectral = Spectral::new(&cfg.grid);
    let xs = cfg.grid.nodes();
    let a = cfg.potential.sample_scaled(cfg.eps, &xs);
    let a_root: Vec<f64> = a.iter().map(|v| v.powf(1.0 / cfg.constants.mf())).collect();
    let recs: Vec<InvariantRecord> = snapshots
        .iter()
        .map(|s| {
            let ux = spectral.derivative(&s.u, 1);
            invariants(cfg, &a, &a_root, s.t, &s.u, &ux)
        })
        .collect();
    let mut mismatch = [0.0_f64; 3];
    let mut scale = [0.0_f64; 3];
    let mut max_hat = f64::NEG_INFINITY;
    for i in 1..snapshots.len() - 1 {
        let rates = mass_rates(cfg, &spectral, &snapshots[i].u);
        let fd = [
            (recs[i + 1].mass - recs[i - 1].mass) / (2.0 * cadence),
            (recs[i + 1].mass_hat - recs[i - 1].mass_hat) / (2.0 * cadence),
            (recs[i + 1].mass_back - recs[i - 1].mass_back) / (2.0 * cadence),
        ];
        for k in 0..3 {
            mismatch[k] = mismatch[k].max((fd[k] - rates[k]).abs());
            scale[k] = scale[k].max(rates[k].abs());
        }
        max_hat = max_hat.max(rates[1]);
    }
    Ok(MassDerivativeReport {
        cadence,
        samples: snapshots.len() - 2,
        mismatch,
        scale,
        max_mass_hat_rate: max_hat,
    })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<InvariantRecord>,
    pub snapshots: Vec<Snapshot>,
    pub summary: RunSummary,
}

/// Runs `sim` to the end, recording invariants every `record_every` steps and
/// calling `observe` every `snapshot_every` steps (and at both ends).
pub fn run_with(
    mut sim: Simulation,
    mut observe: impl FnMut(&Simulation) -> Result<()>,
) -> Result<(Vec<InvariantRecord>, RunSummary, Simulation)> {
    let cfg = sim.cfg.clone();
    let mut records = vec![sim.record()];
    let mut tail = sim.spectral_tail();
    observe(&sim)?;
    while !sim.finished() {
        sim.step()?;
        let i = sim.step_index();
        let last = sim.finished();
        if i % cfg.record_every == 0 || last {
            records.push(sim.record());
            tail = tail.max(sim.spectral_tail());
        }
        if (cfg.snapshot_every > 0 && i % cfg.snapshot_every == 0) || last {
            observe(&sim)?;
        }
    }
    let summary = summarize(&cfg, &sim, &records, tail);
    Ok((records, summary, sim))
}

/// Runs from `sim`, keeping every snapshot in memory.
pub fn run(sim: Simulation) -> Result<RunOutput> {
    let mut snapshots = Vec::new();
    let (records, summary, _) = run_with(sim, |s| {
        snapshots.push(s.snapshot());
        Ok(())
    })?;
    Ok(RunOutput { records, snapshots, summary })
}

fn summarize(cfg: &SimConfig, sim: &Simulation, records: &[InvariantRecord], tail: f64) -> RunSummary {
    let r0 = records[0];
    let mut s = RunSummary {
        steps: sim.step_index(),
        dt: sim.dt(),
        t_start: cfg.t_start,
        t_end: sim.t(),
        max_mass_increase: sim.max_mass_increase().max(0.0),
        max_spectral_tail: tail,
        ..RunSummary::default()
    };
    let upper = 2f64.powf(1.0 / cfg.constants.mf());
    for r in records {
        s.energy_drift = s.energy_drift.max((r.energy - r0.energy).abs() / r0.energy.abs().max(f64::MIN_POSITIVE));
        s.l1_drift = s.l1_drift.max((r.l1 - r0.l1).abs());
        let low = r.mass - r.mass_hat;
        let high = r.mass_hat - upper * r.mass;
        s.mass_ordering_violation = s.mass_ordering_violation.max(low).max(high);
        s.max_boundary = s.max_boundary.max(r.boundary);
    }
    if s.max_boundary >= BOUNDARY_TOLERANCE {
        s.warnings.push(format!(
            "field reached {:.3e} near the domain edges (tolerance {BOUNDARY_TOLERANCE:e})",
            s.max_boundary
        ));
    }
    if s.max_spectral_tail >= 1e-10 {
        s.warnings.push(format!("spectral tail ratio {:.3e} exceeds 1e-10", s.max_spectral_tail));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::l2_norm;

    fn control(m: u32, lambda: f64, grid: Grid1D, t_end: f64) -> SimConfig {
        let constants = ModelConstants::new(m, lambda).unwrap();
        let dt = default_dt(&grid);
        SimConfig {
            constants,
            potential: PotentialSpec::constant(1.0),
            eps: 0.05,
            grid,
            dt,
            t_start: 0.0,
            t_end,
            dealias: true,
            record_every: 50,
            snapshot_every: 0,
            allow_out_of_theory: false,
        }
    }

    fn transport_error(n: usize, dt: f64) -> f64 {
        let (c, lam) = (1.5, 0.1);
        let grid = Grid1D::symmetric(40.0, n).unwrap();
        let t_end = 5.0 / (c - lam);
        let mut cfg = control(3, lam, grid, t_end);
        cfg.dt = dt;
        let sim = Simulation::soliton(cfg, c, -9.0, 1.0).unwrap();
        let (_, _, sim) = run_with(sim, |_| Ok(())).unwrap();
        let exact = grid.sample(|x| sol::q_c(3, c, x + 9.0 - (c - lam) * t_end));
        let diff: Vec<f64> = sim.field().iter().zip(&exact).map(|(a, b)| a - b).collect();
        l2_norm(&grid, &diff)
    }

    #[test]
    fn traveling_wave_is_transported() {
        let grid = Grid1D::symmetric(40.0, 4096).unwrap();
        let err = transport_error(4096, default_dt(&grid));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fourth_order_in_time() {
        let e1 = transport_error(2048, 0.02);
        let e2 = transport_error(2048, 0.01);
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "{e1} {e2} {ratio}");
    }

    #[test]
    fn zero_stays_zero() {
        let grid = Grid1D::symmetric(20.0, 256).unwrap();
        let cfg = control(3, 0.1, grid, 1.0);
        let sim = Simulation::from_field(cfg, &[0.0; 256]).unwrap();
        let (recs, _, sim) = run_with(sim, |_| Ok(())).unwrap();
        assert!(sim.field().iter().all(|&v| v == 0.0));
        assert!(recs.iter().all(|r| r.mass == 0.0 && r.l1 == 0.0));
    }

    #[test]
    fn initial_invariants() {
        let k = ModelConstants::new(3, 0.1).unwrap();
        let grid = default_grid(0.05).unwrap();
        let cfg = SimConfig::interaction(k, PotentialSpec::default(), 0.05, grid, 1.0).unwrap();
        let sim = Simulation::initialize_soliton(cfg).unwrap();
        let r = sim.record();
        assert!((r.mass - 2.0).abs() < 1e-12);
        assert!((r.l1 - 2f64.sqrt() * PI).abs() < 1e-12);
        assert!((r.energy_one - (0.1 - 1.0 / 3.0) * 2.0).abs() < 1e-12);
        assert!(r.mass <= r.mass_hat && r.mass_hat <= 2f64.powf(1.0 / 3.0) * r.mass);
    }

    #[test]
    fn rejects_soliton_near_edge() {
        let k = ModelConstants::new(3, 0.1).unwrap();
        let grid = Grid1D::symmetric(30.0, 1024).unwrap();
        let cfg = SimConfig::interaction(k, PotentialSpec::default(), 0.05, grid, 1.0).unwrap();
        assert!(Simulation::initialize_soliton(cfg).is_err());
    }

    #[test]
    fn constant_medium_has_zero_mass_rate() {
        let grid = Grid1D::symmetric(40.0, 1024).unwrap();
        let cfg = control(3, 0.1, grid, 1.0);
        let sim = Simulation::soliton(cfg, 1.2, 0.0, 1.0).unwrap();
        assert_eq!(sim.mass_rates()[0], 0.0);
    }

    #[test]
    fn blow_up_detected() {
        let grid = Grid1D::symmetric(20.0, 256).unwrap();
        let cfg = control(3, 0.1, grid, 1.0);
        let mut sim = Simulation::from_field(cfg, &[0.0; 256]).unwrap();
        sim.v[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(sim.step(), Err(Error::BlowUp { .. })));
    }

    fn rate_mismatch(cadence_steps: usize) -> ([f64; 3], [f64; 3]) {
        let k = ModelConstants::new(3, 0.1).unwrap();
        let grid = Grid1D::symmetric(60.0, 2048).unwrap();
        let mut cfg = SimConfig {
            constants: k,
            potential: PotentialSpec::tanh(1.0),
            eps: 0.1,
            grid,
            dt: 2e-3,
            t_start: 0.0,
            t_end: 0.2,
            dealias: true,
            record_every: 10,
            snapshot_every: cadence_steps,
            allow_out_of_theory: false,
        };
        cfg.t_end = 4.0 * cadence_steps as f64 * cfg.dt;
        let sim = Simulation::soliton(cfg.clone(), 1.2, -5.0, 1.0).unwrap();
        let out = run(sim).unwrap();
        let rep = mass_derivative_check(&cfg, &out.snapshots).unwrap();
        (rep.mismatch, rep.scale)
    }

    #[test]
    fn mass_identities_converge_quadratically() {
        let (m1, scale) = rate_mismatch(4);
        let (m2, _) = rate_mismatch(2);
        for k in 0..3 {
            assert!(scale[k] > 1e-2, "{scale:?}");
            assert!(m2[k] < 1e-4 * scale[k], "{m2:?}");
            let ratio = m1[k] / m2[k];
            assert!(ratio > 3.0 && ratio < 5.0, "quantity {k}: {m1:?} {m2:?}");
        }
    }
}
