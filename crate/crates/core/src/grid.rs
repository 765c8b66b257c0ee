//! Uniform periodic grids, trapezoid quadrature and Fourier differentiation.

use std::f64::consts::PI;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `x_j = x_min + j h`, `h = (x_max - x_min) / n`, `j = 0..n`.
///
/// The right endpoint is excluded: the grid is the natural sampling of a
/// periodic cell, and on decaying integrands the plain sum `h Σ f_j` is the
/// trapezoid rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid size must be even and at least 8, got {n}"
            )));
        }
        Ok(Self { x_min, x_max, n })
    }

    /// Grid on `[-half_width, half_width)`.
    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n)
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn h(&self) -> f64 {
        self.length() / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n).map(|j| f(self.x(j))).collect()
    }

    /// Same spacing, shifted so that the nodes are `x_j + shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self { x_min: self.x_min + shift, x_max: self.x_max + shift, n: self.n }
    }
}

/// `h Σ f_j`.
pub fn trapezoid(grid: &Grid1D, f: &[f64]) -> f64 {
    debug_assert_eq!(f.len(), grid.n);
    grid.h() * f.iter().sum::<f64>()
}

/// `h Σ f_j g_j`.
pub fn inner(grid: &Grid1D, f: &[f64], g: &[f64]) -> f64 {
    debug_assert_eq!(f.len(), g.len());
    grid.h() * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
}

pub fn l2_norm(grid: &Grid1D, f: &[f64]) -> f64 {
    inner(grid, f, f).sqrt()
}

pub fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Fourier pseudo-spectral operators on a [`Grid1D`].
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    k: Vec<f64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Spectral {
    pub fn new(grid: &Grid1D) -> Self {
        let n = grid.n;
        let mut planner = RealFftPlanner::<f64>::new();
        let dk = 2.0 * PI / grid.length();
        Self {
            n,
            k: (0..=n / 2).map(|j| j as f64 * dk).collect(),
            r2c: planner.plan_fft_forward(n),
            c2r: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Non-negative wavenumbers `k_j = 2πj / L`, `j = 0..=n/2`.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    pub fn r2c_plan(&self) -> &Arc<dyn RealToComplex<f64>> {
        &self.r2c
    }

    pub fn c2r_plan(&self) -> &Arc<dyn ComplexToReal<f64>> {
        &self.c2r
    }

    /// Unnormalized half-spectrum of a real signal.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut input = f.to_vec();
        let mut out = self.r2c.make_output_vec();
        self.r2c.process(&mut input, &mut out).expect("fft length mismatch");
        out
    }

    /// Inverse of [`Spectral::forward`], including the `1/n` factor.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        spec[0].im = 0.0;
        let last = spec.len() - 1;
        spec[last].im = 0.0;
        let mut out = self.c2r.make_output_vec();
        self.c2r.process(&mut spec, &mut out).expect("fft length mismatch");
        let s = 1.0 / self.n as f64;
        out.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `d^order f / dx^order`. The Nyquist mode is dropped for odd orders.
    pub fn derivative(&self, f: &[f64], order: u32) -> Vec<f64> {
        let mut spec = self.forward(f);
        self.apply_derivative(&mut spec, order);
        self.inverse(spec)
    }

    pub fn apply_derivative(&self, spec: &mut [Complex64], order: u32) {
        let last = spec.len() - 1;
        for (j, s) in spec.iter_mut().enumerate() {
            let ik = Complex64::new(0.0, self.k[j]);
            *s *= ik.powu(order);
            if order % 2 == 1 && j == last {
                *s = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Periodic antiderivative of `f` after removing its mean, normalized to
    /// vanish at the first node. Returns `(F, mean)`.
    pub fn antiderivative(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let mut spec = self.forward(f);
        let mean = spec[0].re / self.n as f64;
        let last = spec.len() - 1;
        spec[0] = Complex64::new(0.0, 0.0);
        for j in 1..spec.len() {
            if j == last {
                spec[j] = Complex64::new(0.0, 0.0);
            } else {
                spec[j] /= Complex64::new(0.0, self.k[j]);
            }
        }
        let mut g = self.inverse(spec);
        let g0 = g[0];
        g.iter_mut().for_each(|v| *v -= g0);
        (g, mean)
    }
}

const GL10: [(f64, f64); 5] = [
    (0.14887433898163122, 0.295524224714753),
    (0.4333953941292472, 0.2692667193099965),
    (0.6794095682990244, 0.219086362515982),
    (0.8650633666889845, 0.14945134915058036),
    (0.9739065285171717, 0.06667134430868807),
];

/// Composite 10-point Gauss-Legendre rule on `[a, b]` with panels no wider
/// than `max_panel`. Orientation is respected (`b < a` flips the sign).
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, max_panel: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let panels = ((b - a).abs() / max_panel).ceil().max(1.0) as usize;
    let w = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * w;
        let half = 0.5 * w;
        for &(x, wt) in &GL10 {
            total += wt * (f(mid - half * x) + f(mid + half * x));
        }
    }
    total * 0.5 * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid1D::new(1.0, 0.0, 64).is_err());
        assert!(Grid1D::new(0.0, 1.0, 7).is_err());
        assert!(Grid1D::new(0.0, 1.0, 9).is_err());
        assert!(Grid1D::new(0.0, f64::NAN, 64).is_err());
    }

    #[test]
    fn trapezoid_of_gaussian() {
        let g = Grid1D::symmetric(20.0, 512).unwrap();
        let f = g.sample(|x| (-x * x).exp());
        assert!((trapezoid(&g, &f) - PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_polynomials_and_orientation() {
        let v = gauss_legendre(|x| x.powi(7) - 3.0 * x * x, 0.0, 2.0, 10.0);
        assert!((v - (256.0 / 8.0 - 8.0)).abs() < 1e-12);
        let r = gauss_legendre(|x| x.cos(), 1.0, 0.0, 0.1);
        assert!((r + 1.0_f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn spectral_derivatives_of_trig() {
        let g = Grid1D::new(0.0, 2.0 * PI, 64).unwrap();
        let s = Spectral::new(&g);
        let f = g.sample(|x| (3.0 * x).sin());
        let d1 = s.derivative(&f, 1);
        let d3 = s.derivative(&f, 3);
        for j in 0..g.n {
            let x = g.x(j);
            assert!((d1[j] - 3.0 * (3.0 * x).cos()).abs() < 1e-12);
            assert!((d3[j] + 27.0 * (3.0 * x).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn antiderivative_recovers_primitive() {
        let g = Grid1D::symmetric(30.0, 1024).unwrap();
        let s = Spectral::new(&g);
        let f = g.sample(|x| -2.0 * x * (-x * x).exp());
        let (prim, mean) = s.antiderivative(&f);
        assert!(mean.abs() < 1e-14);
        for j in 0..g.n {
            let x = g.x(j);
            assert!((prim[j] - (-x * x).exp()).abs() < 1e-12);
        }
    }
}
