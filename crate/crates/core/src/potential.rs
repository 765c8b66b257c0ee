//! Slowly varying coefficient `a(r)` and its hypothesis checker.
//!
//! All families interpolate monotonically between `a_minus` at `r = -∞` and
//! `a_plus` at `r = +∞` with a rate set by `steepness`; derivatives up to
//! third order are closed form.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialFamily {
    /// `mid + half · tanh(γr)`.
    Tanh,
    /// `mid + half · erf(γr)`.
    Erf,
    /// `mid + half · γr / √(1 + γ²r²)`.
    Algebraic,
    /// Septic smoothstep on `γr ∈ [-1, 1]`; `a'` has compact support.
    CompactRamp,
    /// `mid - half · tanh(γr)`, decreasing.
    Decreasing,
    /// `a ≡ a_plus`.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub a_minus: f64,
    pub a_plus: f64,
    pub steepness: f64,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self { family: PotentialFamily::Tanh, a_minus: 1.0, a_plus: 2.0, steepness: 1.0 }
    }
}

/// `a` and its first three derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub a: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

fn sech(z: f64) -> f64 {
    1.0 / z.cosh()
}

fn smoothstep7(u: f64) -> [f64; 4] {
    if u <= 0.0 {
        return [0.0; 4];
    }
    if u >= 1.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let v = 1.0 - u;
    [
        u.powi(4) * (35.0 - 84.0 * u + 70.0 * u * u - 20.0 * u.powi(3)),
        140.0 * u.powi(3) * v.powi(3),
        420.0 * u * u * v * v * (1.0 - 2.0 * u),
        840.0 * u * v * (1.0 - 5.0 * u + 5.0 * u * u),
    ]
}

impl PotentialSpec {
    pub fn tanh(steepness: f64) -> Self {
        Self { steepness, ..Self::default() }
    }

    pub fn constant(value: f64) -> Self {
        Self { family: PotentialFamily::Constant, a_minus: value, a_plus: value, steepness: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a_minus.is_finite()
            && self.a_plus.is_finite()
            && self.a_minus > 0.0
            && self.steepness.is_finite()
            && self.steepness > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("bad potential parameters {self:?}")));
        }
        if self.family != PotentialFamily::Constant && self.a_plus <= self.a_minus {
            return Err(Error::InvalidParameter(format!(
                "potential needs a_minus < a_plus, got {} and {}",
                self.a_minus, self.a_plus
            )));
        }
        Ok(())
    }

    fn mid(&self) -> f64 {
        0.5 * (self.a_minus + self.a_plus)
    }

    fn half(&self) -> f64 {
        0.5 * (self.a_plus - self.a_minus)
    }

    /// Normalized profile `s ∈ [-1, 1]` and its `z`-derivatives, `z = γr`.
    fn shape(&self, z: f64) -> [f64; 4] {
        match self.family {
            PotentialFamily::Tanh | PotentialFamily::Decreasing => {
                let s = z.tanh();
                let s2 = sech(z).powi(2);
                let out = [s, s2, -2.0 * s * s2, -2.0 * s2 * (1.0 - 3.0 * s * s)];
                if self.family == PotentialFamily::Decreasing {
                    out.map(|v| -v)
                } else {
                    out
                }
            }
            PotentialFamily::Erf => {
                let g = 2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp();
                [erf(z), g, -2.0 * z * g, (4.0 * z * z - 2.0) * g]
            }
            PotentialFamily::Algebraic => {
                let w = 1.0 + z * z;
                [
                    z / w.sqrt(),
                    w.powf(-1.5),
                    -3.0 * z * w.powf(-2.5),
                    (12.0 * z * z - 3.0) * w.powf(-3.5),
                ]
            }
            PotentialFamily::CompactRamp => {
                let [s, d1, d2, d3] = smoothstep7(0.5 * (z + 1.0));
                [2.0 * s - 1.0, d1, 0.5 * d2, 0.25 * d3]
            }
            PotentialFamily::Constant => [0.0; 4],
        }
    }

    pub fn jet(&self, r: f64) -> Jet {
        if self.family == PotentialFamily::Constant {
            return Jet { a: self.a_plus, d1: 0.0, d2: 0.0, d3: 0.0 };
        }
        let g = self.steepness;
        let [s, d1, d2, d3] = self.shape(g * r);
        let h = self.half();
        Jet { a: self.mid() + h * s, d1: h * g * d1, d2: h * g * g * d2, d3: h * g.powi(3) * d3 }
    }

    pub fn a(&self, r: f64) -> f64 {
        self.jet(r).a
    }

    /// `a(r) - a_minus`, without cancellation in the left tail.
    pub fn gap_minus(&self, r: f64) -> f64 {
        let z = self.steepness * r;
        let w = 2.0 * self.half();
        match self.family {
            PotentialFamily::Tanh => w / (1.0 + (-2.0 * z).exp()),
            PotentialFamily::Decreasing => w / (1.0 + (2.0 * z).exp()),
            PotentialFamily::Erf => 0.5 * w * erfc(-z),
            PotentialFamily::Algebraic => {
                let q = (1.0 + z * z).sqrt();
                0.5 * w / (q * (q - z))
            }
            PotentialFamily::CompactRamp => w * smoothstep7(0.5 * (z + 1.0))[0],
            PotentialFamily::Constant => self.a_plus - self.a_minus,
        }
    }

    /// `a_plus - a(r)`, without cancellation in the right tail.
    pub fn gap_plus(&self, r: f64) -> f64 {
        let z = self.steepness * r;
        let w = 2.0 * self.half();
        match self.family {
            PotentialFamily::Tanh => w / (1.0 + (2.0 * z).exp()),
            PotentialFamily::Decreasing => w / (1.0 + (-2.0 * z).exp()),
            PotentialFamily::Erf => 0.5 * w * erfc(z),
            PotentialFamily::Algebraic => {
                let q = (1.0 + z * z).sqrt();
                0.5 * w / (q * (q + z))
            }
            PotentialFamily::CompactRamp => w * (1.0 - smoothstep7(0.5 * (z + 1.0))[0]),
            PotentialFamily::Constant => 0.0,
        }
    }

    /// `[a(εx), ε a'(εx), ε² a''(εx), ε³ a'''(εx)]`.
    pub fn eval_scaled(&self, eps: f64, x: f64) -> [f64; 4] {
        let j = self.jet(eps * x);
        [j.a, eps * j.d1, eps * eps * j.d2, eps.powi(3) * j.d3]
    }

    /// Samples `a(εx_j)` on a grid of nodes.
    pub fn sample_scaled(&self, eps: f64, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.a(eps * x)).collect()
    }

    /// `|(a^{1/m})''' / (a^{1/m})'|` at `r`.
    pub fn third_derivative_ratio(&self, m: u32, r: f64) -> f64 {
        let j = self.jet(r);
        let q = 1.0 / m as f64;
        let ratio = (q - 1.0) * (q - 2.0) * (j.d1 / j.a).powi(2)
            + 3.0 * (q - 1.0) * j.d2 / j.a
            + j.d3 / j.d1;
        ratio.abs()
    }
}

/// Empirical verification of the standing hypotheses on `a`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub half_width: f64,
    pub samples: usize,
    pub strictly_between_limits: bool,
    pub increasing: bool,
    pub left_decay_rate: f64,
    pub right_decay_rate: f64,
    pub left_constant: f64,
    pub right_constant: f64,
    pub exponential_tails: bool,
    pub ratio_sup_inner: f64,
    pub ratio_sup_outer: f64,
    pub ratio_bounded: bool,
    pub holds: bool,
    pub failures: Vec<String>,
}

fn tail_rate(gap: impl Fn(f64) -> f64, near: f64, far: f64) -> f64 {
    let (gn, gf) = (gap(near), gap(far));
    if !(gn > 0.0) {
        return 0.0;
    }
    if gf <= 0.0 {
        return f64::INFINITY;
    }
    (gn / gf).ln() / (far - near).abs()
}

/// Checks `a_minus < a < a_plus`, `a' > 0`, exponential convergence to the
/// limits, and boundedness of `(a^{1/m})''' / (a^{1/m})'`, by sampling
/// `[-R, R]` with `R = max(100, 100/γ)`.
///
/// Tails count as exponential when the gap to the limit shrinks by at least
/// `e^5` across the outer half `[R/2, R]`. The ratio counts as bounded when
/// its supremum over `[-R, R]` is finite and at most twice the supremum over
/// `[-R/2, R/2]`.
pub fn verify_hypotheses(spec: &PotentialSpec, m: u32) -> Result<HypothesisReport> {
    spec.validate()?;
    let half_width = 100f64.max(100.0 / spec.steepness);
    let samples = 20_001;
    let dr = 2.0 * half_width / (samples - 1) as f64;
    let mut failures = Vec::new();

    let mut between = true;
    let mut increasing = true;
    let mut sup_inner: f64 = 0.0;
    let mut sup_outer: f64 = 0.0;
    let mut ratio_finite = true;
    for i in 0..samples {
        let r = -half_width + i as f64 * dr;
        if !(spec.gap_minus(r) > 0.0 && spec.gap_plus(r) > 0.0) {
            between = false;
        }
        if !(spec.jet(r).d1 > 0.0) {
            increasing = false;
        }
        let ratio = spec.third_derivative_ratio(m, r);
        if !ratio.is_finite() {
            ratio_finite = false;
            continue;
        }
        sup_outer = sup_outer.max(ratio);
        if r.abs() <= 0.5 * half_width {
            sup_inner = sup_inner.max(ratio);
        }
    }
    if !between {
        failures.push("a leaves the open interval (a_minus, a_plus)".into());
    }
    if !increasing {
        failures.push("a' is not strictly positive".into());
    }

    let r = half_width;
    let left_rate = tail_rate(|x| spec.gap_minus(x), -0.5 * r, -r);
    let right_rate = tail_rate(|x| spec.gap_plus(x), 0.5 * r, r);
    let threshold = 10.0 / r;
    let exponential_tails = left_rate >= threshold && right_rate >= threshold;
    if !exponential_tails {
        failures.push(format!(
            "tails decay too slowly: rates {left_rate:.3e} / {right_rate:.3e} below {threshold:.3e}"
        ));
    }
    let constant = |gap: &dyn Fn(f64) -> f64, rate: f64, sign: f64| -> f64 {
        if !rate.is_finite() || rate <= 0.0 {
            return f64::INFINITY;
        }
        let mut k: f64 = 0.0;
        for i in 0..samples / 2 {
            let x = sign * i as f64 * dr;
            let g = gap(x);
            if g > 0.0 {
                k = k.max(g * (rate * x.abs()).exp());
            }
        }
        k
    };
    let left_constant = constant(&|x| spec.gap_minus(x), left_rate, -1.0);
    let right_constant = constant(&|x| spec.gap_plus(x), right_rate, 1.0);

    let ratio_bounded = ratio_finite && sup_outer <= 2.0 * sup_inner + 1e-12;
    if !ratio_bounded {
        failures.push(format!(
            "(a^(1/m))'''/(a^(1/m))' unbounded: sup {sup_outer:.3e} on [-R,R] vs {sup_inner:.3e} on [-R/2,R/2]{}",
            if ratio_finite { "" } else { ", non-finite samples" }
        ));
    }
    let holds = between && increasing && exponential_tails && ratio_bounded;
    Ok(HypothesisReport {
        half_width,
        samples,
        strictly_between_limits: between,
        increasing,
        left_decay_rate: left_rate,
        right_decay_rate: right_rate,
        left_constant,
        right_constant,
        exponential_tails,
        ratio_sup_inner: sup_inner,
        ratio_sup_outer: sup_outer,
        ratio_bounded,
        holds,
        failures,
    })
}

/// Fails with [`Error::OutOfTheory`] unless the hypotheses hold or `allow` is set.
pub fn require_hypotheses(spec: &PotentialSpec, m: u32, allow: bool) -> Result<HypothesisReport> {
    let report = verify_hypotheses(spec, m)?;
    if !report.holds && !allow {
        return Err(Error::OutOfTheory(format!(
            "potential {:?}: {}",
            spec.family,
            report.failures.join("; ")
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(spec: &PotentialSpec) {
        let h = 1e-5;
        for &r in &[-1.7, -0.3, 0.0, 0.45, 2.2] {
            let j = spec.jet(r);
            let (p, m) = (spec.jet(r + h), spec.jet(r - h));
            assert!(((p.a - m.a) / (2.0 * h) - j.d1).abs() < 1e-8, "{spec:?} d1 at {r}");
            assert!(((p.d1 - m.d1) / (2.0 * h) - j.d2).abs() < 1e-8, "{spec:?} d2 at {r}");
            assert!(((p.d2 - m.d2) / (2.0 * h) - j.d3).abs() < 1e-7, "{spec:?} d3 at {r}");
            assert!((spec.gap_minus(r) - (j.a - spec.a_minus)).abs() < 1e-14);
            assert!((spec.gap_plus(r) - (spec.a_plus - j.a)).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for family in [
            PotentialFamily::Tanh,
            PotentialFamily::Erf,
            PotentialFamily::Algebraic,
            PotentialFamily::CompactRamp,
            PotentialFamily::Decreasing,
        ] {
            fd_check(&PotentialSpec { family, a_minus: 1.0, a_plus: 2.0, steepness: 1.3 });
        }
    }

    #[test]
    fn default_tanh_values() {
        let p = PotentialSpec::default();
        assert_eq!(p.a(0.0), 1.5);
        let j = p.jet(0.0);
        assert_eq!(j.d1, 0.5);
        let [a, da, _, _] = p.eval_scaled(0.1, 10.0);
        assert!((a - (3.0 + 1f64.tanh()) / 2.0).abs() < 1e-15);
        assert!((da - 0.1 * 0.5 * (1.0 - 1f64.tanh().powi(2))).abs() < 1e-15);
    }

    #[test]
    fn tanh_satisfies_hypotheses() {
        let rep = verify_hypotheses(&PotentialSpec::default(), 3).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert!((rep.left_decay_rate - 2.0).abs() < 1e-6);
        assert!(rep.left_constant <= 1.0 + 1e-12 && rep.left_constant > 0.5);
        for r in [-30.0, -10.0, -5.0] {
            assert!(PotentialSpec::default().gap_minus(r) <= (2.0 * r).exp());
        }
    }

    #[test]
    fn violations_are_reported() {
        let compact = PotentialSpec { family: PotentialFamily::CompactRamp, ..Default::default() };
        let rep = verify_hypotheses(&compact, 3).unwrap();
        assert!(!rep.holds && !rep.increasing);
        assert!(matches!(require_hypotheses(&compact, 3, false), Err(Error::OutOfTheory(_))));
        assert!(require_hypotheses(&compact, 3, true).is_ok());
        let dec = PotentialSpec { family: PotentialFamily::Decreasing, ..Default::default() };
        assert!(!verify_hypotheses(&dec, 3).unwrap().increasing);
        let alg = PotentialSpec { family: PotentialFamily::Algebraic, ..Default::default() };
        let rep = verify_hypotheses(&alg, 3).unwrap();
        assert!(!rep.exponential_tails && rep.ratio_bounded);
        let erf = PotentialSpec { family: PotentialFamily::Erf, ..Default::default() };
        assert!(!verify_hypotheses(&erf, 3).unwrap().holds);
    }

    #[test]
    fn validation() {
        assert!(PotentialSpec { a_plus: 0.5, ..Default::default() }.validate().is_err());
        assert!(PotentialSpec { steepness: 0.0, ..Default::default() }.validate().is_err());
        assert!(PotentialSpec::constant(2.0).validate().is_ok());
        assert_eq!(PotentialSpec::constant(2.0).jet(3.0).a, 2.0);
    }
}
