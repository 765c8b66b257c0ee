//! Scenario files.
//!
//! A scenario is a TOML document with the sections `[model]`, `[potential]`,
//! `[grid]`, `[time]`, `[analysis]`, `[sweep]` and `[output]`. Every key has a
//! default, unknown keys are rejected and duplicate keys are a parse error.
//! [`Scenario::echo`] writes the fully resolved scenario back out; parsing
//! the echo gives the same scenario again.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adiabatic::{check_eps, t_eps};
use crate::analysis::MonitorParams;
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::pde::{default_dt, default_grid, SimConfig, INITIAL_MARGIN};
use crate::potential::{verify_hypotheses, PotentialFamily, PotentialSpec};
use crate::soliton::{lambda0, solve_c_infinity, ModelConstants};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub m: u32,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { m: 3, lambda: 0.1, epsilon: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    pub family: PotentialFamily,
    pub a_minus: f64,
    pub a_plus: f64,
    pub steepness: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        let p = PotentialSpec::default();
        Self { family: p.family, a_minus: p.a_minus, a_plus: p.a_plus, steepness: p.steepness }
    }
}

impl PotentialSection {
    pub fn spec(&self) -> PotentialSpec {
        PotentialSpec {
            family: self.family,
            a_minus: self.a_minus,
            a_plus: self.a_plus,
            steepness: self.steepness,
        }
    }
}

/// Periodic domain `[-length/2, length/2]` with `n` nodes; both default from
/// `epsilon`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialProfile {
    /// `Q(x + (1-λ)T_ε)`.
    #[default]
    Bare,
    /// `Q(x + (1-λ)T_ε) / ã(ερ(-T_ε))`, the soliton of the local medium.
    MediumScaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    /// End time in units of `T_ε`; runs start at `-T_ε`.
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub snapshots_per_t_eps: usize,
    /// Spacing of the invariant records, in time units.
    pub record_interval: f64,
    pub initial: InitialProfile,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self { horizon: 3.0, dt: None, snapshots_per_t_eps: 20, record_interval: 0.1, initial: InitialProfile::Bare }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub a0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    pub x0: Vec<f64>,
    /// `γ` in the `K e^{-εγt}` envelope of the backward mass.
    pub decay_rate: f64,
    /// Noise floor of `‖w⁺‖_{H¹}` from a constant-medium control run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_floor: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { a0: 10.0, sigma: None, k0: None, x0: vec![5.0, 10.0, 20.0], decay_rate: 1.0, control_floor: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    /// Time samples per `[-T_ε, T_ε]` for the residual norms.
    pub residual_samples: usize,
    /// Also run the PDE at every `ε` and report shelf and tail errors.
    pub simulate: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { epsilons: vec![0.1, 0.05, 0.025], residual_samples: 41, simulate: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into(), snapshots: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSection,
    pub potential: PotentialSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            model: ModelSection::default(),
            potential: PotentialSection::default(),
            grid: GridSection::default(),
            time: TimeSection::default(),
            analysis: AnalysisSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Scenario {
    pub fn from_file(path: &Path, allow_out_of_theory: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, allow_out_of_theory)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(e))))
    }

    /// Parses, fills defaults and validates.
    pub fn parse(text: &str, allow_out_of_theory: bool) -> Result<Self> {
        let raw: Scenario = toml::from_str(text).map_err(|e| Error::Config(describe_toml_error(text, &e)))?;
        raw.resolve(allow_out_of_theory)
    }

    /// Fills the `ε`-dependent defaults and validates everything, listing
    /// every violated constraint.
    pub fn resolve(mut self, allow_out_of_theory: bool) -> Result<Self> {
        let mut errs = Vec::new();
        let m = self.model.m;
        let lam = self.model.lambda;
        let eps = self.model.epsilon;
        let m_ok = (2..=4).contains(&m);
        if !m_ok {
            errs.push(format!("model.m must be 2, 3 or 4, got {m}"));
        }
        if !(lam.is_finite() && (0.0..1.0).contains(&lam)) {
            errs.push(format!("model.lambda must lie in [0, 1), got {lam}"));
        } else if m_ok && lam > lambda0(m) + 1e-15 && !allow_out_of_theory {
            errs.push(format!(
                "model.lambda = {lam} exceeds lambda0 = {} for m = {m} (pass --allow-out-of-theory to override)",
                lambda0(m)
            ));
        }
        let eps_ok = check_eps(eps).is_ok();
        if !eps_ok {
            errs.push(format!("model.epsilon must lie in (0, 0.5], got {eps}"));
        }
        let pot = self.potential.spec();
        match pot.validate() {
            Err(e) => errs.push(format!("potential: {}", strip_prefix(e))),
            Ok(()) if m_ok && pot.family != PotentialFamily::Constant && !allow_out_of_theory => {
                match verify_hypotheses(&pot, m) {
                    Ok(r) if !r.holds => errs.push(format!("potential hypotheses fail: {}", r.failures.join("; "))),
                    Err(e) => errs.push(format!("potential: {}", strip_prefix(e))),
                    _ => {}
                }
            }
            Ok(()) => {}
        }

        if eps_ok {
            let g = default_grid(eps).expect("valid epsilon");
            self.grid.length.get_or_insert(g.length());
            self.grid.n.get_or_insert(g.n);
        }
        if let (Some(len), Some(n)) = (self.grid.length, self.grid.n) {
            match Grid1D::symmetric(0.5 * len, n) {
                Err(e) => errs.push(format!("grid: {}", strip_prefix(e))),
                Ok(g) => {
                    if g.h() > 0.25 {
                        errs.push(format!("grid spacing {} exceeds 0.25", g.h()));
                    }
                    if eps_ok && lam < 1.0 {
                        let start = (1.0 - lam) * t_eps(eps, lam);
                        if 0.5 * len < start + INITIAL_MARGIN {
                            errs.push(format!(
                                "grid.length = {len} cannot hold the initial soliton at x = -{start:.3} with margin {INITIAL_MARGIN}"
                            ));
                        }
                    }
                    self.time.dt.get_or_insert(default_dt(&g));
                }
            }
        }
        if !(self.time.horizon.is_finite() && self.time.horizon > -1.0) {
            errs.push(format!("time.horizon must exceed -1, got {}", self.time.horizon));
        }
        if let Some(dt) = self.time.dt {
            if !(dt.is_finite() && dt > 0.0) {
                errs.push(format!("time.dt must be positive, got {dt}"));
            }
        }
        if self.time.snapshots_per_t_eps == 0 {
            errs.push("time.snapshots_per_t_eps must be at least 1".into());
        }
        if !(self.time.record_interval.is_finite() && self.time.record_interval > 0.0) {
            errs.push(format!("time.record_interval must be positive, got {}", self.time.record_interval));
        }

        if m_ok && lam.is_finite() && (0.0..=lambda0(m)).contains(&lam) {
            let k = ModelConstants::new(m, lam).expect("checked");
            if let Ok(c_inf) = solve_c_infinity(&k) {
                let d = MonitorParams::defaults(&k, c_inf);
                let sigma = *self.analysis.sigma.get_or_insert(d.sigma);
                self.analysis.k0.get_or_insert(1.5 * (2.0 / sigma).sqrt());
                if lam < lambda0(m) {
                    if let Err(e) = self.monitor_params().validate(&k, c_inf) {
                        errs.push(format!("analysis: {}", strip_prefix(e)));
                    }
                }
            }
        } else if self.analysis.a0.is_nan() || self.analysis.a0 <= 0.0 {
            errs.push(format!("analysis.a0 must be positive, got {}", self.analysis.a0));
        }
        if !(self.analysis.decay_rate.is_finite() && self.analysis.decay_rate > 0.0) {
            errs.push(format!("analysis.decay_rate must be positive, got {}", self.analysis.decay_rate));
        }
        if let Some(f) = self.analysis.control_floor {
            if !(f.is_finite() && f >= 0.0) {
                errs.push(format!("analysis.control_floor must be non-negative, got {f}"));
            }
        }
        for &e in &self.sweep.epsilons {
            if check_eps(e).is_err() {
                errs.push(format!("sweep.epsilons entry {e} outside (0, 0.5]"));
            }
        }
        if self.sweep.residual_samples < 3 {
            errs.push("sweep.residual_samples must be at least 3".into());
        }
        if self.output.dir.is_empty() {
            errs.push("output.dir must not be empty".into());
        }

        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(format!("{} constraint violation(s):\n  - {}", errs.len(), errs.join("\n  - "))))
        }
    }

    /// The resolved scenario as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the echo with `[output]` reset, so that the hash names the
    /// computation rather than where its results go.
    pub fn hash(&self) -> [u8; 32] {
        let mut s = self.clone();
        s.output = OutputSection::default();
        Sha256::digest(s.echo().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn constants(&self) -> ModelConstants {
        ModelConstants::new(self.model.m, self.model.lambda).expect("validated")
    }

    pub fn grid(&self) -> Grid1D {
        let len = self.grid.length.expect("resolved");
        Grid1D::symmetric(0.5 * len, self.grid.n.expect("resolved")).expect("validated")
    }

    pub fn monitor_params(&self) -> MonitorParams {
        MonitorParams {
            a0: self.analysis.a0,
            sigma: self.analysis.sigma.unwrap_or(f64::NAN),
            k0: self.analysis.k0.unwrap_or(f64::NAN),
            x0: self.analysis.x0.clone(),
        }
    }

    /// Same scenario at another `ε`, with the grid and step re-derived.
    pub fn with_epsilon(&self, eps: f64, allow_out_of_theory: bool) -> Result<Self> {
        let mut s = self.clone();
        s.model.epsilon = eps;
        s.grid = GridSection::default();
        s.time.dt = None;
        s.resolve(allow_out_of_theory)
    }

    pub fn sim_config(&self, allow_out_of_theory: bool) -> Result<SimConfig> {
        let mut cfg = SimConfig::interaction_with_dt(
            self.constants(),
            self.potential.spec(),
            self.model.epsilon,
            self.grid(),
            self.time.horizon,
            self.time.dt.expect("resolved"),
        )?;
        cfg.record_every = ((self.time.record_interval / cfg.dt).round() as usize).max(1);
        cfg.snapshot_every = cfg.cadence_for(self.time.snapshots_per_t_eps);
        cfg.allow_out_of_theory = allow_out_of_theory;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The parser reports duplicate keys without naming them; the span does.
fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    let msg = e.to_string();
    match e.span().and_then(|r| text.get(r)) {
        Some(key) if e.message().contains("duplicate key") => {
            let key = key.trim().trim_matches('"');
            format!("duplicate key `{key}`\n{msg}")
        }
        _ => msg,
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(s) | Error::InvalidParameter(s) => s,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_round_trips() {
        let s = Scenario::parse("[model]\nm = 3\n", false).unwrap();
        assert_eq!(s.grid.n, Some(16384));
        assert_eq!(s.grid.length, Some(600.0));
        assert!(s.analysis.sigma.is_some() && s.time.dt.is_some());
        let again = Scenario::parse(&s.echo(), false).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.echo(), s.echo());
        assert_eq!(again.hash(), s.hash());
    }

    #[test]
    fn empty_file_is_the_default_scenario() {
        let s = Scenario::parse("", false).unwrap();
        assert_eq!(s, Scenario::default().resolve(false).unwrap());
    }

    #[test]
    fn lambda_above_critical_needs_override() {
        let text = "[model]\nm = 3\nlambda = 0.9\n";
        let e = Scenario::parse(text, false).unwrap_err().to_string();
        assert!(e.contains("lambda0"), "{e}");
        assert!(Scenario::parse(text, true).is_ok());
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let e = Scenario::parse("[model]\nmm = 3\n", false).unwrap_err().to_string();
        assert!(e.contains("mm"), "{e}");
        let e = Scenario::parse("[model]\nm = 3\nm = 2\n", false).unwrap_err().to_string();
        assert!(e.contains("duplicate") && e.contains("`m`"), "{e}");
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn violations_are_listed_together() {
        let text = "[model]\nm = 7\nepsilon = 2.0\n[time]\nsnapshots_per_t_eps = 0\n";
        let e = Scenario::parse(text, false).unwrap_err().to_string();
        assert!(e.contains("model.m") && e.contains("model.epsilon") && e.contains("snapshots_per_t_eps"), "{e}");
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = Scenario::parse("", false).unwrap();
        let b = Scenario::parse("[output]\ndir = \"elsewhere\"\n", false).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Scenario::parse("[model]\nepsilon = 0.1\n", false).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn sim_config_matches_interaction_blocks() {
        let s = Scenario::parse("[model]\nepsilon = 0.1\n[time]\nhorizon = 1.0\n", false).unwrap();
        let cfg = s.sim_config(false).unwrap();
        let te = t_eps(0.1, 0.1);
        assert!((cfg.t_start + te).abs() < 1e-12 && (cfg.t_end - te).abs() < 1e-12);
        assert_eq!(cfg.steps() % crate::pde::STEP_BLOCK, 0);
    }
}
