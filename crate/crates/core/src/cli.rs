//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::Scenario;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "akdv", version, about = "Solitons of generalized KdV equations in slowly varying media")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "AKDV_THREADS")]
    pub threads: Option<usize>,
    /// Accept parameters outside the theory's hypotheses, with a warning.
    #[arg(long, global = true)]
    pub allow_out_of_theory: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file; the built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form identity checks; exits nonzero if any fails.
    Verify(Common),
    /// Integrate the modulation ODE for `c` and `ρ`.
    Adiabatic(Common),
    /// Solve the model problems and measure the residual of the corrected solution.
    Correction(Common),
    /// Run the PDE and write invariants and snapshots.
    Simulate(Common),
    /// Fit and budget the snapshots of a `simulate` run.
    Analyze {
        /// Directory written by `simulate`.
        #[arg(long)]
        run: PathBuf,
        /// Where to write the results; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Independent runs over several values of epsilon.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated epsilons; overrides `sweep.epsilons`.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
}

fn load(common: &Common, allow: bool) -> Result<(Scenario, PathBuf)> {
    let scn = match &common.config {
        Some(p) => Scenario::from_file(p, allow)?,
        None => Scenario::default().resolve(allow)?,
    };
    let out = commands::output_dir(&scn, common.out.as_deref());
    std::fs::create_dir_all(&out)?;
    Ok((scn, out))
}

fn warn_out_of_theory(scn: &Scenario) {
    let k = scn.constants();
    if k.check_in_theory().is_err() {
        eprintln!("warning: lambda = {} lies outside [0, {}]; results carry no guarantee", k.lambda, k.lambda0());
    }
    if matches!(k.m, 2 | 4) && k.lambda == 0.0 {
        eprintln!("warning: m = {} with lambda = 0 only has the exponential stability bound", k.m);
    }
}

fn say(out: &Path, what: &str) {
    eprintln!("{what} written to {}", out.display());
}

/// Runs the parsed command and returns the process exit status.
pub fn execute(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let allow = cli.allow_out_of_theory;
    match &cli.command {
        Command::Verify(c) => {
            let (scn, out) = load(c, allow)?;
            let r = commands::verify_to(&scn, allow, &out)?;
            for ch in r.checks.iter().filter(|c| !c.pass) {
                eprintln!("FAIL {}: error {:.3e} (tolerance {:.1e})", ch.name, ch.error, ch.tolerance);
            }
            println!("{} of {} checks passed", r.total - r.failed, r.total);
            say(&out, "verify.json");
            return Ok(if r.pass { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::Adiabatic(c) => {
            let (scn, out) = load(c, allow)?;
            warn_out_of_theory(&scn);
            let s = commands::adiabatic_to(&scn, allow, &out)?;
            println!(
                "T_eps = {:.6}  c(T_eps) = {:.10}  c(10 T_eps) = {:.10}  c_inf = {:.10}  drift = {:.3e}",
                s.t_eps, s.c_at_t_eps, s.c_end, s.c_infinity, s.first_integral_drift
            );
            say(&out, "adiabatic.csv, adiabatic.json");
        }
        Command::Correction(c) => {
            let (scn, out) = load(c, allow)?;
            warn_out_of_theory(&scn);
            let s = commands::correction_to(&scn, allow, &out)?;
            println!(
                "beta_tilde = {:.12}  beta_hat = {:.12}  max |S| corrected {:.4e}, uncorrected {:.4e}",
                s.tilde.beta, s.hat.beta, s.residual_corrected.max_l2, s.residual_uncorrected.max_l2
            );
            say(&out, "profiles.csv, correction.json");
        }
        Command::Simulate(c) => {
            let (scn, out) = load(c, allow)?;
            warn_out_of_theory(&scn);
            let s = commands::simulate_to(&scn, allow, &out)?;
            let r = &s.run;
            println!(
                "{} steps of {:.3e}: energy drift {:.3e}, L1 drift {:.3e}, mass increase {:.3e}",
                r.steps, r.dt, r.energy_drift, r.l1_drift, r.max_mass_increase
            );
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            say(&out, "invariants.csv, summary.json and snapshots");
        }
        Command::Analyze { run, out } => {
            let out = out.clone().unwrap_or_else(|| run.clone());
            std::fs::create_dir_all(&out)?;
            let r = commands::analyze_to(run, allow, &out)?;
            if let Some(e) = &r.exit {
                println!("c2(T_eps) = {:.6} vs c_inf = {:.6}; |w|_H1 = {:.4e}", e.c2, e.c_infinity, e.w_h1);
            }
            if let Some(t) = &r.tail {
                println!("tail L1 {:.6} vs predicted {:.6}", t.tail_mean, t.predicted);
            }
            say(&out, "modulation.csv, monitors.csv, budget.json");
        }
        Command::Sweep { common, eps } => {
            let (scn, out) = load(common, allow)?;
            warn_out_of_theory(&scn);
            let list = eps.clone().unwrap_or_else(|| scn.sweep.epsilons.clone());
            let r = commands::sweep_to(&scn, &list, allow, &out)?;
            println!(
                "residual slope {:.4} (corrected), {:.4} (uncorrected)",
                r.slopes.residual_corrected, r.slopes.residual_uncorrected
            );
            for row in r.rows.iter().filter(|r| r.status != "ok") {
                eprintln!("epsilon {}: {}", row.epsilon, row.status);
            }
            say(&out, "sweep.csv, sweep.json");
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Entry point of the binary: parse, run, and map errors to exit code 2.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from(["akdv", "--threads", "2", "sweep", "--eps", "0.1,0.05", "--out", "o"]).unwrap();
        assert_eq!(cli.threads, Some(2));
        match cli.command {
            Command::Sweep { eps, common } => {
                assert_eq!(eps.unwrap(), vec![0.1, 0.05]);
                assert_eq!(common.out.unwrap(), PathBuf::from("o"));
            }
            other => panic!("{other:?}"),
        }
        let cli = Cli::try_parse_from(["akdv", "verify", "--allow-out-of-theory"]).unwrap();
        assert!(cli.allow_out_of_theory);
    }
}
