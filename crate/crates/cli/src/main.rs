//! `hopfwave`: certify a Hopf point, compute the bifurcation direction,
//! continue the periodic branch, or simulate the evolution problem.

mod config;

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hopfwave_core::direction::{self, Direction};
use hopfwave_core::eigen::{self, HopfCertificate};
use hopfwave_core::model::ProblemSpec;
use hopfwave_core::periodic::{PeriodicError, PeriodicSolver};
use hopfwave_core::timedomain::{self, SimState};
use serde::Serialize;
use serde_json::json;

use config::ProblemFile;

#[derive(Parser)]
#[command(name = "hopfwave", version, about = "Hopf bifurcation toolkit for delayed semilinear wave equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Problem file (JSON).
    file: PathBuf,
    /// Output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the randomized restart schedule.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Hopf hypotheses and write the certificate as JSON.
    Certificate(Common),
    /// Certificate plus the curvature of τ along the branch.
    Direction(Common),
    /// Continue the periodic branch; CSV of orbits plus a JSON summary.
    Branch(Common),
    /// Integrate the evolution problem; CSV probe trace plus a JSON summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Delay (defaults to tau_guess).
        #[arg(long, allow_hyphen_values = true)]
        tau: Option<f64>,
        /// Final time (defaults to simulation.T).
        #[arg(long = "T", allow_hyphen_values = true)]
        t_end: Option<f64>,
    },
}

/// Failure with its exit code.
struct Exit {
    code: u8,
    error: anyhow::Error,
}

const INPUT: u8 = 2;
const CERTIFICATION: u8 = 3;
const STRUCTURE: u8 = 4;
const CONVERGENCE: u8 = 5;
const SIMULATION: u8 = 6;

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Exit {
    move |error| Exit { code, error }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Exit> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(fail(INPUT)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).context("writing stdout").map_err(fail(INPUT))
        }
    }
}

fn to_json(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    text
}

/// The JSON summary goes to stdout when the CSV went to a file, else to stderr.
fn write_summary(out: Option<&Path>, value: &serde_json::Value) {
    let text = to_json(value);
    if out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
}

fn load(path: &Path) -> Result<(ProblemFile, ProblemSpec), Exit> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(fail(INPUT))?;
    let file = ProblemFile::from_json(&text).map_err(|e| fail(INPUT)(e.into()))?;
    let spec = file.spec().map_err(|e| fail(INPUT)(e.into()))?;
    Ok((file, spec))
}

/// Runs the certificate; returns it when every hypothesis holds and
/// otherwise the JSON report to emit with exit code 3.
fn certify(file: &ProblemFile, spec: &ProblemSpec, seed: Option<u64>) -> Result<HopfCertificate, serde_json::Value> {
    match eigen::certify(spec, &file.certify_options(seed)) {
        Ok(cert) if cert.flags.passed() => Ok(cert),
        Ok(cert) => Err(json!({ "passed": false, "tau0": cert.tau0, "certificate": cert })),
        Err(failure) => Err(json!({
            "passed": false,
            "flags": failure.flags,
            "fredholm": failure.fredholm,
            "error": failure.source.to_string(),
        })),
    }
}

fn certification_failed(out: Option<&Path>, report: &serde_json::Value) -> Exit {
    if let Err(e) = write_output(out, &to_json(report)) {
        return e;
    }
    Exit {
        code: CERTIFICATION,
        error: anyhow::anyhow!("certification failed"),
    }
}

fn cmd_certificate(c: &Common) -> Result<(), Exit> {
    let (file, spec) = load(&c.file)?;
    let out = c.out.as_deref();
    let cert = certify(&file, &spec, c.seed).map_err(|r| certification_failed(out, &r))?;
    write_output(out, &to_json(&json!({ "passed": true, "tau0": cert.tau0, "certificate": cert })))
}

fn direction_of(spec: &ProblemSpec, cert: &HopfCertificate) -> anyhow::Result<Direction> {
    let cubic = direction::check_structure(spec, cert.grid_m)?;
    Ok(direction::compute_direction(cert, &cubic)?)
}

fn cmd_direction(c: &Common) -> Result<(), Exit> {
    let (file, spec) = load(&c.file)?;
    let out = c.out.as_deref();
    let cert = certify(&file, &spec, c.seed).map_err(|r| certification_failed(out, &r))?;
    let dir = direction_of(&spec, &cert).map_err(fail(STRUCTURE))?;
    write_output(
        out,
        &to_json(&json!({
            "passed": true,
            "tau0": cert.tau0,
            "tau_curvature": dir.tau_curvature,
            "supercritical": dir.supercritical,
            "direction": dir,
            "certificate": cert,
        })),
    )
}

fn cmd_branch(c: &Common) -> Result<(), Exit> {
    let (file, spec) = load(&c.file)?;
    let out = c.out.as_deref();
    let positive = file.solver.eps_grid.iter().filter(|e| **e > 0.0).count();
    if positive < 3 {
        return Err(fail(INPUT)(PeriodicError::DegenerateFit(positive).into()));
    }
    let cert = certify(&file, &spec, c.seed).map_err(|r| certification_failed(out, &r))?;
    let solver = PeriodicSolver::from_certificate(&spec, &cert, file.solver_options())
        .context("setting up the periodic solver")
        .map_err(fail(CONVERGENCE))?;
    let branch = solver
        .continue_branch(&file.solver.eps_grid)
        .context("continuing the periodic branch")
        .map_err(fail(CONVERGENCE))?;
    let mut csv = String::from("eps,omega,tau,residual_norm\n");
    let mut pde_max: f64 = 0.0;
    for o in &branch.orbits {
        csv.push_str(&format!("{},{},{},{:e}\n", o.eps, o.omega, o.tau, o.residual_norm));
        let res = solver.pde_residual_check(o).context("PDE residual").map_err(fail(CONVERGENCE))?;
        pde_max = pde_max.max(res / (1.0 + solver.reconstruct_u(o).max_abs()));
    }
    write_output(out, &csv)?;
    let dir = direction_of(&spec, &cert).ok();
    let predicted = dir.as_ref().map(|d| d.tau_curvature);
    let gap = predicted.map(|p| (branch.fit_tau_curvature - p).abs() / p.abs());
    write_summary(
        out,
        &json!({
            "tau0": cert.tau0,
            "seed": cert.seed,
            "harmonics": solver.harmonics,
            "fit_tau_curvature": branch.fit_tau_curvature,
            "fit_tau_slope": branch.fit_tau_slope,
            "fit_omega_curvature": branch.fit_omega_curvature,
            "fit_omega_slope": branch.fit_omega_slope,
            "direction_tau_curvature": predicted,
            "relative_gap": gap,
            "max_relative_pde_residual": pde_max,
            "last_orbit": branch.orbits.last(),
        }),
    );
    Ok(())
}

fn cmd_simulate(c: &Common, tau: Option<f64>, t_end: Option<f64>) -> Result<(), Exit> {
    let (file, spec) = load(&c.file)?;
    let out = c.out.as_deref();
    let tau = tau.unwrap_or(file.tau_guess);
    let t_end = t_end.unwrap_or(file.simulation.t_end);
    let opts = file.sim_options();
    let m = opts.m;
    let u: Vec<f64> = (0..=m)
        .map(|i| file.simulation.amplitude * (PI * i as f64 / (2.0 * m as f64)).sin())
        .collect();
    let state = SimState::from_displacement(&spec, tau, &u, opts.cfl).map_err(|e| fail(SIMULATION)(e.into()))?;
    let orbit = timedomain::run_to_orbit(state, t_end, &opts).map_err(|e| fail(SIMULATION)(e.into()))?;
    let mut csv = String::from("t,u\n");
    for (t, u) in &orbit.probe {
        csv.push_str(&format!("{t},{u:e}\n"));
    }
    write_output(out, &csv)?;
    write_summary(
        out,
        &json!({
            "tau": tau,
            "T": t_end,
            "period": orbit.period,
            "omega": 2.0 * PI / orbit.period,
            "amplitude": orbit.amplitude,
            "amplitude_drift": orbit.amplitude_drift,
            "crossings": orbit.crossings,
            "dt": orbit.dt,
        }),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certificate(c) => cmd_certificate(c),
        Command::Direction(c) => cmd_direction(c),
        Command::Branch(c) => cmd_branch(c),
        Command::Simulate { common, tau, t_end } => cmd_simulate(common, *tau, *t_end),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
