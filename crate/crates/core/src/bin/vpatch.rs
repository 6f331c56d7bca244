//! Command line front end. Every subcommand writes a bundle directory or
//! prints a JSON report; failures print one JSON line
//! `{"error": kind, "message": ...}` on stderr and exit with status 1, or 2
//! for malformed arguments.
//!
//! `VPATCH_THREADS` sets the size of the worker pool.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use vpatch::burbea::{continue_branch, fit_curvature, BranchConfig};
use vpatch::desing::{SolveMode, SolverConfig, Transition};
use vpatch::diagnostics::eps_log_spread;
use vpatch::experiment::{
    build_state, compare_runs, error_line, export_curves, export_field, run_experiment, write_report_bundle,
    BaseConfig, ErrorRecord, ExperimentConfig, GridConfig, ProfileConfig, RunSummary,
};
use vpatch::nondegeneracy::check_admissibility;
use vpatch::{Error, Result};

#[derive(Parser)]
#[command(name = "vpatch", version, about = "Rotating vortex patches and their smoothed, split and trapped versions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kirchhoff ellipse state on a grid.
    Kirchhoff {
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue the m-fold V-state branch through the given amplitudes.
    Burbea {
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.02,0.04,0.06,0.08,0.1")]
        s: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nondegeneracy check of a base state.
    Nondegen {
        #[command(flatten)]
        base: BaseArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 256)]
        nodes: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Smoothed patch down a width schedule.
    Desing(RunArgs),
    /// Smoothed patch split over several levels.
    Split(RunArgs),
    /// Smoothed patch trapped in disks of the given radii.
    Trap(RunArgs),
    /// Verdicts from the summary of a finished bundle.
    Diagnose { bundle: PathBuf },
    /// Field and report differences between two bundles.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaseKindArg {
    Kirchhoff,
    Burbea,
    Rankine,
}

#[derive(Args)]
struct BaseArgs {
    #[arg(long, value_enum, default_value = "kirchhoff")]
    base: BaseKindArg,
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    s: f64,
    /// Rotation speed of the Rankine vortex.
    #[arg(long, default_value_t = 0.1)]
    omega: f64,
}

impl BaseArgs {
    fn config(&self) -> BaseConfig {
        match self.base {
            BaseKindArg::Kirchhoff => BaseConfig::Kirchhoff { xi: self.xi },
            BaseKindArg::Burbea => BaseConfig::Burbea { m: self.m, s: self.s },
            BaseKindArg::Rankine => BaseConfig::Rankine { omega: self.omega },
        }
    }
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 1.3)]
    half_width: f64,
}

impl GridArgs {
    fn config(&self) -> GridConfig {
        GridConfig { n: self.n, half_width: self.half_width }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Flow,
    Newton,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransitionArg {
    Smooth,
    Quintic,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration; replaces every other option except `--out`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    base: BaseArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Width schedule as fractions of the band half-width.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05")]
    eps: Vec<f64>,
    /// Level spacing as a fraction of the band half-width.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Trapping radii.
    #[arg(long = "radii", value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "flow")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "smooth")]
    transition: TransitionArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy)]
enum RunKind {
    Desing,
    Split,
    Trap,
}

impl RunArgs {
    fn config(&self, kind: RunKind) -> Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(out) = &self.out {
                cfg.output = out.clone();
            }
            if cfg.output.as_os_str().is_empty() {
                return Err(Error::Config("the configuration names no output directory; pass --out".into()));
            }
            return Ok(cfg);
        }
        let (rho, sigmas, radii) = match kind {
            RunKind::Desing => (0.0, vec![1.0], vec![]),
            RunKind::Split => (0.05, vec![0.5, 0.0, 0.5], vec![]),
            RunKind::Trap => (0.0, vec![1.0], vec![4.0, 8.0, 16.0]),
        };
        let mode = match self.mode {
            ModeArg::Flow => SolveMode::Flow,
            ModeArg::Newton => SolveMode::Newton,
        };
        let transition = match self.transition {
            TransitionArg::Smooth => Transition::Smooth,
            TransitionArg::Quintic => Transition::Quintic,
        };
        let out = self.out.clone().ok_or_else(|| Error::Config("--out is required without --config".into()))?;
        Ok(ExperimentConfig {
            base: self.base.config(),
            grid: self.grid.config(),
            profile: ProfileConfig {
                transition,
                eps: self.eps.clone(),
                rho: self.rho.unwrap_or(rho),
                sigmas: self.sigmas.clone().unwrap_or(sigmas),
            },
            trap_radii: self.radii.clone().unwrap_or(radii),
            solver: SolverConfig { mode, ..SolverConfig::default() },
            output: out,
        })
    }
}

fn print_json(v: &Value) {
    // A closed pipe downstream is not an error of the run.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

/// A failure raised here, or one already recorded in a bundle.
enum Failure {
    Raised(Error),
    Recorded(ErrorRecord),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Raised(e)
    }
}

fn run(cfg: ExperimentConfig) -> std::result::Result<(), Failure> {
    let bundle = run_experiment(&cfg)?;
    print_json(&json!({ "bundle": bundle.dir, "files": bundle.manifest.files.len(), "summary": bundle.summary }));
    bundle.error.map_or(Ok(()), |e| Err(Failure::Recorded(e)))
}

fn kirchhoff(xi: f64, grid: &GridArgs, out: &Path) -> Result<()> {
    let state = build_state(&BaseConfig::Kirchhoff { xi }, &grid.config())?;
    std::fs::create_dir_all(out)?;
    export_field(&state.psi, "state_psi", out)?;
    export_curves(std::slice::from_ref(&state.sigma), &[0.0], "state_boundary", out)?;
    let report = json!({
        "xi": xi,
        "omega": state.omega_speed,
        "c": state.c,
        "tau": state.tau,
        "band_nodes": state.band.len(),
        "grad_floor": state.grad_floor,
        "boundary_grad_min": state.boundary_grad_min,
    });
    let manifest = write_report_bundle(out, &[("state", report.clone())], None)?;
    print_json(&json!({ "bundle": out, "files": manifest.files.len(), "state": report }));
    Ok(())
}

fn burbea(m: usize, s: &[f64], out: &Path) -> Result<()> {
    let points = continue_branch(m, s, &BranchConfig::default());
    let (report, err) = match points {
        Ok(p) => {
            let curvature = if p.len() >= 2 { fit_curvature(&p, m).ok() } else { None };
            let rows: Vec<Value> = p
                .iter()
                .map(|b| json!({"s": b.s, "omega": b.omega, "residual": b.residual, "sigma_min": b.sigma_min, "margin": b.margin, "coeffs": b.boundary.coeffs}))
                .collect();
            (json!({"m": m, "points": rows, "curvature": curvature}), None)
        }
        Err(e) => (json!({"m": m}), Some(e)),
    };
    write_report_bundle(out, &[("branch", report.clone())], err.as_ref())?;
    print_json(&report);
    err.map_or(Ok(()), Err)
}

fn nondegen(base: &BaseArgs, grid: &GridArgs, nodes: usize, tol: f64) -> Result<()> {
    let state = build_state(&base.config(), &grid.config())?;
    let r = check_admissibility(&state, nodes, tol)?;
    print_json(&serde_json::to_value(&r)?);
    if !r.verdict {
        return Err(Error::Degenerate(format!("sigma_min {:.3e} below {tol:.1e}", r.sigma_min)));
    }
    Ok(())
}

/// Verdict and value of one check on a summary.
fn verdict(name: &str, value: f64, pass: bool) -> Value {
    json!({ "check": name, "value": value, "pass": pass })
}

fn diagnose(dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(dir.join("summary.json"))?;
    let s: RunSummary = serde_json::from_str(&text)?;
    let mut checks = Vec::new();
    if s.deviations.len() >= 2 {
        let eps: Vec<f64> = s.deviations.iter().map(|d| d.eps).collect();
        let norms: [(&str, Vec<f64>); 3] = [
            ("l1_vorticity", s.deviations.iter().map(|d| d.l1_vorticity).collect()),
            ("tv_gap", s.deviations.iter().map(|d| d.tv_gap).collect()),
            ("sup_grad", s.deviations.iter().map(|d| d.sup_grad).collect()),
        ];
        for (name, v) in norms {
            let spread = eps_log_spread(&eps, &v)?;
            checks.push(verdict(&format!("{name}_spread"), spread, spread < 3.0));
        }
    }
    if !s.levels.is_empty() {
        let ok = s.levels.iter().all(|l| l.converged && l.monotone);
        checks.push(verdict("converged_monotone", s.levels.len() as f64, ok));
    }
    let sym = s.symmetry.values().copied().fold(0.0, f64::max);
    checks.push(verdict("symmetry", sym, sym < 1e-10));
    if let Some(sp) = &s.splitting {
        let gap = sp.distances.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(verdict("nested", gap, sp.nested && gap >= sp.distance_bound));
        checks.push(verdict("recovery", sp.recovery_error, sp.recovery_error < 1e-12));
    }
    if let Some(t) = &s.trap {
        let spread = t.boundary_spread.iter().copied().fold(0.0, f64::max);
        checks.push(verdict("boundary_constancy", spread, spread < 1e-10));
        if let Some(fit) = &t.fit {
            checks.push(verdict("trap_exponent", fit.exponent, (-2.6..=-1.6).contains(&fit.exponent)));
        }
    }
    print_json(&json!({ "bundle": dir, "warnings": s.warnings, "checks": checks }));
    Ok(())
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Kirchhoff { xi, grid, out } => Ok(kirchhoff(xi, &grid, &out)?),
        Command::Burbea { m, s, out } => Ok(burbea(m, &s, &out)?),
        Command::Nondegen { base, grid, nodes, tol } => Ok(nondegen(&base, &grid, nodes, tol)?),
        Command::Desing(a) => run(a.config(RunKind::Desing)?),
        Command::Split(a) => run(a.config(RunKind::Split)?),
        Command::Trap(a) => run(a.config(RunKind::Trap)?),
        Command::Diagnose { bundle } => Ok(diagnose(&bundle)?),
        Command::Compare { a, b } => {
            print_json(&serde_json::to_value(compare_runs(&a, &b)?).map_err(Error::from)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let message = e.kind().as_str().map_or_else(|| e.to_string(), str::to_string);
            let detail = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", json!({ "error": "usage", "message": format!("{message}: {detail}") }));
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    if let Some(n) = std::env::var("VPATCH_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": "config", "message": e.to_string() }));
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Raised(e)) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
        Err(Failure::Recorded(e)) => {
            eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
            ExitCode::FAILURE
        }
    }
}
