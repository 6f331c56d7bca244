//! Smoothed, split and trapped patches.
//!
//! The vorticity of the base patch is replaced on the band by a smooth
//! transition `Σ σ_k γ(-(Ψ + ψ + kρ)/ε)` and the band correction `ψ` is
//! found from the stream-function equation
//!
//! ```text
//! Ψ + ψ = Σ σ_k N_q[Γ_ε(ψ + kρ)] - Ω|x|²/2 - c    on the band,
//! ```
//!
//! with `Ω` and `c` inherited from the base state. The equation is solved by
//! a Newton flow whose Jacobian systems are reduced to the active layer of
//! the transition and solved matrix-free with MINRES.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::grid::{dot, group_maps_grid, Grid2D, ScalarField};
use crate::kernels::{image_term, self_cell_weight, Convolver, KernelParam};
use crate::state::{AdmissibleState, Region};

/// Lattice size for the area fractions of boundary cells in the base
/// potential.
pub const FRACTION_SAMPLES: usize = 32;

/// Default sub-samples per cell side for the vorticity quadrature.
pub const DEFAULT_CELL_SAMPLES: usize = 8;

/// Transition function `γ` with `γ = 0` on `t ≤ -1` and `γ = 1` on `t ≥ 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    /// `C^∞` quotient of `exp(-1/s)` bumps.
    #[default]
    Smooth,
    /// `C²` quintic smoothstep.
    Quintic,
}

fn bump(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

impl Transition {
    pub fn value(self, t: f64) -> f64 {
        if t <= -1.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        match self {
            Transition::Smooth => {
                let a = bump(0.5 * (1.0 + t));
                let b = bump(0.5 * (1.0 - t));
                a / (a + b)
            }
            Transition::Quintic => {
                let s = 0.5 * (1.0 + t);
                s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
            }
        }
    }

    pub fn slope(self, t: f64) -> f64 {
        if t <= -1.0 || t >= 1.0 {
            return 0.0;
        }
        match self {
            Transition::Smooth => {
                let (u, v) = (0.5 * (1.0 + t), 0.5 * (1.0 - t));
                let (a, b) = (bump(u), bump(v));
                let s = a + b;
                0.5 * a * b * (1.0 / (u * u) + 1.0 / (v * v)) / (s * s)
            }
            Transition::Quintic => {
                let s = 0.5 * (1.0 + t);
                15.0 * s * s * (1.0 - s) * (1.0 - s)
            }
        }
    }

    /// Both built-in transitions are nondecreasing.
    pub fn is_monotone(self) -> bool {
        true
    }
}

/// Smoothing width `ε`, level spacing `ρ` and level weights `σ_{-M..M}`, all
/// in stream-function units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VorticityProfile {
    pub transition: Transition,
    pub eps: f64,
    pub rho: f64,
    pub sigmas: Vec<f64>,
}

impl VorticityProfile {
    pub fn new(transition: Transition, eps: f64, rho: f64, sigmas: Vec<f64>) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return config(format!("smoothing width must be positive, got {eps}"));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return config(format!("level spacing must be nonnegative, got {rho}"));
        }
        if sigmas.len().is_multiple_of(2) {
            return config("level weights need an odd count, indexed -M..M");
        }
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return config("level weights must be nonnegative");
        }
        let total: f64 = sigmas.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return config(format!("level weights must sum to 1, got {total}"));
        }
        Ok(Self { transition, eps, rho, sigmas })
    }

    /// One level, `M = 0`.
    pub fn single(eps: f64) -> Result<Self> {
        Self::new(Transition::Smooth, eps, 0.0, vec![1.0])
    }

    /// Profile with `ε` and `ρ` given as fractions of the band half-width.
    pub fn relative(state: &AdmissibleState, eps: f64, rho: f64, sigmas: Vec<f64>) -> Result<Self> {
        Self::new(Transition::Smooth, eps * state.tau, rho * state.tau, sigmas)
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.transition, eps, self.rho, self.sigmas.clone())
    }

    pub fn levels(&self) -> usize {
        (self.sigmas.len() - 1) / 2
    }

    /// Pairs `(kρ, σ_k)` with nonzero weight.
    pub fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let m = self.levels() as f64;
        self.sigmas
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != 0.0)
            .map(move |(i, s)| ((i as f64 - m) * self.rho, *s))
    }

    /// The transitions, shifted by `±Mρ` and perturbed within the a-priori
    /// radius, must stay inside the band.
    pub fn check_fits(&self, state: &AdmissibleState) -> Result<()> {
        let reach = self.eps + self.levels() as f64 * self.rho + state.band_bound();
        if reach >= state.tau {
            return config(format!(
                "ε + Mρ + a-priori radius = {reach:.3e} reaches the band half-width {:.3e}",
                state.tau
            ));
        }
        Ok(())
    }
}

fn band_sup(state: &AdmissibleState, psi: &ScalarField) -> f64 {
    state.band.iter().fold(0.0, |m: f64, &k| m.max(psi.values[k].abs()))
}

/// One regularized Heaviside term `Γ_ε(ψ + shift)`: `γ(-(Ψ+ψ+shift)/ε)` on
/// the band, 1 inside and 0 outside, together with its derivative field
/// `-(1/ε)γ'(...)`, which vanishes off the band.
pub fn heaviside_field(
    state: &AdmissibleState,
    psi: &ScalarField,
    shift: f64,
    eps: f64,
    transition: Transition,
) -> Result<(ScalarField, ScalarField)> {
    let g = state.psi.grid;
    if psi.grid != g {
        return config("perturbation grid differs from the state grid");
    }
    if band_sup(state, psi) > state.band_bound() {
        return Err(Error::Admissibility(format!(
            "perturbation sup {:.3e} exceeds the band bound {:.3e}",
            band_sup(state, psi),
            state.band_bound()
        )));
    }
    let mut value = ScalarField::zeros(g);
    let mut deriv = ScalarField::zeros(g);
    for (k, r) in state.region.iter().enumerate() {
        match r {
            Region::Inner => value.values[k] = 1.0,
            Region::Outer => {}
            Region::Band => {
                let t = -(state.psi.values[k] + psi.values[k] + shift) / eps;
                value.values[k] = transition.value(t);
                deriv.values[k] = -transition.slope(t) / eps;
            }
        }
    }
    Ok((value, deriv))
}

/// The assembled vorticity `Σ σ_k Γ_ε(ψ + kρ)` on the whole grid.
pub fn vorticity(state: &AdmissibleState, psi: &ScalarField, profile: &VorticityProfile) -> Result<ScalarField> {
    let mut out = ScalarField::zeros(state.psi.grid);
    for (shift, s) in profile.terms() {
        let (v, _) = heaviside_field(state, psi, shift, profile.eps, profile.transition)?;
        for (o, x) in out.values.iter_mut().zip(&v.values) {
            *o += s * x;
        }
    }
    Ok(out)
}

/// Solution of a Jacobian system `J δ = r`.
#[derive(Debug, Clone)]
pub struct LinearSolve {
    pub step: Vec<f64>,
    /// Estimate of the smallest singular value of the reduced operator.
    pub sigma_min: f64,
    pub iterations: usize,
}

/// A square nonlinear system `G(x) = 0` for the Newton flow. The target of
/// the flow is absorbed into `G`.
pub trait FlowProblem {
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Solves `G'(x) δ = r`.
    fn linear_solve(&self, x: &[f64], r: &[f64]) -> Result<LinearSolve>;

    /// Projects onto the symmetric class, returning the sup-norm correction.
    fn project(&self, _x: &mut [f64]) -> f64 {
        0.0
    }

    /// A-priori radius the iterates must stay in.
    fn radius(&self) -> f64 {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    #[default]
    Flow,
    Newton,
}

/// Time stepping inside one outer flow interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Explicit Euler substeps; the substep length is capped at 1.
    #[default]
    Euler,
    /// `x + (1 - e^{-T}) δ`, exact when the residual map is affine.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Trapping parameter `q = 1/R²`, 0 for the free plane.
    pub qoppa: f64,
    pub mode: SolveMode,
    pub integrator: Integrator,
    /// Length `T` of the first outer interval.
    pub step: f64,
    /// Factor applied to `T` after each outer step.
    pub growth: f64,
    /// Largest outer interval.
    pub max_step: f64,
    pub substeps: usize,
    pub max_outer: usize,
    /// Sup-norm tolerance on the residual.
    pub tol: f64,
    pub linear_tol: f64,
    pub max_linear: usize,
    /// A-priori sup-norm radius; `None` is a quarter of the band half-width.
    pub radius: Option<f64>,
    /// Start of the `ε` continuation as a fraction of the band half-width.
    pub eps_start: f64,
    pub eps_factor: f64,
    pub max_backtracks: usize,
    /// Singular values below this are treated as a degenerate Jacobian.
    pub sigma_guard: f64,
    /// Sub-samples per cell side for the vorticity quadrature.
    pub cell_samples: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            qoppa: 0.0,
            mode: SolveMode::Flow,
            integrator: Integrator::Euler,
            step: 0.5,
            growth: 2.0,
            max_step: 64.0,
            substeps: 4,
            max_outer: 40,
            tol: 1e-10,
            linear_tol: 1e-12,
            max_linear: 1000,
            radius: None,
            eps_start: 0.5,
            eps_factor: 0.7,
            max_backtracks: 4,
            sigma_guard: 1e-10,
            cell_samples: DEFAULT_CELL_SAMPLES,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.step, self.growth, self.max_step, self.tol, self.linear_tol, self.eps_start, self.sigma_guard];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return config("step, growth, tolerances and guards must be positive");
        }
        if self.growth < 1.0 || !(self.eps_factor > 0.0 && self.eps_factor < 1.0) {
            return config("step growth must be >= 1 and the ε factor in (0, 1)");
        }
        if self.substeps == 0 || self.max_outer == 0 || self.max_linear == 0 || self.cell_samples == 0 {
            return config("substeps and iteration limits must be positive");
        }
        KernelParam::new(self.qoppa)?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelParam> {
        KernelParam::new(self.qoppa)
    }
}

/// Per-solve history. Entry 0 of each trace is the initial state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Sup norm of the residual after each outer step.
    pub residuals: Vec<f64>,
    /// Cumulative pseudo-time `t_n` (flow mode only).
    pub times: Vec<f64>,
    /// `‖G(x_n) - e^{-t_n} G(x_0)‖∞` (flow mode only).
    pub defects: Vec<f64>,
    /// Smallest singular value estimate of each Jacobian solve.
    pub sigma_min: Vec<f64>,
    /// Symmetry projection correction after each update.
    pub projections: Vec<f64>,
    pub linear_iterations: usize,
    pub outer_steps: usize,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }

    /// True when every outer step lowered the residual.
    pub fn is_monotone(&self) -> bool {
        self.residuals.windows(2).all(|w| w[1] < w[0])
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Newton flow `x' = -G'(x)⁻¹ G(x)` over outer intervals of growing length,
/// or damped Newton in [`SolveMode::Newton`]. Along the exact flow
/// `G(x(t)) = e^{-t} G(x_0)`; the deviation from this law is reported.
pub fn newton_flow_solve<P: FlowProblem>(problem: &P, x0: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut rep = SolveReport::default();
    let r0 = problem.residual(&x)?;
    let mut r = r0.clone();
    let mut rn = sup(&r);
    rep.residuals.push(rn);
    if cfg.mode == SolveMode::Flow {
        rep.times.push(0.0);
        rep.defects.push(0.0);
    }
    if rn < cfg.tol {
        rep.converged = true;
        return Ok((x, rep));
    }
    let solve = |x: &[f64], r: &[f64], rep: &mut SolveReport| -> Result<Vec<f64>> {
        let ls = problem.linear_solve(x, r)?;
        rep.linear_iterations += ls.iterations;
        rep.sigma_min.push(ls.sigma_min);
        if !(ls.sigma_min > cfg.sigma_guard) {
            return Err(Error::Degenerate(format!("Jacobian singular value {:.3e} below the guard", ls.sigma_min)));
        }
        Ok(ls.step)
    };
    let radius = cfg.radius.unwrap_or(problem.radius());
    let mut best = rn;
    let mut stalled = 0;
    let mut t = 0.0;
    let mut step = cfg.step;
    for _ in 0..cfg.max_outer {
        match cfg.mode {
            SolveMode::Flow => {
                match cfg.integrator {
                    Integrator::Exponential => {
                        let d = solve(&x, &r, &mut rep)?;
                        let a = -(-step).exp_m1();
                        x.iter_mut().zip(&d).for_each(|(xi, di)| *xi -= a * di);
                    }
                    Integrator::Euler => {
                        let n = cfg.substeps.max(step.ceil() as usize);
                        let dt = step / n as f64;
                        for s in 0..n {
                            if s > 0 {
                                r = problem.residual(&x)?;
                            }
                            let d = solve(&x, &r, &mut rep)?;
                            x.iter_mut().zip(&d).for_each(|(xi, di)| *xi -= dt * di);
                        }
                    }
                }
                rep.projections.push(problem.project(&mut x));
                r = problem.residual(&x)?;
                t += step;
                step = (step * cfg.growth).min(cfg.max_step);
                let decay = (-t).exp();
                rep.times.push(t);
                rep.defects.push(r.iter().zip(&r0).fold(0.0, |m: f64, (a, b)| m.max((a - decay * b).abs())));
            }
            SolveMode::Newton => {
                let d = solve(&x, &r, &mut rep)?;
                let mut lambda = 1.0;
                loop {
                    let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi - lambda * di).collect();
                    let corr = problem.project(&mut trial);
                    let rt = problem.residual(&trial)?;
                    if sup(&rt) < rn || lambda < 1.0 / 1024.0 {
                        x = trial;
                        r = rt;
                        rep.projections.push(corr);
                        break;
                    }
                    lambda *= 0.5;
                }
            }
        }
        rep.outer_steps += 1;
        rn = sup(&r);
        rep.residuals.push(rn);
        if !rn.is_finite() {
            return Err(Error::NoConvergence(format!("residual is not finite after {} outer steps", rep.outer_steps)));
        }
        if sup(&x) > radius {
            return Err(Error::Admissibility(format!(
                "iterate sup {:.3e} left the a-priori radius {radius:.3e}",
                sup(&x)
            )));
        }
        if rn < cfg.tol {
            rep.converged = true;
            return Ok((x, rep));
        }
        if rn < best {
            best = rn;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 5 {
                return Err(Error::NoConvergence(format!("residual stalled at {best:.3e} for 5 outer steps")));
            }
        }
    }
    Err(Error::NoConvergence(format!("residual {rn:.3e} above {:.1e} after {} outer steps", cfg.tol, cfg.max_outer)))
}

struct Minres {
    x: Vec<f64>,
    iterations: usize,
    /// Lanczos tridiagonal: diagonal and off-diagonal.
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

/// MINRES for a symmetric operator, started from zero.
fn minres(op: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], tol: f64, maxit: usize) -> Minres {
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta1 = dot_n(b, b).sqrt();
    let mut out = Minres { x: Vec::new(), iterations: 0, alpha: Vec::new(), beta: Vec::new() };
    if beta1 == 0.0 {
        out.x = x;
        return out;
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    for itn in 1..=maxit {
        let v: Vec<f64> = y.iter().map(|t| t / beta).collect();
        y = op(&v);
        if itn >= 2 {
            let f = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(a, b)| *a -= f * b);
        }
        let alfa = dot_n(&v, &y);
        let f = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(a, b)| *a -= f * b);
        std::mem::swap(&mut r1, &mut r2);
        r2.clone_from(&y);
        oldb = beta;
        beta = dot_n(&y, &y).sqrt();
        out.alpha.push(alfa);
        out.beta.push(beta);
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
        w = v.iter().zip(&w1).zip(&w2).map(|((vi, a), b)| (vi - oldeps * a - delta * b) / gamma).collect();
        x.iter_mut().zip(&w).for_each(|(xi, wi)| *xi += phi * wi);
        out.iterations = itn;
        if phibar <= tol * beta1 || beta == 0.0 {
            break;
        }
    }
    out.x = x;
    out
}

fn dot_n(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest singular value of the `(k+1)×k` Lanczos matrix. It bounds the
/// smallest singular value of the operator from above and, unlike interior
/// Ritz values, never drops spuriously close to zero.
fn lanczos_sigma_floor(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    if k == 0 {
        return 1.0;
    }
    let mut t = DMatrix::zeros(k + 1, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        t[(i + 1, i)] = beta[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
        }
    }
    t.singular_values().iter().fold(f64::INFINITY, |m, s| m.min(*s))
}

/// Discrete operator of the perturbed equation on the band of one state.
///
/// All vorticity lives in the bounding box of the band, so convolutions run
/// on that box only.
pub struct DesingProblem<'a> {
    state: &'a AdmissibleState,
    profile: VorticityProfile,
    kp: KernelParam,
    conv: Convolver,
    /// Box offset in the full grid.
    origin: (usize, usize),
    band_box: Vec<usize>,
    inner_box: Vec<usize>,
    /// `N∗1_Ũ = Ψ + Ω|x|²/2 + c` at the band nodes.
    patch_potential: Vec<f64>,
    /// Sub-samples per cell side for the cell averages of `γ`.
    cells: usize,
    /// `Ψ` at the `cells²` sub-cell centers of every band cell.
    cell_psi: Vec<f64>,
    /// Range of `cell_psi` per band cell.
    cell_range: Vec<(f64, f64)>,
    orbits: Option<Vec<Vec<usize>>>,
    linear_tol: f64,
    max_linear: usize,
}

impl<'a> DesingProblem<'a> {
    pub fn new(state: &'a AdmissibleState, profile: VorticityProfile, kp: KernelParam) -> Result<Self> {
        Self::with_cells(state, profile, kp, DEFAULT_CELL_SAMPLES)
    }

    /// Band vorticity enters the quadrature as cell averages of `γ` over
    /// `cells × cells` sub-cell centers; `cells = 1` samples at the nodes.
    pub fn with_cells(state: &'a AdmissibleState, profile: VorticityProfile, kp: KernelParam, cells: usize) -> Result<Self> {
        profile.check_fits(state)?;
        if cells == 0 {
            return config("cell sample count must be positive");
        }
        let g = state.psi.grid;
        if state.band.is_empty() {
            return config("state has an empty band");
        }
        let (mut i0, mut j0, mut i1, mut j1) = (usize::MAX, usize::MAX, 0, 0);
        for &k in &state.band {
            let (i, j) = g.ij(k);
            i0 = i0.min(i);
            j0 = j0.min(j);
            i1 = i1.max(i);
            j1 = j1.max(j);
        }
        if i0 == 0 || j0 == 0 || i1 + 1 >= g.nx || j1 + 1 >= g.ny {
            return config("band touches the grid box edge");
        }
        let (i0, j0, i1, j1) = (i0 - 1, j0 - 1, i1 + 1, j1 + 1);
        let boxg = Grid2D::new(g.point(i0, j0), g.h, i1 - i0 + 1, j1 - j0 + 1)?;
        let to_box = |k: usize| {
            let (i, j) = g.ij(k);
            boxg.index(i - i0, j - j0)
        };
        let mut inner_box = Vec::new();
        for (k, r) in state.region.iter().enumerate() {
            if *r == Region::Inner {
                let (i, j) = g.ij(k);
                if i <= i0 || i >= i1 || j <= j0 || j >= j1 {
                    return config("inner region is not enclosed by the band");
                }
                inner_box.push(to_box(k));
            }
        }
        if !kp.is_free() {
            let rmax = state.band.iter().fold(0.0, |m: f64, &k| m.max(crate::grid::norm(g.point_of(k))));
            if rmax >= 0.5 * kp.radius() {
                return config("band leaves the half-radius disk of the trapping domain");
            }
        }
        let om = state.omega_speed;
        let patch_potential = state
            .band
            .iter()
            .map(|&k| {
                let p = g.point_of(k);
                state.psi.values[k] + 0.5 * om * dot(p, p) + state.c
            })
            .collect();
        let cell_psi: Vec<f64> = if cells == 1 {
            state.band.iter().map(|&k| state.psi.values[k]).collect()
        } else {
            let offs: Vec<f64> = (0..cells).map(|a| ((a as f64 + 0.5) / cells as f64 - 0.5) * g.h).collect();
            state
                .band
                .par_iter()
                .flat_map_iter(|&k| {
                    let p = g.point_of(k);
                    let offs = &offs;
                    offs.iter().flat_map(move |dy| offs.iter().map(move |dx| state.psi_at([p[0] + dx, p[1] + dy])))
                })
                .collect()
        };
        let cell_range = cell_psi
            .chunks(cells * cells)
            .map(|c| c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v))))
            .collect();
        let cfg = SolverConfig::default();
        Ok(Self {
            state,
            profile,
            kp,
            conv: Convolver::new(boxg),
            origin: (i0, j0),
            band_box: state.band.iter().map(|&k| to_box(k)).collect(),
            inner_box,
            patch_potential,
            cells,
            cell_psi,
            cell_range,
            orbits: band_orbits(state),
            linear_tol: cfg.linear_tol,
            max_linear: cfg.max_linear,
        })
    }

    pub fn state(&self) -> &AdmissibleState {
        self.state
    }

    pub fn profile(&self) -> &VorticityProfile {
        &self.profile
    }

    pub fn kernel(&self) -> KernelParam {
        self.kp
    }

    pub fn set_profile(&mut self, profile: VorticityProfile) -> Result<()> {
        profile.check_fits(self.state)?;
        self.profile = profile;
        Ok(())
    }

    pub fn set_linear_solver(&mut self, tol: f64, max_iter: usize) {
        self.linear_tol = tol;
        self.max_linear = max_iter;
    }

    /// Number of unknowns, one per band node.
    pub fn len(&self) -> usize {
        self.band_box.len()
    }

    pub fn is_empty(&self) -> bool {
        self.band_box.is_empty()
    }

    /// True when exact symmetry projection is available on this grid.
    pub fn has_symmetry_projection(&self) -> bool {
        self.orbits.is_some()
    }

    /// Band vector as a full-grid field, zero off the band.
    pub fn band_field(&self, x: &[f64]) -> ScalarField {
        let mut f = ScalarField::zeros(self.state.psi.grid);
        for (&k, v) in self.state.band.iter().zip(x) {
            f.values[k] = *v;
        }
        f
    }

    /// Band values of a full-grid field.
    pub fn restrict(&self, f: &ScalarField) -> Vec<f64> {
        self.state.band.iter().map(|&k| f.values[k]).collect()
    }

    fn check_bound(&self, x: &[f64]) -> Result<()> {
        let s = sup(x);
        if !(s <= self.state.band_bound()) {
            return Err(Error::Admissibility(format!(
                "perturbation sup {s:.3e} exceeds the band bound {:.3e}",
                self.state.band_bound()
            )));
        }
        Ok(())
    }

    /// Cell averages of `Σ_terms σ γ(-(Ψ + ψ + shift)/ε)` and of the
    /// matching `γ'/ε` over one band cell.
    fn cell_average(&self, n: usize, psi: f64, terms: &[(f64, f64)]) -> (f64, f64) {
        let p = &self.profile;
        let (lo, hi) = self.cell_range[n];
        let c2 = self.cells * self.cells;
        let sub = &self.cell_psi[n * c2..(n + 1) * c2];
        let (mut w, mut d) = (0.0, 0.0);
        for &(shift, s) in terms {
            if hi + psi + shift <= -p.eps {
                w += s;
            } else if lo + psi + shift < p.eps {
                let (mut a, mut b) = (0.0, 0.0);
                for v in sub {
                    let t = -(v + psi + shift) / p.eps;
                    a += p.transition.value(t);
                    b += p.transition.slope(t);
                }
                w += s * a / c2 as f64;
                d += s * b / (c2 as f64 * p.eps);
            }
        }
        (w, d)
    }

    /// Box vorticity for the given level terms and the band weights
    /// `D = Σ σ_k γ'(...)/ε`, both as cell averages.
    fn box_vorticity(&self, x: &[f64], terms: &[(f64, f64)], inner: bool) -> (Vec<f64>, Vec<f64>) {
        let mut om = vec![0.0; self.conv.grid().len()];
        if inner {
            for &b in &self.inner_box {
                om[b] = 1.0;
            }
        }
        let mut d = vec![0.0; x.len()];
        for (n, &b) in self.band_box.iter().enumerate() {
            let (w, dn) = self.cell_average(n, x[n], terms);
            om[b] = w;
            d[n] = dn;
        }
        (om, d)
    }

    /// Full-grid cell-averaged vorticity: the density the quadrature sees.
    pub fn cell_vorticity(&self, x: &[f64]) -> ScalarField {
        let mut f = ScalarField::zeros(self.state.psi.grid);
        let terms = self.terms();
        for (k, r) in self.state.region.iter().enumerate() {
            if *r == Region::Inner {
                f.values[k] = 1.0;
            }
        }
        for (n, &k) in self.state.band.iter().enumerate() {
            f.values[k] = self.cell_average(n, x[n], &terms).0;
        }
        f
    }

    /// Area fraction of the patch `{Ψ < 0}` in every cell, on the same
    /// sub-cell samples.
    pub fn patch_cells(&self) -> ScalarField {
        let mut f = ScalarField::zeros(self.state.psi.grid);
        let c2 = self.cells * self.cells;
        for (k, r) in self.state.region.iter().enumerate() {
            if *r == Region::Inner {
                f.values[k] = 1.0;
            }
        }
        for (n, &k) in self.state.band.iter().enumerate() {
            let sub = &self.cell_psi[n * c2..(n + 1) * c2];
            f.values[k] = sub.iter().filter(|v| **v < 0.0).count() as f64 / c2 as f64;
        }
        f
    }

    /// `∫|ω - 1_Ũ|` on the sub-cell lattice, so that transitions narrower
    /// than a cell do not cancel inside it.
    pub fn l1_deviation(&self, x: &[f64]) -> f64 {
        let p = &self.profile;
        let terms = self.terms();
        let c2 = self.cells * self.cells;
        let h = self.state.psi.grid.h;
        let total: f64 = (0..x.len())
            .into_par_iter()
            .map(|n| {
                self.cell_psi[n * c2..(n + 1) * c2]
                    .iter()
                    .map(|v| {
                        let w: f64 = terms.iter().map(|&(shift, s)| s * p.transition.value(-(v + x[n] + shift) / p.eps)).sum();
                        (w - if *v < 0.0 { 1.0 } else { 0.0 }).abs()
                    })
                    .sum::<f64>()
            })
            .sum();
        total * h * h / c2 as f64
    }

    /// Area fractions of `{Ψ < 0}` with the cells that meet the boundary
    /// resampled on a `samples × samples` lattice.
    pub fn patch_fractions(&self, samples: usize) -> ScalarField {
        let mut f = self.patch_cells();
        let g = self.state.psi.grid;
        let offs: Vec<f64> = (0..samples).map(|a| ((a as f64 + 0.5) / samples as f64 - 0.5) * g.h).collect();
        let margin = |(lo, hi): (f64, f64)| (hi - lo) / self.cells.max(2) as f64;
        let refined: Vec<(usize, f64)> = self
            .state
            .band
            .par_iter()
            .zip(&self.cell_range)
            .filter(|(_, &r)| r.0 - margin(r) < 0.0 && r.1 + margin(r) > 0.0)
            .map(|(&k, _)| {
                let p = g.point_of(k);
                let inside = offs
                    .iter()
                    .flat_map(|dy| offs.iter().map(move |dx| [p[0] + dx, p[1] + dy]))
                    .filter(|q| self.state.psi_at(*q) < 0.0)
                    .count();
                (k, inside as f64 / (samples * samples) as f64)
            })
            .collect();
        for (k, v) in refined {
            f.values[k] = v;
        }
        f
    }

    fn conv_band(&self, box_values: &[f64]) -> Vec<f64> {
        let full = self.conv.convolve_unchecked(self.kp, box_values);
        self.band_box.iter().map(|&b| full[b]).collect()
    }

    fn terms(&self) -> Vec<(f64, f64)> {
        self.profile.terms().collect()
    }

    /// `R(ψ) = Ψ + ψ - Σσ_k N_q[Γ_ε(ψ + kρ)] + Ω|x|²/2 + c` at the band nodes.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_bound(x)?;
        let (om, _) = self.box_vorticity(x, &self.terms(), true);
        let n = self.conv_band(&om);
        Ok(x.iter().zip(&self.patch_potential).zip(&n).map(|((xi, pp), ni)| pp + xi - ni).collect())
    }

    /// Perturbation form `(F(ψ), f)` with `F(ψ) = ψ + K(ψ)`,
    /// `K(ψ) = -Σσ_k N_q[Γ(ψ + kρ) - Γ(kρ)]` and
    /// `f = Σσ_k N_q[Γ(kρ)] - N∗1_Ũ`.
    pub fn perturbation_form(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_bound(x)?;
        let zero = vec![0.0; x.len()];
        let mut big_f = x.to_vec();
        let mut f: Vec<f64> = self.patch_potential.iter().map(|v| -v).collect();
        for (shift, s) in self.terms() {
            let unit = [(shift, 1.0)];
            let (a, _) = self.box_vorticity(x, &unit, true);
            let (b, _) = self.box_vorticity(&zero, &unit, true);
            let na = self.conv_band(&a);
            let nb = self.conv_band(&b);
            for i in 0..x.len() {
                big_f[i] -= s * (na[i] - nb[i]);
                f[i] += s * nb[i];
            }
        }
        Ok((big_f, f))
    }

    /// Band weights `D(ψ) = Σσ_k γ'(-(Ψ+ψ+kρ)/ε)/ε`; the Jacobian is
    /// `I + G D` with `G` the discrete kernel on the band.
    pub fn layer_weights(&self, x: &[f64]) -> Vec<f64> {
        self.box_vorticity(x, &self.terms(), false).1
    }

    fn spread(&self, idx: &[usize], vals: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.conv.grid().len()];
        for (&i, v) in idx.iter().zip(vals) {
            out[self.band_box[i]] = *v;
        }
        out
    }

    /// Jacobian action `(I + κ)φ` with `κφ = Σσ_k N_q[γ'(...)φ/ε]`.
    pub fn apply_jacobian(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        let d = self.layer_weights(x);
        let idx: Vec<usize> = (0..x.len()).collect();
        let dphi: Vec<f64> = d.iter().zip(phi).map(|(a, b)| a * b).collect();
        let g = self.conv_band(&self.spread(&idx, &dphi));
        phi.iter().zip(&g).map(|(a, b)| a + b).collect()
    }

    /// Discrete kernel weight between two grid nodes.
    fn weight(&self, p: [f64; 2], q: [f64; 2]) -> f64 {
        let h = self.state.psi.grid.h;
        let free = if p == q {
            self_cell_weight(h)
        } else {
            let d = [p[0] - q[0], p[1] - q[1]];
            h * h * dot(d, d).ln() / (4.0 * std::f64::consts::PI)
        };
        free + h * h * image_term(p, q, self.kp.qoppa)
    }

    /// Dense Jacobian over the band unknowns.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let g = self.state.psi.grid;
        let d = self.layer_weights(x);
        let pts: Vec<_> = self.state.band.iter().map(|&k| g.point_of(k)).collect();
        let n = pts.len();
        DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            if d[j] == 0.0 {
                id
            } else {
                id + self.weight(pts[i], pts[j]) * d[j]
            }
        })
    }

    /// Solves `(I + G D) δ = r` through the symmetric layer system
    /// `(I + D^{1/2} G D^{1/2}) u = D^{1/2} r`, then `δ = r - G D^{1/2} u`.
    pub fn solve_jacobian(&self, x: &[f64], r: &[f64]) -> LinearSolve {
        let d = self.layer_weights(x);
        let active: Vec<usize> = (0..d.len()).filter(|&i| d[i] > 0.0).collect();
        if active.is_empty() {
            return LinearSolve { step: r.to_vec(), sigma_min: 1.0, iterations: 0 };
        }
        let sq: Vec<f64> = active.iter().map(|&i| d[i].sqrt()).collect();
        let rhs: Vec<f64> = active.iter().zip(&sq).map(|(&i, s)| s * r[i]).collect();
        let op = |u: &[f64]| {
            let v: Vec<f64> = u.iter().zip(&sq).map(|(a, b)| a * b).collect();
            let g = self.conv_band(&self.spread(&active, &v));
            u.iter().zip(&sq).zip(&active).map(|((ui, s), &i)| ui + s * g[i]).collect::<Vec<f64>>()
        };
        let sol = minres(op, &rhs, self.linear_tol, self.max_linear);
        let v: Vec<f64> = sol.x.iter().zip(&sq).map(|(a, b)| a * b).collect();
        let g = self.conv_band(&self.spread(&active, &v));
        LinearSolve {
            step: r.iter().zip(&g).map(|(a, b)| a - b).collect(),
            sigma_min: lanczos_sigma_floor(&sol.alpha, &sol.beta),
            iterations: sol.iterations,
        }
    }

    /// Full-grid offset of the convolution box.
    pub fn box_origin(&self) -> (usize, usize) {
        self.origin
    }
}

/// Orbits of band nodes under the dihedral group, when every image of a band
/// node is again a band node.
fn band_orbits(state: &AdmissibleState) -> Option<Vec<Vec<usize>>> {
    let g = state.psi.grid;
    if !group_maps_grid(&g, state.m) {
        return None;
    }
    let mut pos = vec![usize::MAX; g.len()];
    for (n, &k) in state.band.iter().enumerate() {
        pos[k] = n;
    }
    let elems = state.m.elements();
    let mut orbits = Vec::with_capacity(state.band.len());
    for &k in &state.band {
        let p = g.point_of(k);
        let mut orbit = Vec::with_capacity(elems.len());
        for e in &elems {
            let q = [e[0] * p[0] + e[1] * p[1], e[2] * p[0] + e[3] * p[1]];
            let (fx, fy) = g.frac(q);
            let (i, j) = (fx.round(), fy.round());
            if (fx - i).abs() > 1e-9 || (fy - j).abs() > 1e-9 || !g.contains(q) {
                return None;
            }
            let n = pos[g.index(i as usize, j as usize)];
            if n == usize::MAX {
                return None;
            }
            orbit.push(n);
        }
        orbits.push(orbit);
    }
    Some(orbits)
}

impl FlowProblem for DesingProblem<'_> {
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        DesingProblem::residual(self, x)
    }

    fn linear_solve(&self, x: &[f64], r: &[f64]) -> Result<LinearSolve> {
        Ok(self.solve_jacobian(x, r))
    }

    fn project(&self, x: &mut [f64]) -> f64 {
        let Some(orbits) = &self.orbits else {
            return 0.0;
        };
        let avg: Vec<f64> = orbits.iter().map(|o| o.iter().map(|&n| x[n]).sum::<f64>() / o.len() as f64).collect();
        let corr = avg.iter().zip(x.iter()).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        x.copy_from_slice(&avg);
        corr
    }

    fn radius(&self) -> f64 {
        self.state.band_bound()
    }
}

/// One level of the `ε` continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub eps: f64,
    pub report: SolveReport,
}

/// Converged perturbed state at one smoothing width.
#[derive(Debug, Clone)]
pub struct Solution {
    pub profile: VorticityProfile,
    pub kernel: KernelParam,
    /// Band correction `ψ`, zero off the band.
    pub psi: ScalarField,
    /// Nodal vorticity `Σσ_k γ(-(Ψ + ψ + kρ)/ε)`.
    pub omega: ScalarField,
    /// Cell averages of the vorticity, the density behind `psi_full`.
    pub omega_cells: ScalarField,
    /// Area fractions of the base patch on the same cells.
    pub patch_cells: ScalarField,
    /// `N_q[ω] - Ω|x|²/2 - c` on the whole grid.
    pub psi_full: ScalarField,
    /// The same discrete potential of the sharp base patch, from refined
    /// area fractions: the reference the deviations are measured against.
    pub psi_base: ScalarField,
    /// `∫|ω - 1_Ũ|` over the band on the sub-cell lattice.
    pub l1_deviation: f64,
    /// `max |Ψ_full - (Ψ + ψ)|` over the band.
    pub consistency: f64,
    /// `max |∇⊥Ψ_full · ∇ω|` over interior nodes, relative to
    /// `max|∇Ψ_full| max|∇ω|`.
    pub transport_residual: f64,
    pub report: SolveReport,
    /// Reports of every continuation level up to this one.
    pub history: Vec<ContinuationStep>,
}

/// Continuation levels from `start` down to each target, factor `f` per step
/// and clamped onto the targets.
pub fn eps_schedule(start: f64, factor: f64, targets: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = targets.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    let mut out = Vec::new();
    let mut e = start;
    for &target in &t {
        while e > target {
            out.push(e);
            e = (e * factor).max(target);
        }
        if out.last() != Some(&target) {
            out.push(target);
        }
        e = target * factor;
    }
    out
}

/// Warm-started solves down the `ε` schedule, returning the solutions at the
/// requested widths (descending). `profile` supplies `γ`, `ρ` and `σ`.
pub fn solve_schedule(
    state: &AdmissibleState,
    profile: &VorticityProfile,
    targets: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Solution>> {
    cfg.validate()?;
    if targets.is_empty() {
        return config("no target smoothing widths");
    }
    let kp = cfg.kernel()?;
    let levels = eps_schedule(cfg.eps_start * state.tau, cfg.eps_factor, targets);
    let mut problem = DesingProblem::with_cells(state, profile.with_eps(levels[0])?, kp, cfg.cell_samples)?;
    problem.set_linear_solver(cfg.linear_tol, cfg.max_linear);
    let full = Convolver::new(state.psi.grid);
    let mut x = vec![0.0; problem.len()];
    let mut prev: Option<f64> = None;
    let mut history = Vec::new();
    let mut out = Vec::new();
    let mut wanted: Vec<f64> = targets.to_vec();
    wanted.sort_by(|a, b| b.total_cmp(a));
    for &eps in &levels {
        let mut e_try = eps;
        let mut tries = 0;
        loop {
            problem.set_profile(profile.with_eps(e_try)?)?;
            match newton_flow_solve(&problem, &x, cfg) {
                Ok((xn, rep)) => {
                    x = xn;
                    history.push(ContinuationStep { eps: e_try, report: rep });
                    prev = Some(e_try);
                    if e_try == eps {
                        break;
                    }
                    e_try = eps;
                }
                Err(err @ (Error::NoConvergence(_) | Error::Admissibility(_) | Error::Degenerate(_))) => {
                    match prev {
                        Some(p) if tries < cfg.max_backtracks => {
                            tries += 1;
                            e_try = 0.5 * (p + e_try);
                        }
                        _ => {
                            return Err(Error::Continuation { s: e_try, reason: err.to_string() });
                        }
                    }
                }
                Err(err) => return Err(err),
            }
        }
        if wanted.contains(&eps) {
            out.push(finish(&problem, &full, &x, &history)?);
        }
    }
    Ok(out)
}

/// Single target width; see [`solve_schedule`].
pub fn solve_perturbed(state: &AdmissibleState, profile: &VorticityProfile, cfg: &SolverConfig) -> Result<Solution> {
    let mut v = solve_schedule(state, profile, &[profile.eps], cfg)?;
    v.pop().ok_or_else(|| Error::Config("empty schedule".into()))
}

fn finish(problem: &DesingProblem<'_>, full: &Convolver, x: &[f64], history: &[ContinuationStep]) -> Result<Solution> {
    let state = problem.state();
    let g = state.psi.grid;
    let psi = problem.band_field(x);
    let omega = vorticity(state, &psi, problem.profile())?;
    let omega_cells = problem.cell_vorticity(x);
    let om = state.omega_speed;
    let stream = |density: &ScalarField| -> Result<ScalarField> {
        let n = full.convolve(problem.kernel(), density)?;
        ScalarField::from_values(
            g,
            n.values
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let p = g.point_of(k);
                    v - 0.5 * om * dot(p, p) - state.c
                })
                .collect(),
        )
    };
    let psi_full = stream(&omega_cells)?;
    let psi_base = stream(&problem.patch_fractions(FRACTION_SAMPLES))?;
    let consistency = state
        .band
        .iter()
        .fold(0.0, |m: f64, &k| m.max((psi_full.values[k] - state.psi.values[k] - psi.values[k]).abs()));
    Ok(Solution {
        profile: problem.profile().clone(),
        kernel: problem.kernel(),
        transport_residual: transport_residual(&psi_full, &omega),
        psi,
        omega,
        omega_cells,
        patch_cells: problem.patch_cells(),
        psi_full,
        psi_base,
        l1_deviation: problem.l1_deviation(x),
        consistency,
        report: history.last().map(|h| h.report.clone()).unwrap_or_default(),
        history: history.to_vec(),
    })
}

/// Relative size of `∇⊥Ψ·∇ω` by centered differences at interior nodes.
pub fn transport_residual(psi: &ScalarField, omega: &ScalarField) -> f64 {
    let (px, py) = psi.gradient();
    let (wx, wy) = omega.gradient();
    let g = psi.grid;
    let (mut top, mut gp, mut gw) = (0.0_f64, 0.0_f64, 0.0_f64);
    for j in 1..g.ny - 1 {
        for i in 1..g.nx - 1 {
            let k = g.index(i, j);
            top = top.max((-py.values[k] * wx.values[k] + px.values[k] * wy.values[k]).abs());
            gp = gp.max(px.values[k].hypot(py.values[k]));
            gw = gw.max(wx.values[k].hypot(wy.values[k]));
        }
    }
    if gp * gw == 0.0 {
        0.0
    } else {
        top / (gp * gw)
    }
}
