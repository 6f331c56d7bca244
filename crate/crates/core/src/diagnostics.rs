//! Deviation norms between perturbed solutions and their base patch,
//! splitting geometry, trapping rates, symmetry residuals and a sampled
//! log-Lipschitz seminorm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::desing::{Solution, VorticityProfile};
use crate::error::{config, Result};
use crate::geometry::{closed_length, contains, curve_distance, signed_area};
use crate::grid::{norm, Point, ScalarField, SymmetryGroup};
use crate::kernels::eval_biot_savart;
use crate::levelset::{extract_level_curve, window_around};
use crate::state::AdmissibleState;

/// Margin around the boundary curve of the window used for level curves.
const CURVE_WINDOW: f64 = 0.2;
/// Trapezoid panels for the coarea integral over the transition `t ∈ [-1, 1]`.
const TV_PANELS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// `∫ |ω - 1_Ũ|` on the sub-cell sampling lattice.
    pub l1_vorticity: f64,
    /// `|TV(ω) - TV(1_Ũ)|`, both from level curves of discrete potentials.
    pub tv_gap: f64,
    /// `TV(ω)` by the coarea formula.
    pub tv_coarea: f64,
    /// `TV(ω)` by centered grid gradients.
    pub tv_direct: f64,
    /// `max |∇(Ψ_full - Ψ_h)|` away from a two-node collar, with `Ψ_h` the
    /// discrete potential of the sharp patch.
    pub sup_grad: f64,
    pub eps: f64,
    pub rho: f64,
    pub qoppa: f64,
}

fn check_grid(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.grid != b.grid {
        return config("fields live on different grids");
    }
    Ok(())
}

fn level_length(field: &ScalarField, level: f64, window: (usize, usize, usize, usize)) -> Result<f64> {
    Ok(extract_level_curve(field, level, Some(window))?.iter().map(|c| closed_length(c)).sum())
}

/// Coarea total variation `Σσ_k ∫ γ'(t) L(-εt - kρ) dt` of the vorticity
/// built from `psi_full`, with `L(s)` the length of `{Ψ_full = s}`.
pub fn tv_coarea(psi_full: &ScalarField, profile: &VorticityProfile, window: (usize, usize, usize, usize)) -> Result<f64> {
    let dt = 2.0 / TV_PANELS as f64;
    let mut tv = 0.0;
    for (shift, s) in profile.terms() {
        for j in 1..TV_PANELS {
            let t = -1.0 + j as f64 * dt;
            let w = profile.transition.slope(t);
            if w == 0.0 {
                continue;
            }
            tv += s * dt * w * level_length(psi_full, -profile.eps * t - shift, window)?;
        }
    }
    Ok(tv)
}

/// `Σ h² |∇f|` by centered differences.
pub fn tv_direct(f: &ScalarField) -> f64 {
    let (gx, gy) = f.gradient();
    let h2 = f.grid.h * f.grid.h;
    gx.values.iter().zip(&gy.values).map(|(a, b)| a.hypot(*b)).sum::<f64>() * h2
}

/// `max |∇f|` by centered differences over nodes at least `collar` nodes
/// from the box edge.
pub fn sup_gradient(f: &ScalarField, collar: usize) -> f64 {
    let (gx, gy) = f.gradient();
    let g = f.grid;
    let mut m: f64 = 0.0;
    for j in collar..g.ny.saturating_sub(collar) {
        for i in collar..g.nx.saturating_sub(collar) {
            let k = g.index(i, j);
            m = m.max(gx.values[k].hypot(gy.values[k]));
        }
    }
    m
}

/// Deviations of a solution from its base patch.
pub fn deviation_norms(sol: &Solution, state: &AdmissibleState) -> Result<DeviationReport> {
    check_grid(&sol.omega, &state.psi)?;
    let g = state.psi.grid;
    let win = window_around(g, &state.sigma, CURVE_WINDOW);
    let tv = tv_coarea(&sol.psi_full, &sol.profile, win)?;
    let base = level_length(&sol.psi_base, 0.0, win)?;
    let diff = sol.psi_full.zip_with(&sol.psi_base, |a, b| a - b);
    Ok(DeviationReport {
        l1_vorticity: sol.l1_deviation,
        tv_gap: (tv - base).abs(),
        tv_coarea: tv,
        tv_direct: tv_direct(&sol.omega_cells),
        sup_grad: sup_gradient(&diff, 2),
        eps: sol.profile.eps,
        rho: sol.profile.rho,
        qoppa: sol.kernel.qoppa,
    })
}

/// `max D(ε)/(ε log(1/ε)) / min D(ε)/(ε log(1/ε))` over a schedule.
pub fn eps_log_spread(eps: &[f64], dev: &[f64]) -> Result<f64> {
    if eps.len() != dev.len() || eps.is_empty() {
        return config("need matching, nonempty ε and deviation lists");
    }
    if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return config("ε must lie in (0, 1)");
    }
    let r: Vec<f64> = eps.iter().zip(dev).map(|(e, d)| d / (e * (1.0 / e).ln())).collect();
    let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(hi / lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    /// Levels `-kρ` for `k = -M..M`.
    pub levels: Vec<f64>,
    /// Curves of `{Ψ_full + kρ = 0}` for each `k`.
    pub curves: Vec<Vec<Vec<Point>>>,
    /// `W^{k+1} ⊂ W^k` for all consecutive `k`.
    pub nested: bool,
    /// Minimum distance between consecutive boundaries.
    pub distances: Vec<f64>,
    pub max_grad: f64,
    /// `ρ / max|∇Ψ_full| - 2h`.
    pub distance_bound: f64,
    /// `max |ω - Σσ_k 1_{W^k}|` over band nodes where every transition has saturated.
    pub recovery_error: f64,
    pub recovery_nodes: usize,
}

/// Boundaries `∂W^k = {Ψ_full + kρ = 0}`, their nesting and separation, and
/// the identity `ω = Σσ_k 1_{W^k}` away from the transitions.
pub fn splitting_check(
    psi_full: &ScalarField,
    omega: &ScalarField,
    profile: &VorticityProfile,
    state: &AdmissibleState,
) -> Result<SplittingReport> {
    check_grid(psi_full, &state.psi)?;
    check_grid(omega, &state.psi)?;
    if !(profile.rho > 0.0) {
        return config("splitting needs a positive level spacing");
    }
    let g = state.psi.grid;
    let m = profile.levels() as i64;
    let levels: Vec<f64> = (-m..=m).map(|k| -(k as f64) * profile.rho).collect();
    let win = window_around(g, &state.sigma, CURVE_WINDOW);
    let curves = levels.iter().map(|&l| extract_level_curve(psi_full, l, Some(win))).collect::<Result<Vec<_>>>()?;
    let mut nested = curves.iter().all(|c| c.len() == 1);
    let mut distances = Vec::new();
    for w in curves.windows(2) {
        let (outer, inner) = (&w[0], &w[1]);
        if outer.is_empty() || inner.is_empty() {
            nested = false;
            distances.push(0.0);
            continue;
        }
        let (a, b) = (&outer[0], &inner[0]);
        nested &= b.iter().all(|&p| contains(a, p)) && signed_area(b) < signed_area(a);
        distances.push(curve_distance(a, b).min(curve_distance(b, a)));
    }
    let (gx, gy) = psi_full.gradient();
    let max_grad = state.band.iter().fold(0.0, |mx: f64, &k| mx.max(gx.values[k].hypot(gy.values[k])));
    let mut err: f64 = 0.0;
    let mut count = 0;
    let terms: Vec<(f64, f64)> = (-m..=m)
        .map(|k| (k as f64 * profile.rho, profile.sigmas[(k + m) as usize]))
        .collect();
    for &k in &state.band {
        let v = psi_full.values[k];
        if terms.iter().any(|(sh, _)| (v + sh).abs() < profile.eps * (1.0 + 1e-6)) {
            continue;
        }
        let rec: f64 = terms.iter().filter(|(sh, _)| v + sh < 0.0).map(|(_, s)| s).sum();
        err = err.max((omega.values[k] - rec).abs());
        count += 1;
    }
    Ok(SplittingReport {
        levels,
        curves,
        nested,
        distances,
        max_grad,
        distance_bound: profile.rho / max_grad - 2.0 * g.h,
        recovery_error: err,
        recovery_nodes: count,
    })
}

/// Deviation of a trapped solution from the free solution at the same `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapDeviation {
    pub radius: f64,
    pub l1_vorticity: f64,
    pub tv_gap: f64,
    /// `max |∇(Ψ_R - Ψ_∞)|` over `B(0, R)`: grid nodes plus rings out to `R`.
    pub sup_grad: f64,
    /// Same maximum restricted to the grid box.
    pub sup_grad_grid: f64,
}

impl TrapDeviation {
    pub fn total(&self) -> f64 {
        self.l1_vorticity + self.tv_gap + self.sup_grad
    }
}

fn velocity(omega: &ScalarField, x: Point, radius: f64) -> Result<Point> {
    let g = omega.grid;
    let h2 = g.h * g.h;
    let mut u = [0.0, 0.0];
    for (k, &w) in omega.values.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let k = eval_biot_savart(x, g.point_of(k), radius)?;
        u[0] += h2 * w * k[0];
        u[1] += h2 * w * k[1];
    }
    Ok(u)
}

/// Compares a trapped solution with the free one; outside the grid box the
/// gradients are summed directly on `rings` circles of `angles` points.
pub fn trap_deviation(
    trapped: &Solution,
    free: &Solution,
    state: &AdmissibleState,
    rings: usize,
    angles: usize,
) -> Result<TrapDeviation> {
    check_grid(&trapped.omega, &free.omega)?;
    let radius = trapped.kernel.radius();
    if !radius.is_finite() || !free.kernel.is_free() {
        return config("trap deviation compares a trapped run with a free run");
    }
    let g = state.psi.grid;
    let h2 = g.h * g.h;
    let l1 = trapped.omega_cells.values.iter().zip(&free.omega_cells.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * h2;
    let win = window_around(g, &state.sigma, CURVE_WINDOW);
    let tv_gap = (tv_coarea(&trapped.psi_full, &trapped.profile, win)? - tv_coarea(&free.psi_full, &free.profile, win)?).abs();
    let diff = trapped.psi_full.zip_with(&free.psi_full, |a, b| a - b);
    let grid_sup = sup_gradient(&diff, 2);
    let r0 = g.inscribed_radius();
    let samples: Vec<Point> = (0..=rings)
        .flat_map(|i| {
            let r = r0 + (radius * (1.0 - 1e-9) - r0) * i as f64 / rings.max(1) as f64;
            (0..angles).map(move |j| {
                let a = std::f64::consts::TAU * j as f64 / angles as f64;
                [r * a.cos(), r * a.sin()]
            })
        })
        .collect();
    let far = samples
        .par_iter()
        .map(|&x| {
            let a = velocity(&trapped.omega_cells, x, radius)?;
            let b = velocity(&free.omega_cells, x, f64::INFINITY)?;
            Ok(norm([a[0] - b[0], a[1] - b[1]]))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(TrapDeviation { radius, l1_vorticity: l1, tv_gap, sup_grad: grid_sup.max(far), sup_grad_grid: grid_sup })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapFit {
    /// Power `p` in `D ≈ C R^p log R`.
    pub exponent: f64,
    pub constant: f64,
}

/// Least-squares fit of `log(D / log R) = log C + p log R`.
pub fn trap_scaling(radii: &[f64], deviations: &[f64]) -> Result<TrapFit> {
    if radii.len() < 3 || radii.len() != deviations.len() {
        return config("trap scaling needs at least 3 matching radii and deviations");
    }
    if radii.iter().any(|r| !(*r > 1.0)) || deviations.iter().any(|d| !(*d > 0.0)) {
        return config("radii must exceed 1 and deviations must be positive");
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = radii.iter().zip(deviations).map(|(r, d)| (d / r.ln()).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let p = sxy / sxx;
    Ok(TrapFit { exponent: p, constant: (my - p * mx).exp() })
}

/// `‖f - symmetrize(f)‖∞` for the dihedral group of order `2m`.
pub fn symmetry_residual(field: &ScalarField, m: usize) -> Result<f64> {
    crate::grid::symmetry_residual(field, SymmetryGroup::new(m)?)
}

/// Max over sampled node pairs of `|f(x) - f(y)| / (d (1 + |log d|))`.
/// Separations are log-uniform between one cell and the box size.
pub fn ll_seminorm(field: &ScalarField, pairs: usize, seed: u64) -> Result<f64> {
    if pairs < 1000 {
        return config("the seminorm estimate needs at least 1000 pairs");
    }
    let g = field.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = ((g.nx.max(g.ny) - 1) as f64).ln();
    let mut best: f64 = 0.0;
    let mut drawn = 0;
    while drawn < pairs {
        let i = rng.random_range(0..g.nx);
        let j = rng.random_range(0..g.ny);
        let r = (rng.random::<f64>() * span).exp();
        let a = rng.random::<f64>() * std::f64::consts::TAU;
        let (di, dj) = ((r * a.cos()).round() as i64, (r * a.sin()).round() as i64);
        let (i2, j2) = (i as i64 + di, j as i64 + dj);
        if (di == 0 && dj == 0) || i2 < 0 || j2 < 0 || i2 >= g.nx as i64 || j2 >= g.ny as i64 {
            continue;
        }
        drawn += 1;
        let d = g.h * ((di * di + dj * dj) as f64).sqrt();
        let num = (field.at(i, j) - field.at(i2 as usize, j2 as usize)).abs();
        best = best.max(num / (d * (1.0 + d.ln().abs())));
    }
    Ok(best)
}
