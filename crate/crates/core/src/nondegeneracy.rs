//! Nondegeneracy of admissible states: the closed-form ellipse spectrum
//! and a Nyström discretization of
//!
//! ```text
//! A φ(x) = φ(x) + ∫_Σ N(x - y) φ(y) / (ν·∇Ψ)(y) dH¹(y)
//! ```
//!
//! on equispaced nodes of a periodic boundary parametrization. The log
//! singularity is split as `log(4 sin²((t - s)/2))` plus a smooth remainder,
//! and the singular part is integrated with trigonometric interpolation weights.

use std::f64::consts::{FRAC_1_PI, PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, norm, Point};
use crate::kirchhoff::{elliptical_jacobian, kirchhoff_dzeta_exterior};
use crate::state::{AdmissibleState, BaseKind};

/// Default threshold on the smallest singular value.
pub const DEFAULT_TOL: f64 = 1e-2;

/// The functions `Ϡ_k(ξ)` whose zeros are the degenerate ellipses.
pub fn ellipse_mode_function(k: usize, xi: f64) -> f64 {
    let s2 = (2.0 * xi).sinh();
    let e2 = (2.0 * xi).exp();
    if k == 0 {
        s2 - 2.0 * e2 * (-2.0 * xi).exp().ln_1p()
    } else {
        k as f64 * s2 - e2 * (1.0 + (-2.0 * k as f64 * xi).exp())
    }
}

/// Eigenvalues of the ellipse operator on `cos(kη)`, `k = 0..=k_max`.
pub fn ellipse_spectral_values(xi: f64, k_max: usize) -> Vec<f64> {
    let s2 = (2.0 * xi).sinh();
    (0..=k_max)
        .map(|k| {
            let d = if k == 0 { s2 } else { k as f64 * s2 };
            ellipse_mode_function(k, xi) / d
        })
        .collect()
}

/// Eigenvalues of the same operator on `sin(kη)`, `k = 1..=k_max`.
pub fn ellipse_odd_spectral_values(xi: f64, k_max: usize) -> Vec<f64> {
    let s2 = (2.0 * xi).sinh();
    let e2 = (2.0 * xi).exp();
    (1..=k_max)
        .map(|k| 1.0 - e2 * (1.0 - (-2.0 * k as f64 * xi).exp()) / (k as f64 * s2))
        .collect()
}

/// Zeros of `Ϡ_k` on `(0, xi_max]` for `k = 0..=k_max`, located by a sign
/// scan and refined by bisection to machine precision.
pub fn degenerate_set(xi_max: f64, k_max: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let n = 4000;
    for k in 0..=k_max {
        let f = |x: f64| ellipse_mode_function(k, x);
        let mut a = 1e-6;
        let mut fa = f(a);
        for i in 1..=n {
            let b = xi_max * i as f64 / n as f64;
            let fb = f(b);
            if fa == 0.0 {
                out.push((k, a));
            } else if fa * fb < 0.0 {
                out.push((k, bisect(&f, a, b)));
            }
            a = b;
            fa = fb;
        }
    }
    out
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// A closed boundary sampled at `θ_j = 2πj/N` with the parametrization
/// derivative and the normal flux `ν·∇Ψ`.
#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    pub points: Vec<Point>,
    pub tangents: Vec<Point>,
    pub flux: Vec<f64>,
}

impl BoundaryCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unit circle carrying the Rankine flux `(1 - 2Ω)/2`.
    pub fn rankine(n: usize, omega: f64) -> Self {
        let th = nodes(n);
        Self {
            points: th.iter().map(|t| [t.cos(), t.sin()]).collect(),
            tangents: th.iter().map(|t| [-t.sin(), t.cos()]).collect(),
            flux: vec![0.5 * (1.0 - 2.0 * omega); n],
        }
    }

    /// ξ-Kirchhoff ellipse in the elliptic angle, flux `∂ζΨ̃ / √J`.
    pub fn kirchhoff(n: usize, xi: f64) -> Self {
        let b = xi.tanh();
        let th = nodes(n);
        Self {
            points: th.iter().map(|t| [t.cos(), b * t.sin()]).collect(),
            tangents: th.iter().map(|t| [-t.sin(), b * t.cos()]).collect(),
            flux: th
                .iter()
                .map(|&t| kirchhoff_dzeta_exterior(xi, t, xi) / elliptical_jacobian(xi, t, xi).sqrt())
                .collect(),
        }
    }

    /// Curve with flux computed from the patch velocity: for the patch `D`
    /// bounded by the curve, `∇Ψ = -∮ N(x - y) ν(y) ds(y) - Ω x`.
    pub fn from_patch(points: Vec<Point>, tangents: Vec<Point>, omega: f64) -> Self {
        let n = points.len();
        let grad = patch_velocity_gradient(&points, &tangents);
        let flux = (0..n)
            .map(|i| {
                let t = tangents[i];
                let nu = [t[1] / norm(t), -t[0] / norm(t)];
                dot(nu, [grad[i][0] - omega * points[i][0], grad[i][1] - omega * points[i][1]])
            })
            .collect();
        Self { points, tangents, flux }
    }
}

fn nodes(n: usize) -> Vec<f64> {
    (0..n).map(|j| TAU * j as f64 / n as f64).collect()
}

/// Weights `R_j` with `∫ log(4 sin²((t_i - s)/2)) f(s) ds ≈ Σ_j R_{|i-j|} f(t_j)`
/// for `N = 2n` equispaced nodes.
pub fn log_weights(nn: usize) -> Vec<f64> {
    assert!(nn.is_multiple_of(2) && nn >= 4, "node count must be even");
    let n = nn / 2;
    (0..nn)
        .map(|j| {
            let t = PI * j as f64 / n as f64;
            let s: f64 = (1..n).map(|m| (m as f64 * t).cos() / m as f64).sum();
            -TAU / n as f64 * s - PI / (n * n) as f64 * (n as f64 * t).cos()
        })
        .collect()
}

/// Quadrature matrix `W` with `(W g)_i ≈ ∫ N(x(t_i) - x(s)) g(s) ds`.
fn single_layer_matrix(points: &[Point], tangents: &[Point]) -> DMatrix<f64> {
    let nn = points.len();
    let r = log_weights(nn);
    let inv4pi = 0.25 * FRAC_1_PI;
    let hq = TAU / nn as f64;
    DMatrix::from_fn(nn, nn, |i, j| {
        let smooth = if i == j {
            dot(tangents[i], tangents[i]).ln()
        } else {
            let d = [points[i][0] - points[j][0], points[i][1] - points[j][1]];
            let s = (0.5 * (TAU * (i as f64 - j as f64) / nn as f64)).sin();
            (dot(d, d) / (4.0 * s * s)).ln()
        };
        let k = (i as isize - j as isize).rem_euclid(nn as isize) as usize;
        inv4pi * (r[k] + hq * smooth)
    })
}

/// `∇(N * 1_D)` at the boundary nodes of a counterclockwise curve.
fn patch_velocity_gradient(points: &[Point], tangents: &[Point]) -> Vec<Point> {
    let w = single_layer_matrix(points, tangents);
    let nx = DVector::from_iterator(points.len(), tangents.iter().map(|t| t[1]));
    let ny = DVector::from_iterator(points.len(), tangents.iter().map(|t| -t[0]));
    let gx = -(&w * nx);
    let gy = -(&w * ny);
    (0..points.len()).map(|i| [gx[i], gy[i]]).collect()
}

/// Symmetry class the operator is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subspace {
    /// `cos(j m θ)`: m-fold rotation and reflection symmetry.
    Dihedral { m: usize },
    /// `cos(j m θ)` and `sin(j m θ)`: m-fold rotation symmetry only.
    Rotational { m: usize },
}

/// Full Nyström matrix and its restriction to a symmetry class.
#[derive(Debug, Clone)]
pub struct NondegeneracyOperator {
    pub full: DMatrix<f64>,
    /// Galerkin restriction in an orthonormal trigonometric basis.
    pub projected: DMatrix<f64>,
    /// Basis labels: `(j m, is_cosine)`.
    pub modes: Vec<(usize, bool)>,
    /// `‖(I - P) A B‖` for the orthonormal basis `B`: coupling out of the class.
    pub leakage: f64,
}

fn basis(nn: usize, sub: Subspace) -> (DMatrix<f64>, Vec<(usize, bool)>) {
    let (m, with_sin) = match sub {
        Subspace::Dihedral { m } => (m, false),
        Subspace::Rotational { m } => (m, true),
    };
    let mut modes = Vec::new();
    let mut j = 0;
    while j * m < nn / 2 {
        modes.push((j * m, true));
        if with_sin && j > 0 {
            modes.push((j * m, false));
        }
        j += 1;
    }
    let th = nodes(nn);
    let b = DMatrix::from_fn(nn, modes.len(), |i, c| {
        let (k, cos) = modes[c];
        let scale = if k == 0 { (1.0 / nn as f64).sqrt() } else { (2.0 / nn as f64).sqrt() };
        scale * if cos { (k as f64 * th[i]).cos() } else { (k as f64 * th[i]).sin() }
    });
    (b, modes)
}

/// Assembles `A = I + Q` and restricts it to the requested symmetry class.
pub fn assemble_nondegeneracy_operator(curve: &BoundaryCurve, sub: Subspace) -> Result<NondegeneracyOperator> {
    let nn = curve.len();
    if nn < 8 || !nn.is_multiple_of(2) {
        return Err(Error::Config(format!("node count must be even and at least 8, got {nn}")));
    }
    if let Some(f) = curve.flux.iter().find(|f| !(**f > 0.0)) {
        return Err(Error::Admissibility(format!("normal flux must be positive, found {f}")));
    }
    let mut full = single_layer_matrix(&curve.points, &curve.tangents);
    for j in 0..nn {
        let g = norm(curve.tangents[j]) / curve.flux[j];
        for i in 0..nn {
            full[(i, j)] *= g;
        }
    }
    for i in 0..nn {
        full[(i, i)] += 1.0;
    }
    let (b, modes) = basis(nn, sub);
    let ab = &full * &b;
    let projected = b.transpose() * &ab;
    let leakage = (&ab - &b * &projected).norm();
    Ok(NondegeneracyOperator { full, projected, modes, leakage })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Diagonal entries of the restricted operator, one per basis mode.
    pub mode_values: Vec<f64>,
    pub modes: Vec<(usize, bool)>,
    pub singular_values: Vec<f64>,
    pub sigma_min: f64,
    pub verdict: bool,
    pub tol: f64,
    /// Smallest singular value on the rotation-only class (sines included).
    pub sigma_min_rotational: f64,
    pub leakage: f64,
}

fn sigma_min_of(m: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let s = sv[0];
    (sv, s)
}

/// Spectral report of a boundary curve on the dihedral class of order `m`,
/// with the rotation-only class reported alongside.
pub fn spectral_report(curve: &BoundaryCurve, m: usize, tol: f64) -> Result<SpectralReport> {
    let op = assemble_nondegeneracy_operator(curve, Subspace::Dihedral { m })?;
    let rot = assemble_nondegeneracy_operator(curve, Subspace::Rotational { m })?;
    let (singular_values, sigma_min) = sigma_min_of(&op.projected);
    let (_, sigma_min_rotational) = sigma_min_of(&rot.projected);
    Ok(SpectralReport {
        mode_values: (0..op.projected.nrows()).map(|i| op.projected[(i, i)]).collect(),
        modes: op.modes,
        singular_values,
        sigma_min,
        verdict: sigma_min > tol,
        tol,
        sigma_min_rotational,
        leakage: op.leakage,
    })
}

/// Boundary curve of a state with `n_nodes` samples, flux from closed forms
/// when available.
pub fn state_curve(state: &AdmissibleState, n_nodes: usize) -> BoundaryCurve {
    match &state.kind {
        BaseKind::Kirchhoff { xi } => BoundaryCurve::kirchhoff(n_nodes, *xi),
        BaseKind::Rankine => BoundaryCurve::rankine(n_nodes, state.omega_speed),
        BaseKind::VState { m, coeffs, .. } => {
            let th = nodes(n_nodes);
            let points = th.iter().map(|&t| crate::burbea::conformal_point(*m, coeffs, t)).collect();
            let tangents = th.iter().map(|&t| crate::burbea::conformal_tangent(*m, coeffs, t)).collect();
            BoundaryCurve::from_patch(points, tangents, state.omega_speed)
        }
    }
}

/// Nondegeneracy verdict for a state on its own symmetry class.
pub fn check_admissibility(state: &AdmissibleState, n_nodes: usize, tol: f64) -> Result<SpectralReport> {
    spectral_report(&state_curve(state, n_nodes), state.m.m, tol)
}
