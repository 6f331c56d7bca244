//! Kirchhoff ellipses `E = {x1² + (x2 / tanh ξ)² < 1}` and the Rankine
//! vortex: closed-form relative stream functions and admissible states.
//!
//! Outside the ellipse the stream function is written in elliptic
//! coordinates `x = (sech ξ cosh ζ cos η, sech ξ sinh ζ sin η)`, i.e.
//! `x cosh ξ = cosh(ζ + iη)`; inside it is the quadratic solving
//! `ΔΨ = 1 - 2Ω` with zero boundary values.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::{symmetrize, Grid2D, Point, ScalarField, SymmetryGroup};
use crate::state::{assemble_state, AdmissibleState, BaseKind, StateParts};

/// Number of vertices used for boundary polylines of closed-form states.
pub const BOUNDARY_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KirchhoffParam {
    pub xi: f64,
}

impl KirchhoffParam {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi > 0.0) || !xi.is_finite() {
            return domain(format!("xi must be positive and finite, got {xi}"));
        }
        Ok(Self { xi })
    }

    /// Minor semi-axis `tanh ξ`.
    pub fn b(&self) -> f64 {
        self.xi.tanh()
    }

    pub fn omega(&self) -> f64 {
        kirchhoff_angular_velocity(self.xi)
    }

    pub fn c(&self) -> f64 {
        kirchhoff_constant(self.xi)
    }
}

/// Point of the elliptic coordinate map.
pub fn elliptical_map(zeta: f64, eta: f64, xi: f64) -> Result<Point> {
    if !(zeta > 0.0) {
        return domain(format!("zeta must be positive, got {zeta}"));
    }
    let s = 1.0 / xi.cosh();
    Ok([s * zeta.cosh() * eta.cos(), s * zeta.sinh() * eta.sin()])
}

/// Jacobian `sech²ξ (cosh 2ζ - cos 2η) / 2` of the elliptic coordinate map.
pub fn elliptical_jacobian(zeta: f64, eta: f64, xi: f64) -> f64 {
    let s = 1.0 / xi.cosh();
    0.5 * s * s * ((2.0 * zeta).cosh() - (2.0 * eta).cos())
}

/// Angular velocity `tanh ξ / (1 + tanh ξ)²`.
pub fn kirchhoff_angular_velocity(xi: f64) -> f64 {
    let b = xi.tanh();
    b / ((1.0 + b) * (1.0 + b))
}

/// The constant `c` in `Ψ = N * 1_E - Ω|x|²/2 - c`, read off from the
/// far-field expansion of the exterior formula.
pub fn kirchhoff_constant(xi: f64) -> f64 {
    let b = xi.tanh();
    let e = (-2.0 * xi).exp();
    -0.5 * b * e.ln_1p() - 0.25 * b * e * (2.0 * xi).cosh()
}

/// Exterior stream function in elliptic coordinates, `ζ ≥ ξ`.
pub fn kirchhoff_stream_exterior(zeta: f64, eta: f64, xi: f64) -> Result<f64> {
    if zeta < xi {
        return domain(format!("exterior formula needs zeta >= xi, got {zeta} < {xi}"));
    }
    Ok(exterior_unchecked(zeta, (2.0 * eta).cos(), xi))
}

fn exterior_unchecked(zeta: f64, cos2eta: f64, xi: f64) -> f64 {
    let b = xi.tanh();
    let e2xi = (-2.0 * xi).exp();
    0.25 * b * (2.0 * (zeta - xi) - ((2.0 * zeta).cosh() - (2.0 * xi).cosh()) * e2xi)
        + 0.25 * b * ((-2.0 * zeta).exp() - e2xi) * cos2eta
}

/// `∂ζ` of the exterior stream function.
pub fn kirchhoff_dzeta_exterior(zeta: f64, eta: f64, xi: f64) -> f64 {
    let b = xi.tanh();
    let e2xi = (-2.0 * xi).exp();
    0.5 * b * (1.0 - (2.0 * zeta).sinh() * e2xi) - 0.5 * b * (-2.0 * zeta).exp() * (2.0 * eta).cos()
}

/// Interior quadratic `(b² x1² + x2² - b²) / (2 (1 + b)²)`, valid on the closed ellipse.
pub fn kirchhoff_stream_interior(x: Point, xi: f64) -> Result<f64> {
    let b = xi.tanh();
    if x[0] * x[0] + (x[1] / b).powi(2) > 1.0 + 1e-12 {
        return domain("point lies outside the closed ellipse");
    }
    Ok(interior_unchecked(x, b))
}

fn interior_unchecked(x: Point, b: f64) -> f64 {
    (b * b * x[0] * x[0] + x[1] * x[1] - b * b) / (2.0 * (1.0 + b) * (1.0 + b))
}

/// Elliptic coordinates `(ζ, η)` of a point, via the principal complex
/// arccosh of `x cosh ξ`. Points on the focal segment get `ζ = 0`.
pub fn elliptic_coordinates(x: Point, xi: f64) -> (f64, f64) {
    let w = Complex64::new(x[0], x[1]) * xi.cosh();
    if w.im == 0.0 && w.re.abs() <= 1.0 {
        return (0.0, w.re.acos());
    }
    let z = w.acosh();
    (z.re.abs(), if z.re < 0.0 { -z.im } else { z.im })
}

fn inside_ellipse(x: Point, b: f64) -> bool {
    x[0] * x[0] + (x[1] / b).powi(2) <= 1.0
}

/// Relative stream function of the ξ-Kirchhoff ellipse anywhere in the plane.
pub fn kirchhoff_stream(x: Point, xi: f64) -> f64 {
    let b = xi.tanh();
    if inside_ellipse(x, b) {
        interior_unchecked(x, b)
    } else {
        let (zeta, eta) = elliptic_coordinates(x, xi);
        exterior_unchecked(zeta.max(xi), (2.0 * eta).cos(), xi)
    }
}

/// Gradient of [`kirchhoff_stream`], using `u_x - i u_y = (u_ζ - i u_η) cosh ξ / sinh(ζ + iη)`
/// outside the ellipse.
pub fn kirchhoff_gradient(x: Point, xi: f64) -> Point {
    let b = xi.tanh();
    if inside_ellipse(x, b) {
        let d = (1.0 + b) * (1.0 + b);
        return [b * b * x[0] / d, x[1] / d];
    }
    let (zeta, eta) = elliptic_coordinates(x, xi);
    let e2xi = (-2.0 * xi).exp();
    let uz = kirchhoff_dzeta_exterior(zeta, eta, xi);
    let ue = -0.5 * b * ((-2.0 * zeta).exp() - e2xi) * (2.0 * eta).sin();
    let g = Complex64::new(uz, -ue) * xi.cosh() / Complex64::new(zeta, eta).sinh();
    [g.re, -g.im]
}

/// Relative stream function of the Rankine vortex (unit disk) rotating at `omega`.
pub fn rankine_stream(x: Point, omega: f64) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    if r2 <= 1.0 {
        0.25 * (1.0 - 2.0 * omega) * (r2 - 1.0)
    } else {
        0.25 * (r2.ln() - 2.0 * omega * (r2 - 1.0))
    }
}

pub fn rankine_gradient(x: Point, omega: f64) -> Point {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let f = if r2 <= 1.0 { 0.5 * (1.0 - 2.0 * omega) } else { 0.5 / r2 - omega };
    [f * x[0], f * x[1]]
}

/// Default band half-width `0.1 · (boundary min |∇Ψ|) · (focal scale)`,
/// capped at half the exterior ridge of `Ψ` on the major axis so the band
/// stays a thin tube around the boundary for elongated ellipses.
pub fn default_band_half_width(xi: f64) -> f64 {
    let b = xi.tanh();
    let gmin = b * b / ((1.0 + b) * (1.0 + b));
    let ridge = (1..=400)
        .map(|k| kirchhoff_stream([1.0 + 0.01 * k as f64, 0.0], xi))
        .fold(f64::NEG_INFINITY, f64::max);
    (0.1 * gmin / xi.cosh()).min(0.5 * ridge)
}

fn ellipse_polyline(b: f64) -> Vec<Point> {
    (0..BOUNDARY_SAMPLES)
        .map(|k| {
            let t = TAU * k as f64 / BOUNDARY_SAMPLES as f64;
            [t.cos(), b * t.sin()]
        })
        .collect()
}

/// Admissible state of the ξ-Kirchhoff ellipse on `grid`; `tau = None`
/// selects [`default_band_half_width`].
pub fn make_kirchhoff_state(xi: f64, grid: Grid2D, tau: Option<f64>) -> Result<AdmissibleState> {
    let p = KirchhoffParam::new(xi)?;
    let b = p.b();
    if grid.inscribed_radius() < 1.25 {
        return domain("grid box must contain the ellipse with a 25% margin");
    }
    let raw = ScalarField::from_fn(grid, |x| kirchhoff_stream(x, xi));
    let psi = if grid.is_centered() { symmetrize(&raw, SymmetryGroup { m: 2 })? } else { raw };
    let gmin = b * b / ((1.0 + b) * (1.0 + b));
    let grad = move |x: Point| kirchhoff_gradient(x, xi);
    assemble_state(StateParts {
        psi,
        omega_speed: p.omega(),
        c: p.c(),
        sigma: ellipse_polyline(b),
        m: SymmetryGroup { m: 2 },
        tau: tau.unwrap_or_else(|| default_band_half_width(xi)),
        boundary_grad_min: gmin,
        kind: BaseKind::Kirchhoff { xi },
        grad: &grad,
    })
}

/// Default Rankine band half-width `0.1 · (1 - 2Ω)/2`, capped at half the
/// exterior ridge `Ψ(r*)` with `r*² = 1/2Ω` when `Ω > 0`.
pub fn rankine_band_half_width(omega: f64) -> f64 {
    let base = 0.05 * (1.0 - 2.0 * omega);
    if omega > 0.0 {
        let ridge = rankine_stream([(0.5 / omega).sqrt(), 0.0], omega);
        base.min(0.5 * ridge)
    } else {
        base
    }
}

/// Admissible state of the Rankine vortex rotating at `omega < 1/2`.
pub fn make_rankine_state(omega: f64, grid: Grid2D, tau: Option<f64>) -> Result<AdmissibleState> {
    if !(omega < 0.5) {
        return domain("Rankine state needs omega < 1/2");
    }
    if grid.inscribed_radius() < 1.25 {
        return domain("grid box must contain the disk with a 25% margin");
    }
    let psi = ScalarField::from_fn(grid, |x| rankine_stream(x, omega));
    let gmin = 0.5 * (1.0 - 2.0 * omega);
    let grad = move |x: Point| rankine_gradient(x, omega);
    assemble_state(StateParts {
        psi,
        omega_speed: omega,
        c: -0.5 * omega,
        sigma: ellipse_polyline(1.0),
        m: SymmetryGroup { m: 4 },
        tau: tau.unwrap_or_else(|| rankine_band_half_width(omega)),
        boundary_grad_min: gmin,
        kind: BaseKind::Rankine,
        grad: &grad,
    })
}
