//! Admissible states: a relative stream function on a grid together with
//! its rotation speed, boundary curve, symmetry order and the tubular band
//! `U` splitting the plane into inner band and outer parts.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::grid::{norm, Point, ScalarField, SymmetryGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Inner,
    Band,
    Outer,
}

/// Where a state came from; selects closed-form evaluators when they exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseKind {
    Kirchhoff { xi: f64 },
    Rankine,
    /// Exterior conformal map `w + Σ a_n w^{1 - n m}` of a V-state.
    VState { m: usize, s: f64, coeffs: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct AdmissibleState {
    pub psi: ScalarField,
    pub omega_speed: f64,
    pub c: f64,
    /// Counterclockwise boundary polyline of the patch.
    pub sigma: Vec<Point>,
    pub m: SymmetryGroup,
    pub region: Vec<Region>,
    /// Grid indices of the closed band, ascending.
    pub band: Vec<usize>,
    /// Band half-width in stream-function units.
    pub tau: f64,
    /// Minimum of `|∇Ψ|` over the band.
    pub grad_floor: f64,
    /// Minimum of `|∇Ψ|` over the boundary curve.
    pub boundary_grad_min: f64,
    pub kind: BaseKind,
}

impl AdmissibleState {
    pub fn inner_mask(&self) -> Vec<bool> {
        self.region.iter().map(|r| *r == Region::Inner).collect()
    }

    pub fn outer_mask(&self) -> Vec<bool> {
        self.region.iter().map(|r| *r == Region::Outer).collect()
    }

    pub fn band_mask(&self) -> Vec<bool> {
        self.region.iter().map(|r| *r == Region::Band).collect()
    }

    /// Grid indicator of the patch: the inner part plus band nodes with `Ψ < 0`.
    pub fn patch_indicator(&self) -> ScalarField {
        let values = self
            .region
            .iter()
            .zip(&self.psi.values)
            .map(|(r, &p)| match r {
                Region::Inner => 1.0,
                Region::Band if p < 0.0 => 1.0,
                _ => 0.0,
            })
            .collect();
        ScalarField { grid: self.psi.grid, values }
    }

    /// Stream function at an arbitrary point: closed form for the ellipse and
    /// the disk, boundary quadrature for V-states.
    pub fn psi_at(&self, p: Point) -> f64 {
        match &self.kind {
            BaseKind::Kirchhoff { xi } => crate::kirchhoff::kirchhoff_stream(p, *xi),
            BaseKind::Rankine => crate::kirchhoff::rankine_stream(p, self.omega_speed),
            BaseKind::VState { m, coeffs, .. } => {
                crate::burbea::vstate_stream(*m, coeffs, self.omega_speed, self.c, p)
            }
        }
    }

    pub fn grad_psi_at(&self, p: Point) -> Point {
        match &self.kind {
            BaseKind::Kirchhoff { xi } => crate::kirchhoff::kirchhoff_gradient(p, *xi),
            BaseKind::Rankine => crate::kirchhoff::rankine_gradient(p, self.omega_speed),
            BaseKind::VState { m, coeffs, .. } => crate::burbea::vstate_gradient(*m, coeffs, self.omega_speed, p),
        }
    }

    /// Point of the boundary at circle angle `theta`, for states with a
    /// conformal or elliptic parametrization.
    pub fn boundary_point(&self, theta: f64) -> Point {
        match &self.kind {
            BaseKind::Kirchhoff { xi } => [theta.cos(), xi.tanh() * theta.sin()],
            BaseKind::Rankine => [theta.cos(), theta.sin()],
            BaseKind::VState { m, coeffs, .. } => crate::burbea::conformal_point(*m, coeffs, theta),
        }
    }

    /// Sup-norm bound for band perturbations: a quarter of the band
    /// half-width, the configured a-priori radius.
    pub fn band_bound(&self) -> f64 {
        0.25 * self.tau
    }
}

/// Inputs for [`assemble_state`].
pub struct StateParts<'a> {
    pub psi: ScalarField,
    pub omega_speed: f64,
    pub c: f64,
    pub sigma: Vec<Point>,
    pub m: SymmetryGroup,
    pub tau: f64,
    pub boundary_grad_min: f64,
    pub kind: BaseKind,
    pub grad: &'a dyn Fn(Point) -> Point,
}

/// Builds the band `{|Ψ| < τ}` near the boundary and classifies the rest of
/// the grid into inner and outer components by flood fill.
pub fn assemble_state(parts: StateParts<'_>) -> Result<AdmissibleState> {
    let StateParts { psi, omega_speed, c, sigma, m, tau, boundary_grad_min, kind, grad } = parts;
    let g = psi.grid;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("band half-width must be positive, got {tau}")));
    }
    let guard = 1.5 * tau / boundary_grad_min + 1.5 * g.h;
    let candidate: Vec<bool> = (0..g.len())
        .map(|k| psi.values[k].abs() < tau && geometry::polyline_distance(&sigma, g.point_of(k)) <= guard)
        .collect();

    // Seed the band from nodes next to boundary vertices.
    let mut in_band = vec![false; g.len()];
    let mut queue = VecDeque::new();
    for &p in &sigma {
        if !g.contains(p) {
            return Err(Error::Config("boundary curve leaves the grid box".into()));
        }
        let (fx, fy) = g.frac(p);
        let k = g.index(fx.round() as usize, fy.round() as usize);
        if candidate[k] && !in_band[k] {
            in_band[k] = true;
            queue.push_back(k);
        }
    }
    while let Some(k) = queue.pop_front() {
        for nb in g.neighbors4(k) {
            if candidate[nb] && !in_band[nb] {
                in_band[nb] = true;
                queue.push_back(nb);
            }
        }
    }

    // Outer component: reachable from the box edge without crossing the band.
    let mut outer = vec![false; g.len()];
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        let edge = i == 0 || j == 0 || i == g.nx - 1 || j == g.ny - 1;
        if edge && in_band[k] {
            return Err(Error::Config("band reaches the grid box edge".into()));
        }
        if edge {
            outer[k] = true;
            queue.push_back(k);
        }
    }
    while let Some(k) = queue.pop_front() {
        for nb in g.neighbors4(k) {
            if !in_band[nb] && !outer[nb] {
                outer[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    let region: Vec<Region> = (0..g.len())
        .map(|k| {
            if in_band[k] {
                Region::Band
            } else if outer[k] {
                Region::Outer
            } else {
                Region::Inner
            }
        })
        .collect();
    let band: Vec<usize> = (0..g.len()).filter(|&k| in_band[k]).collect();
    if band.is_empty() || !region.contains(&Region::Inner) {
        return Err(Error::Config("band does not separate an inner component".into()));
    }
    for &k in &band {
        for nb in g.neighbors4(k) {
            let wrong = match region[nb] {
                Region::Inner => psi.values[nb] >= 0.0,
                Region::Outer => psi.values[nb] <= 0.0,
                Region::Band => false,
            };
            if wrong {
                return Err(Error::Config("band edge crosses the zero level set".into()));
            }
        }
    }
    let grad_floor = band.iter().map(|&k| norm(grad(g.point_of(k)))).fold(f64::INFINITY, f64::min);
    if grad_floor < 0.5 * boundary_grad_min {
        return Err(Error::BandTooWide(format!(
            "band gradient floor {grad_floor:.4e} is below half the boundary minimum {boundary_grad_min:.4e}"
        )));
    }
    Ok(AdmissibleState { psi, omega_speed, c, sigma, m, region, band, tau, grad_floor, boundary_grad_min, kind })
}

/// Height of the lowest exterior ridge of `Ψ`: along rays from the boundary
/// vertices out to radius `r_max`, the smallest of the per-ray maxima. Bands
/// wider than this would wrap around exterior critical points.
pub fn ridge_height(psi: &dyn Fn(Point) -> f64, sigma: &[Point], r_max: f64) -> f64 {
    let stride = (sigma.len() / 128).max(1);
    sigma
        .iter()
        .step_by(stride)
        .map(|&p| {
            let r0 = norm(p);
            let dir = [p[0] / r0, p[1] / r0];
            let steps = ((r_max - r0) / 0.01).floor().max(0.0) as usize;
            (1..=steps)
                .map(|k| {
                    let r = r0 + 0.01 * k as f64;
                    psi([r * dir[0], r * dir[1]])
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}
