//! Shared fixtures: the Kirchhoff field checks, a polar area oracle for
//! sublevel sets and an independent radial oracle for the perturbed
//! Rankine problem.
#![allow(dead_code)]

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use vpatch::desing::Transition;
use vpatch::kernels::convolve_at_points;
use vpatch::kirchhoff::*;
use vpatch::levelset::LevelFunction;
use vpatch::{AdmissibleState, Grid2D, KernelParam, Point, ScalarField};

/// Kirchhoff ξ state on an `n × n` grid over `[-1.3, 1.3]²`.
pub fn kirchhoff_state(xi: f64, n: usize) -> AdmissibleState {
    make_kirchhoff_state(xi, Grid2D::centered(n, 1.3).unwrap(), None).unwrap()
}

/// Radially symmetric solution of
/// `P(r) = ∫ ω(s) s log max(r, s) ds - Ω r²/2 - c` with `ω = γ(-P/ε)`,
/// discretized by the midpoint rule on the transition annulus and solved by
/// dense Newton. `ω = 1` below the annulus and `0` above it.
pub struct RadialOracle {
    pub omega_speed: f64,
    pub c: f64,
    pub inner: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub vorticity: Vec<f64>,
}

/// `∫_0^a s log max(r, s) ds`.
fn disk_potential(a: f64, r: f64) -> f64 {
    if r >= a {
        0.5 * a * a * r.ln()
    } else {
        0.5 * a * a * a.ln() - 0.25 * a * a + 0.25 * r * r
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl RadialOracle {
    /// `eps` and `halo` are absolute stream-function values; the annulus is
    /// `{|Ψ| ≤ halo}` of the unperturbed disk.
    pub fn solve(omega: f64, c: f64, eps: f64, halo: f64, n: usize, transition: Transition) -> Self {
        let psi0 = |r: f64| rankine_stream([r, 0.0], omega);
        let a = bisect(|r| psi0(r) + halo, 0.5, 1.0);
        let b = bisect(|r| psi0(r) - halo, 1.0, (0.5 / omega).sqrt());
        let dr = (b - a) / n as f64;
        let nodes: Vec<f64> = (0..n).map(|i| a + (i as f64 + 0.5) * dr).collect();
        let weights: Vec<f64> = nodes.iter().map(|s| s * dr).collect();
        let kernel = DMatrix::from_fn(n, n, |j, i| weights[i] * nodes[j].max(nodes[i]).ln());
        let base: Vec<f64> = nodes
            .iter()
            .map(|&r| disk_potential(a, r) - 0.5 * omega * r * r - c)
            .collect();
        let mut p = DVector::from_iterator(n, nodes.iter().map(|&r| psi0(r)));
        for _ in 0..50 {
            let w = DVector::from_iterator(n, p.iter().map(|v| transition.value(-v / eps)));
            let d = DVector::from_iterator(n, p.iter().map(|v| transition.slope(-v / eps) / eps));
            let res = &p - &kernel * &w - DVector::from_column_slice(&base);
            if res.amax() < 1e-14 {
                break;
            }
            let mut jac = kernel.clone();
            for i in 0..n {
                jac.column_mut(i).scale_mut(d[i]);
            }
            jac += DMatrix::identity(n, n);
            p -= jac.lu().solve(&res).unwrap();
        }
        let vorticity = p.iter().map(|v| transition.value(-v / eps)).collect::<Vec<_>>();
        assert!(vorticity[0] == 1.0 && vorticity[n - 1] == 0.0, "annulus too thin for the transition");
        Self { omega_speed: omega, c, inner: a, nodes, weights, vorticity }
    }

    /// `Ψ_full(r)`.
    pub fn stream(&self, r: f64) -> f64 {
        let band: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.vorticity)
            .map(|((s, w), v)| w * v * r.max(*s).ln())
            .sum();
        disk_potential(self.inner, r) + band - 0.5 * self.omega_speed * r * r - self.c
    }
}

/// Nodes at least this far from the boundary, in the ellipse radius
/// `sqrt(x² + (y/b)²)`, enter the Laplacian error; `Ψ` is only `C^{1,1}`
/// across the boundary.
const COLLAR: f64 = 0.1;

pub fn ellipse_radius(p: Point, b: f64) -> f64 {
    p[0].hypot(p[1] / b)
}

/// Max error of the five-point Laplacian of the sampled stream function
/// against `1_E - 2Ω`, away from the collar.
pub fn laplacian_error(xi: f64, h: f64) -> f64 {
    let b = xi.tanh();
    let om = kirchhoff_angular_velocity(xi);
    let g = Grid2D::centered_with_spacing(h, 1.5).unwrap();
    let lap = ScalarField::from_fn(g, |p| kirchhoff_stream(p, xi)).laplacian();
    (0..g.len())
        .filter(|&k| {
            let (i, j) = g.ij(k);
            i > 0 && j > 0 && i + 1 < g.nx && j + 1 < g.ny
        })
        .filter_map(|k| {
            let p = g.point_of(k);
            let r = ellipse_radius(p, b);
            ((r - 1.0).abs() >= COLLAR).then(|| {
                let want = if r < 1.0 { 1.0 } else { 0.0 } - 2.0 * om;
                (lap.values[k] - want).abs()
            })
        })
        .fold(0.0, f64::max)
}

/// Observed orders of the Laplacian error over `h = 1/64, 1/128, 1/256`.
pub fn laplacian_orders(xi: f64) -> (Vec<f64>, Vec<f64>) {
    let errs: Vec<f64> = [64.0, 128.0, 256.0].iter().map(|n| laplacian_error(xi, 1.0 / n)).collect();
    let orders = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    (errs, orders)
}

/// Interior gradient `((b²x, y)) / (1 + b)²` and exterior gradient from
/// `∂ζΨ` at `ζ = ξ` (where `∂ηΨ = 0`), at the boundary point of angle `t`.
pub fn one_sided_gradients(xi: f64, t: f64) -> (Point, Point) {
    let b = xi.tanh();
    let p = [t.cos(), b * t.sin()];
    let d = (1.0 + b) * (1.0 + b);
    let inner = [b * b * p[0] / d, p[1] / d];
    let uz = kirchhoff_dzeta_exterior(xi, t, xi);
    let g = Complex64::new(uz, 0.0) * xi.cosh() / Complex64::new(xi, t).sinh();
    (inner, [g.re, -g.im])
}

/// Area fractions of the ellipse on the cells of `g`, with `s × s`
/// sub-samples on cells near the boundary.
pub fn ellipse_fractions(g: Grid2D, b: f64, s: usize) -> ScalarField {
    let h = g.h;
    let reach = 2.0 * h / b;
    ScalarField::from_fn(g, |p| {
        let r = ellipse_radius(p, b);
        if (r - 1.0).abs() > reach {
            return if r < 1.0 { 1.0 } else { 0.0 };
        }
        let mut inside = 0usize;
        for a in 0..s {
            for c in 0..s {
                let q = [p[0] + h * ((a as f64 + 0.5) / s as f64 - 0.5), p[1] + h * ((c as f64 + 0.5) / s as f64 - 0.5)];
                inside += (ellipse_radius(q, b) < 1.0) as usize;
            }
        }
        inside as f64 / (s * s) as f64
    })
}

/// Probes on ellipse radii in `[1.3, 3]` spread by the golden angle.
pub fn exterior_probes(b: f64, n: usize) -> Vec<Point> {
    let golden = TAU * (1.0 - 1.0 / 1.618_033_988_749_895);
    (0..n)
        .map(|k| {
            let r = 1.3 + 1.7 * (k as f64 + 0.5) / n as f64;
            let t = golden * k as f64;
            [r * t.cos(), r * b * t.sin()]
        })
        .collect()
}

/// Max difference between the exterior closed form of `N * 1_E` and the
/// grid quadrature at `h = 1/256`, and the quadrature tolerance `h²`.
pub fn exterior_quadrature_gap(xi: f64) -> (f64, f64) {
    let b = xi.tanh();
    let om = kirchhoff_angular_velocity(xi);
    let c = kirchhoff_constant(xi);
    let g = Grid2D::centered_with_spacing(1.0 / 256.0, 1.05).unwrap();
    let density = ellipse_fractions(g, b, 16);
    let probes = exterior_probes(b, 100);
    let quad = convolve_at_points(KernelParam::FREE, &density, &probes).unwrap();
    let gap = probes
        .iter()
        .zip(&quad)
        .map(|(p, q)| {
            let closed = kirchhoff_stream(*p, xi) + 0.5 * om * (p[0] * p[0] + p[1] * p[1]) + c;
            (closed - q).abs()
        })
        .fold(0.0, f64::max);
    (gap, g.h * g.h)
}

/// Area of `{F ≤ t}` for a star-shaped sublevel set by ray root-finding.
pub fn polar_area(f: &dyn LevelFunction, t: f64, n: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..n {
        let th = TAU * k as f64 / n as f64;
        let d = [th.cos(), th.sin()];
        let (mut lo, mut hi) = (0.2, 1.4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f.value([mid * d[0], mid * d[1]]) <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        acc += 0.5 * lo * lo;
    }
    acc * TAU / n as f64
}
