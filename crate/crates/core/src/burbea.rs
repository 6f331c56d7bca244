//! Burbea map for m-fold perturbations of the Rankine vortex.
//!
//! Boundaries are exterior conformal maps `Φ(w) = w + φ(w)` with
//! `φ(w) = Σ a_n w̄^{nm-1}` sampled on `M` equispaced points of the unit
//! circle. The Cauchy integral operator, the map, and its Fréchet derivative
//! are discretized by the trapezoid rule with removable-singularity diagonals,
//! which is spectrally accurate for smooth periodic data.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::geometry;
use crate::grid::{norm, Grid2D, Point, ScalarField, SymmetryGroup};
use crate::state::{assemble_state, ridge_height, AdmissibleState, BaseKind, StateParts};

pub const DEFAULT_MODES: usize = 32;
pub const DEFAULT_CIRCLE_SAMPLES: usize = 256;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Critical rotation speed `Ω_m = (m-1)/2m` where the m-fold branch leaves the Rankine vortex.
pub fn bifurcation_speed(m: usize) -> f64 {
    (m as f64 - 1.0) / (2.0 * m as f64)
}

/// Boundary point `Φ(e^{iθ})` of the exterior conformal map `w + Σ a_n w^{1 - n m}`.
pub fn conformal_point(m: usize, coeffs: &[f64], theta: f64) -> Point {
    let z = conformal_eval(m, coeffs, theta).0;
    [z.re, z.im]
}

/// `d/dθ Φ(e^{iθ})`.
pub fn conformal_tangent(m: usize, coeffs: &[f64], theta: f64) -> Point {
    let t = conformal_eval(m, coeffs, theta).1;
    [t.re, t.im]
}

/// `(Φ, dΦ/dθ)` at `e^{iθ}` by power recurrence.
fn conformal_eval(m: usize, coeffs: &[f64], theta: f64) -> (C64, C64) {
    let w = C64::from_polar(1.0, theta);
    let step = C64::from_polar(1.0, -(m as f64) * theta);
    let mut p = w;
    let mut z = w;
    let mut t = I * w;
    for (n, &a) in coeffs.iter().enumerate() {
        p *= step;
        let k = ((n + 1) * m) as f64 - 1.0;
        z += a * p;
        t -= I * (k * a) * p;
    }
    (z, t)
}

/// Truncated Fourier boundary `φ(w) = Σ_{n=1}^{N_F} a_n w̄^{nm-1}` with real coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierBoundary {
    pub m: usize,
    pub coeffs: Vec<f64>,
    pub m_grid: usize,
}

impl FourierBoundary {
    /// Validated boundary; rejects non-injective maps on the sample grid.
    pub fn new(m: usize, coeffs: Vec<f64>, m_grid: usize) -> Result<Self> {
        if m < 2 {
            return config(format!("symmetry order must be at least 2, got {m}"));
        }
        if !m_grid.is_power_of_two() || m_grid < 8 {
            return config(format!("circle sample count must be a power of two >= 8, got {m_grid}"));
        }
        if coeffs.iter().any(|a| !a.is_finite()) {
            return domain("boundary coefficients must be finite");
        }
        let b = Self { m, coeffs, m_grid };
        let margin = b.injectivity_margin();
        if !(margin > 0.0) {
            return Err(Error::Geometry(format!("boundary map is not injective (margin {margin:.3e})")));
        }
        Ok(b)
    }

    /// The unperturbed unit circle with `n_f` zero coefficients.
    pub fn rankine(m: usize, n_f: usize, m_grid: usize) -> Result<Self> {
        Self::new(m, vec![0.0; n_f], m_grid)
    }

    /// Power of `w̄` carried by `coeffs[n]`.
    pub fn exponent(&self, n: usize) -> usize {
        (n + 1) * self.m - 1
    }

    pub fn nodes(&self) -> Vec<C64> {
        circle_nodes(self.m_grid)
    }

    /// `Φ(w_j)` on the circle grid.
    pub fn samples(&self) -> Vec<C64> {
        (0..self.m_grid).map(|j| conformal_eval(self.m, &self.coeffs, node_angle(j, self.m_grid)).0).collect()
    }

    /// `dΦ/dθ` on the circle grid.
    pub fn theta_derivative(&self) -> Vec<C64> {
        (0..self.m_grid).map(|j| conformal_eval(self.m, &self.coeffs, node_angle(j, self.m_grid)).1).collect()
    }

    /// `min_{τ≠w} |Φ(τ) - Φ(w)| / |τ - w|` on the grid, with `|Φ'|` on the diagonal.
    pub fn injectivity_margin(&self) -> f64 {
        margin(&self.samples(), &self.theta_derivative())
    }

    pub fn point(&self, theta: f64) -> Point {
        conformal_point(self.m, &self.coeffs, theta)
    }

    /// Counterclockwise boundary polyline with `n` vertices.
    pub fn polyline(&self, n: usize) -> Vec<Point> {
        (0..n).map(|j| self.point(node_angle(j, n))).collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.polyline(1024).iter().map(|&p| norm(p)).fold(0.0, f64::max)
    }
}

fn node_angle(j: usize, n: usize) -> f64 {
    TAU * j as f64 / n as f64
}

fn circle_nodes(n: usize) -> Vec<C64> {
    (0..n).map(|j| C64::from_polar(1.0, node_angle(j, n))).collect()
}

/// Sampled injectivity margin; zero when the sample polygon crosses itself.
fn margin(phi: &[C64], phi_t: &[C64]) -> f64 {
    let n = phi.len();
    let poly: Vec<Point> = phi.iter().map(|z| [z.re, z.im]).collect();
    if !geometry::is_simple(&poly) {
        return 0.0;
    }
    let tau = circle_nodes(n);
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut best = phi_t[j].norm();
            for k in 0..n {
                if k != j {
                    best = best.min((phi[k] - phi[j]).norm() / (tau[k] - tau[j]).norm());
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Spectral `d/dθ` of periodic complex samples.
pub fn spectral_derivative(f: &[C64]) -> Vec<C64> {
    let n = f.len();
    let mut planner = FftPlanner::new();
    let mut buf = f.to_vec();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let freq = if 2 * k < n {
            k as f64
        } else if 2 * k == n {
            0.0
        } else {
            k as f64 - n as f64
        };
        *v *= I * freq / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Reciprocal differences `1/(Φ_k - Φ_j)` with zero diagonal, reused by every
/// Cauchy-type sum on the same boundary.
struct CauchyKernel {
    n: usize,
    phi: Vec<C64>,
    phi_t: Vec<C64>,
    inv: Vec<C64>,
}

impl CauchyKernel {
    fn new(phi: Vec<C64>, phi_t: Vec<C64>) -> Result<Self> {
        let n = phi.len();
        let mg = margin(&phi, &phi_t);
        if !(mg > 0.0) || !mg.is_finite() {
            return Err(Error::Geometry(format!("boundary samples are not injective (margin {mg:.3e})")));
        }
        let inv = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (j, k) = (idx / n, idx % n);
                if j == k { C64::new(0.0, 0.0) } else { (phi[k] - phi[j]).inv() }
            })
            .collect();
        Ok(Self { n, phi, phi_t, inv })
    }

    /// `𝒞(Φ)f` given `f` and `df/dθ`.
    fn cauchy(&self, f: &[C64], f_t: &[C64]) -> Vec<C64> {
        let n = self.n;
        let scale = 1.0 / (I * n as f64);
        (0..n)
            .into_par_iter()
            .map(|j| {
                let row = &self.inv[j * n..(j + 1) * n];
                let mut acc = f_t[j];
                for k in 0..n {
                    acc += (f[k] - f[j]) * self.phi_t[k] * row[k];
                }
                acc * scale
            })
            .collect()
    }

    /// Directional derivative `D𝒞(Φ)[ξ]f`; the combined integrand vanishes on the diagonal.
    fn cauchy_derivative(&self, xi: &[C64], xi_t: &[C64], f: &[C64]) -> Vec<C64> {
        let n = self.n;
        let scale = 1.0 / (I * n as f64);
        (0..n)
            .into_par_iter()
            .map(|j| {
                let row = &self.inv[j * n..(j + 1) * n];
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    if k != j {
                        let q = (f[k] - f[j]) * row[k];
                        acc += q * (xi_t[k] - (xi[k] - xi[j]) * self.phi_t[k] * row[k]);
                    }
                }
                acc * scale
            })
            .collect()
    }
}

/// Trapezoid discretization of `(1/2πi)∮ (f(τ) - f(w))/(Φ(τ) - Φ(w)) Φ'(τ) dτ`
/// at the circle samples, with the diagonal replaced by its limit `f'(w)`.
pub fn cauchy_op(phi: &[C64], f: &[C64]) -> Result<Vec<C64>> {
    if phi.len() != f.len() {
        return config("boundary and data sample counts differ");
    }
    if !phi.len().is_power_of_two() || phi.len() < 8 {
        return config(format!("circle sample count must be a power of two >= 8, got {}", phi.len()));
    }
    let kernel = CauchyKernel::new(phi.to_vec(), spectral_derivative(phi))?;
    Ok(kernel.cauchy(f, &spectral_derivative(f)))
}

/// Burbea map `Im{(ΩΦ̄ + 𝒞(Φ)Φ̄/2) wΦ'}` sampled on the circle for arbitrary boundary samples.
pub fn burbea_map_samples(phi: &[C64], omega: f64) -> Result<Vec<f64>> {
    if !phi.len().is_power_of_two() || phi.len() < 8 {
        return config(format!("circle sample count must be a power of two >= 8, got {}", phi.len()));
    }
    let kernel = CauchyKernel::new(phi.to_vec(), spectral_derivative(phi))?;
    Ok(map_values(&kernel, omega).0)
}

/// Map samples together with `𝒞(Φ)Φ̄`.
fn map_values(kernel: &CauchyKernel, omega: f64) -> (Vec<f64>, Vec<C64>) {
    let conj: Vec<C64> = kernel.phi.iter().map(|z| z.conj()).collect();
    let conj_t: Vec<C64> = kernel.phi_t.iter().map(|z| z.conj()).collect();
    let c = kernel.cauchy(&conj, &conj_t);
    let f = (0..kernel.n).map(|j| ((omega * conj[j] + 0.5 * c[j]) * kernel.phi_t[j] / I).im).collect();
    (f, c)
}

/// Coefficients `b_j` of `Σ b_j sin(jmθ)`, `j = 1..n_f`, by discrete Fourier analysis.
pub fn sine_coefficients(samples: &[f64], m: usize, n_f: usize) -> Vec<f64> {
    let n = samples.len();
    (1..=n_f)
        .map(|j| {
            let k = (j * m) as f64;
            2.0 / n as f64 * samples.iter().enumerate().map(|(i, &v)| v * (k * node_angle(i, n)).sin()).sum::<f64>()
        })
        .collect()
}

/// Full real Fourier analysis: entry `k` holds `(a_k, b_k)` of `a_k cos kθ + b_k sin kθ`.
pub fn fourier_modes(samples: &[f64]) -> Vec<(f64, f64)> {
    let n = samples.len();
    let mut buf: Vec<C64> = samples.iter().map(|&v| C64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (0..=n / 2)
        .map(|k| {
            let z = buf[k] / n as f64;
            let w = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
            (w * z.re, -w * z.im)
        })
        .collect()
}

fn truncation(m: usize, n_f: usize, m_grid: usize) -> Result<()> {
    if n_f == 0 || n_f * m >= m_grid / 2 {
        return config(format!(
            "truncation {n_f} with symmetry {m} needs more than {} circle samples",
            2 * n_f * m
        ));
    }
    Ok(())
}

/// Sine coefficients of the Burbea map on the symmetric basis `sin(jmθ)`, `j = 1..N_F`.
pub fn burbea_residual(b: &FourierBoundary, omega: f64) -> Result<Vec<f64>> {
    truncation(b.m, b.coeffs.len(), b.m_grid)?;
    let kernel = CauchyKernel::new(b.samples(), b.theta_derivative())?;
    let (f, _) = map_values(&kernel, omega);
    Ok(sine_coefficients(&f, b.m, b.coeffs.len()))
}

/// Jacobian of [`burbea_residual`]: `d_phi[(j, n)]` is the `sin((j+1)mθ)` response
/// to the direction `w̄^{(n+1)m-1}`, `d_omega` the response to `Ω`.
#[derive(Debug, Clone)]
pub struct BurbeaLinearization {
    pub d_phi: DMatrix<f64>,
    pub d_omega: DVector<f64>,
}

impl BurbeaLinearization {
    /// Smallest singular value of `d_phi` (kernel indicator on the symmetric class).
    pub fn sigma_min(&self) -> f64 {
        self.d_phi.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Assembles the Fréchet derivative of the Burbea map using the two-integral
/// form of `D𝒞(Φ)[ξ]`.
pub fn linearized_burbea(b: &FourierBoundary, omega: f64) -> Result<BurbeaLinearization> {
    let n_f = b.coeffs.len();
    truncation(b.m, n_f, b.m_grid)?;
    let kernel = CauchyKernel::new(b.samples(), b.theta_derivative())?;
    let (_, c_conj) = map_values(&kernel, omega);
    let nodes = b.nodes();
    let n = b.m_grid;
    let conj: Vec<C64> = kernel.phi.iter().map(|z| z.conj()).collect();

    let d_omega_samples: Vec<f64> = (0..n).map(|j| (conj[j] * kernel.phi_t[j] / I).im).collect();
    let mut d_phi = DMatrix::zeros(n_f, n_f);
    for col in 0..n_f {
        let k = b.exponent(col) as f64;
        let xi: Vec<C64> = nodes.iter().map(|w| w.powf(-k)).collect();
        let xi_t: Vec<C64> = xi.iter().map(|z| -I * k * z).collect();
        let xi_bar: Vec<C64> = xi.iter().map(|z| z.conj()).collect();
        let xi_bar_t: Vec<C64> = xi_t.iter().map(|z| z.conj()).collect();
        let dc = kernel.cauchy_derivative(&xi, &xi_t, &conj);
        let c_xi = kernel.cauchy(&xi_bar, &xi_bar_t);
        let samples: Vec<f64> = (0..n)
            .map(|j| {
                let first = (omega * xi_bar[j] + 0.5 * dc[j] + 0.5 * c_xi[j]) * kernel.phi_t[j];
                let second = (omega * conj[j] + 0.5 * c_conj[j]) * xi_t[j];
                ((first + second) / I).im
            })
            .collect();
        for (row, v) in sine_coefficients(&samples, b.m, n_f).into_iter().enumerate() {
            d_phi[(row, col)] = v;
        }
    }
    let d_omega = DVector::from_vec(sine_coefficients(&d_omega_samples, b.m, n_f));
    Ok(BurbeaLinearization { d_phi, d_omega })
}

/// Converged point of the m-fold branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchPoint {
    pub boundary: FourierBoundary,
    pub omega: f64,
    /// Amplitude parameter, equal to `a_1`.
    pub s: f64,
    /// Max-norm of the residual sine coefficients.
    pub residual: f64,
    /// Smallest singular value of the linearization on the symmetric class.
    pub sigma_min: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BranchConfig {
    pub n_f: usize,
    pub m_grid: usize,
    pub tol: f64,
    pub max_newton: usize,
    pub max_bisections: usize,
    /// Injectivity margin below which the branch is declared ended.
    pub margin_floor: f64,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            n_f: DEFAULT_MODES,
            m_grid: DEFAULT_CIRCLE_SAMPLES,
            tol: 1e-12,
            max_newton: 30,
            max_bisections: 6,
            margin_floor: 1e-3,
        }
    }
}

impl BranchConfig {
    /// Truncation actually used for order `m`: the requested `n_f`, capped
    /// so the highest retained mode stays below the Nyquist frequency.
    pub fn effective_modes(&self, m: usize) -> usize {
        self.n_f.min((self.m_grid / 2 - 1) / m)
    }
}

struct Continuation<'a> {
    m: usize,
    cfg: &'a BranchConfig,
    n_f: usize,
    coeffs: Vec<f64>,
    omega: f64,
    s: f64,
}

impl Continuation<'_> {
    fn newton(&self, s: f64, mut coeffs: Vec<f64>, mut omega: f64) -> Result<(FourierBoundary, f64, f64)> {
        coeffs[0] = s;
        for _ in 0..self.cfg.max_newton {
            let b = FourierBoundary { m: self.m, coeffs: coeffs.clone(), m_grid: self.cfg.m_grid };
            let mg = b.injectivity_margin();
            if !(mg > self.cfg.margin_floor) {
                return Err(Error::BranchEnd(s));
            }
            let r = burbea_residual(&b, omega)?;
            let rmax = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if !rmax.is_finite() {
                break;
            }
            if rmax < self.cfg.tol {
                return Ok((b, omega, rmax));
            }
            let lin = linearized_burbea(&b, omega)?;
            let mut jac = DMatrix::zeros(self.n_f, self.n_f);
            for row in 0..self.n_f {
                for col in 1..self.n_f {
                    jac[(row, col - 1)] = lin.d_phi[(row, col)];
                }
                jac[(row, self.n_f - 1)] = lin.d_omega[row];
            }
            let rhs = -DVector::from_vec(r);
            let Some(step) = jac.lu().solve(&rhs) else { break };
            for col in 1..self.n_f {
                coeffs[col] += step[col - 1];
            }
            omega += step[self.n_f - 1];
        }
        Err(Error::NoConvergence(format!("Newton did not reach {:.1e} at s = {s}", self.cfg.tol)))
    }

    /// Moves the stored point to amplitude `target`, bisecting the step on failure.
    fn advance(&mut self, target: f64, depth: usize) -> Result<(FourierBoundary, f64, f64)> {
        let curvature = -(self.m as f64 - 1.0) / 2.0;
        let mut guess = self.coeffs.clone();
        if self.s != 0.0 && target / self.s > 0.0 {
            let ratio = target / self.s;
            for (n, a) in guess.iter_mut().enumerate() {
                *a *= ratio.powi(n as i32 + 1);
            }
        }
        let omega_guess = self.omega + 0.5 * curvature * (target * target - self.s * self.s);
        match self.newton(target, guess, omega_guess) {
            Ok((b, omega, res)) => {
                self.coeffs = b.coeffs.clone();
                self.omega = omega;
                self.s = target;
                Ok((b, omega, res))
            }
            Err(Error::BranchEnd(s)) => Err(Error::BranchEnd(s)),
            Err(e) if depth >= self.cfg.max_bisections => {
                Err(Error::Continuation { s: target, reason: e.to_string() })
            }
            Err(_) => {
                let mid = 0.5 * (self.s + target);
                self.advance(mid, depth + 1)?;
                self.advance(target, depth + 1)
            }
        }
    }
}

/// Continues the m-fold branch from the Rankine vortex through the amplitudes
/// `s_list`, fixing `a_1 = s` and solving for `(a_2..a_{N_F}, Ω)` by Newton's method.
pub fn continue_branch(m: usize, s_list: &[f64], cfg: &BranchConfig) -> Result<Vec<BranchPoint>> {
    if m < 2 {
        return config(format!("symmetry order must be at least 2, got {m}"));
    }
    let n_f = cfg.effective_modes(m);
    truncation(m, n_f, cfg.m_grid)?;
    if n_f < 2 {
        return config("branch continuation needs at least two modes");
    }
    let mut cont = Continuation { m, cfg, n_f, coeffs: vec![0.0; n_f], omega: bifurcation_speed(m), s: 0.0 };
    let mut out = Vec::with_capacity(s_list.len());
    for &s in s_list {
        if !s.is_finite() {
            return domain("branch amplitudes must be finite");
        }
        let (boundary, omega, residual) = cont.advance(s, 0)?;
        let sigma_min = linearized_burbea(&boundary, omega)?.sigma_min();
        let margin = boundary.injectivity_margin();
        out.push(BranchPoint { boundary, omega, s, residual, sigma_min, margin });
    }
    Ok(out)
}

/// Least-squares fit of `Ω(s) - Ω_m = c_2 s² + c_4 s⁴`; returns `λ''(0) = 2 c_2`.
pub fn fit_curvature(points: &[BranchPoint], m: usize) -> Result<f64> {
    if points.len() < 2 {
        return config("curvature fit needs at least two branch points");
    }
    let om = bifurcation_speed(m);
    let a = DMatrix::from_fn(points.len(), 2, |i, j| points[i].s.powi(2 * (j as i32 + 1)));
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.omega - om));
    let coef = a
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(2.0 * coef[0])
}

/// Boundary quadrature for the potential `N∗1_D` of a patch with a smooth
/// counterclockwise parametrization.
#[derive(Debug, Clone)]
pub struct PatchQuadrature {
    points: Vec<Point>,
    /// Outward normal times arc-length weight.
    normals: Vec<Point>,
}

impl PatchQuadrature {
    pub fn new(m: usize, coeffs: &[f64], n_quad: usize) -> Self {
        let w = TAU / n_quad as f64;
        let (points, normals) = (0..n_quad)
            .map(|j| {
                let (z, t) = conformal_eval(m, coeffs, node_angle(j, n_quad));
                ([z.re, z.im], [w * t.im, -w * t.re])
            })
            .unzip();
        Self { points, normals }
    }

    /// `∫_D N(x - y) dy = (1/4π) ∮ (ln|y - x| - 1/2) (y - x)·ν ds`.
    pub fn potential(&self, x: Point) -> f64 {
        let mut acc = 0.0;
        for (p, nu) in self.points.iter().zip(&self.normals) {
            let d = [p[0] - x[0], p[1] - x[1]];
            let r2 = d[0] * d[0] + d[1] * d[1];
            if r2 > 0.0 {
                acc += (0.5 * r2.ln() - 0.5) * (d[0] * nu[0] + d[1] * nu[1]);
            }
        }
        acc / (4.0 * PI)
    }
}

/// Quadrature size for V-state potentials, a multiple of `m` so the nodes are m-fold symmetric.
pub fn vstate_quadrature_size(m: usize) -> usize {
    1024 * m
}

/// Relative stream function `N∗1_D - Ω|x|²/2 - c` of a V-state.
pub fn vstate_stream(m: usize, coeffs: &[f64], omega: f64, c: f64, x: Point) -> f64 {
    let quad = PatchQuadrature::new(m, coeffs, vstate_quadrature_size(m));
    quad.potential(x) - 0.5 * omega * (x[0] * x[0] + x[1] * x[1]) - c
}

/// Gradient of [`vstate_stream`] by central differences of the boundary potential.
pub fn vstate_gradient(m: usize, coeffs: &[f64], omega: f64, x: Point) -> Point {
    let quad = PatchQuadrature::new(m, coeffs, vstate_quadrature_size(m));
    quad_gradient(&quad, omega, x)
}

fn quad_gradient(quad: &PatchQuadrature, omega: f64, x: Point) -> Point {
    let d = 1e-6;
    let gx = (quad.potential([x[0] + d, x[1]]) - quad.potential([x[0] - d, x[1]])) / (2.0 * d);
    let gy = (quad.potential([x[0], x[1] + d]) - quad.potential([x[0], x[1] - d])) / (2.0 * d);
    [gx - omega * x[0], gy - omega * x[1]]
}

/// `∇Ψ` on the boundary samples from `-conj∇Ψ(Φ(w)) = ΩΦ̄ + 𝒞(Φ)Φ̄/2`.
pub fn boundary_gradient(b: &FourierBoundary, omega: f64) -> Result<Vec<Point>> {
    let kernel = CauchyKernel::new(b.samples(), b.theta_derivative())?;
    let (_, c) = map_values(&kernel, omega);
    Ok(kernel
        .phi
        .iter()
        .zip(&c)
        .map(|(z, cz)| {
            let g = -(omega * z.conj() + 0.5 * cz).conj();
            [g.re, g.im]
        })
        .collect())
}

/// Outward normal derivative `ν·∇Ψ` on the boundary samples.
pub fn boundary_flux(b: &FourierBoundary, omega: f64) -> Result<Vec<f64>> {
    let grad = boundary_gradient(b, omega)?;
    Ok(b.theta_derivative()
        .iter()
        .zip(&grad)
        .map(|(t, g)| (t.im * g[0] - t.re * g[1]) / t.norm())
        .collect())
}

/// Patch indicator by a winding-number test at every grid node.
pub fn rasterize_patch(b: &FourierBoundary, grid: Grid2D) -> ScalarField {
    let poly = b.polyline(2048);
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| if geometry::contains(&poly, grid.point_of(k)) { 1.0 } else { 0.0 })
        .collect();
    ScalarField { grid, values }
}

/// Admissible state of a converged branch point: `Ψ = N∗1_D - Ω|x|²/2 - c_m`
/// with `c_m` the boundary average, evaluated by boundary quadrature.
pub fn vstate_to_admissible(p: &BranchPoint, grid: Grid2D, tau: Option<f64>) -> Result<AdmissibleState> {
    let b = &p.boundary;
    let mg = b.injectivity_margin();
    if !(mg > 0.0) {
        return Err(Error::Geometry(format!("boundary self-intersects (margin {mg:.3e})")));
    }
    let rmax = b.max_radius();
    if grid.inscribed_radius() < 1.25 * rmax {
        return domain("grid box must contain the patch with a 25% margin");
    }
    let (m, omega) = (b.m, p.omega);
    let quad = PatchQuadrature::new(m, &b.coeffs, vstate_quadrature_size(m));
    let sigma = b.polyline(512);
    let c = sigma.iter().map(|&x| quad.potential(x) - 0.5 * omega * (x[0] * x[0] + x[1] * x[1])).sum::<f64>()
        / sigma.len() as f64;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let x = grid.point_of(k);
            quad.potential(x) - 0.5 * omega * (x[0] * x[0] + x[1] * x[1]) - c
        })
        .collect();
    let raw = ScalarField { grid, values };
    let group = SymmetryGroup { m };
    let psi = if (m == 2 || m == 4) && grid.is_centered() && grid.is_square() {
        crate::grid::symmetrize(&raw, group)?
    } else {
        raw
    };
    let flux = boundary_flux(b, omega)?;
    let gmin = flux.iter().copied().fold(f64::INFINITY, f64::min);
    if !(gmin > 0.0) {
        return Err(Error::Admissibility(format!("boundary normal derivative {gmin:.3e} is not positive")));
    }
    let psi_fn = |x: Point| quad.potential(x) - 0.5 * omega * (x[0] * x[0] + x[1] * x[1]) - c;
    let tau = match tau {
        Some(t) => t,
        None => (0.1 * gmin).min(0.5 * ridge_height(&psi_fn, &sigma, grid.inscribed_radius())),
    };
    let grad = |x: Point| quad_gradient(&quad, omega, x);
    assemble_state(StateParts {
        psi,
        omega_speed: omega,
        c,
        sigma,
        m: group,
        tau,
        boundary_grad_min: gmin,
        kind: BaseKind::VState { m, s: p.s, coeffs: b.coeffs.clone() },
        grad: &grad,
    })
}
