//! Green kernels of the plane and of the disk `B(0, qoppa^{-1/2})`, their
//! Biot–Savart velocities, and grid convolution with a log-corrected
//! self-cell weight.
//!
//! ```text
//! N_q(x, y) = (1/4π) log|x - y|² - (1/4π) log(1 - 2q x·y + q²|x|²|y|²)
//! ```

use std::f64::consts::{FRAC_1_PI, PI};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::grid::{dot, norm, perp, sub, Grid2D, Point, ScalarField};

const INV_4PI: f64 = 0.25 * FRAC_1_PI;
const INV_2PI: f64 = 0.5 * FRAC_1_PI;

/// Disk parameter `qoppa` in `[0, 1)`; the domain radius is `qoppa^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParam {
    pub qoppa: f64,
}

impl KernelParam {
    pub const FREE: KernelParam = KernelParam { qoppa: 0.0 };

    pub fn new(qoppa: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&qoppa) {
            return config(format!("qoppa must lie in [0, 1), got {qoppa}"));
        }
        Ok(Self { qoppa })
    }

    /// Trapping disk of radius `r > 1`.
    pub fn from_radius(r: f64) -> Result<Self> {
        Self::new(1.0 / (r * r))
    }

    /// Domain radius, infinite for the free-space kernel.
    pub fn radius(&self) -> f64 {
        if self.qoppa == 0.0 {
            f64::INFINITY
        } else {
            self.qoppa.powf(-0.5)
        }
    }

    pub fn is_free(&self) -> bool {
        self.qoppa == 0.0
    }

    /// Value of every `N_q[f]` on the boundary circle per unit mass of `f`.
    pub fn boundary_constant(&self) -> f64 {
        -self.qoppa.ln() * INV_4PI
    }
}

/// Image part `-(1/4π) log(1 - 2q x·y + q²|x|²|y|²)`, without checks.
#[inline]
pub(crate) fn image_term(x: Point, y: Point, q: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    let arg = 1.0 - 2.0 * q * dot(x, y) + q * q * dot(x, x) * dot(y, y);
    -INV_4PI * arg.ln()
}

/// Newtonian potential (`q = 0`) or disk Green function (`q > 0`).
pub fn eval_newtonian_kernel(x: Point, y: Point, kp: KernelParam) -> Result<f64> {
    let d = sub(x, y);
    let r2 = dot(d, d);
    if r2 == 0.0 {
        return domain("kernel evaluated at coincident points");
    }
    let q = kp.qoppa;
    let arg = 1.0 - 2.0 * q * dot(x, y) + q * q * dot(x, x) * dot(y, y);
    if arg <= 0.0 {
        return domain("image-point argument is not positive");
    }
    Ok(INV_4PI * r2.ln() - INV_4PI * arg.ln())
}

/// Biot–Savart kernel `K_R(x, y)`; `r = f64::INFINITY` gives the free-space one.
pub fn eval_biot_savart(x: Point, y: Point, r: f64) -> Result<Point> {
    let d = sub(x, y);
    let r2 = dot(d, d);
    if r2 == 0.0 {
        return domain("Biot-Savart kernel evaluated at coincident points");
    }
    let free = perp(d);
    let mut out = [INV_2PI * free[0] / r2, INV_2PI * free[1] / r2];
    if r.is_finite() {
        if norm(x) >= r || norm(y) >= r {
            return domain(format!("points must lie inside the disk of radius {r}"));
        }
        let rr = r * r;
        let yy = dot(y, y);
        let num = perp([rr * y[0] - yy * x[0], rr * y[1] - yy * x[1]]);
        let den = rr * rr - 2.0 * rr * dot(x, y) + dot(x, x) * yy;
        out[0] += INV_2PI * num[0] / den;
        out[1] += INV_2PI * num[1] / den;
    }
    Ok(out)
}

/// `∫_{[-1/2,1/2]²} log|y| dy`, computed by adaptive Simpson quadrature of
/// the polar form `∫ R(θ)²/2 (log R(θ) - 1/2) dθ` over the square.
pub fn self_cell_constant() -> f64 {
    static C0: OnceLock<f64> = OnceLock::new();
    *C0.get_or_init(|| {
        let f = |t: f64| {
            let r = 0.5 / t.cos();
            0.5 * r * r * (r.ln() - 0.5)
        };
        8.0 * adaptive_simpson(&f, 0.0, 0.25 * PI, 1e-16, 40)
    })
}

pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Quadrature weight of the singular cell: `(1/2π) h² (log h + c0)`.
pub fn self_cell_weight(h: f64) -> f64 {
    INV_2PI * h * h * (h.ln() + self_cell_constant())
}

/// Checks the support conditions of a density for convolution.
pub fn check_support(density: &ScalarField, kp: KernelParam) -> Result<()> {
    let g = density.grid;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let v = density.at(i, j);
            if v == 0.0 {
                continue;
            }
            if i == 0 || j == 0 || i == g.nx - 1 || j == g.ny - 1 {
                return config("density support touches the grid box edge");
            }
            if !kp.is_free() && norm(g.point(i, j)) >= 0.5 * kp.radius() {
                return config("density support leaves the half-radius disk");
            }
        }
    }
    Ok(())
}

/// Direct summation of the log-corrected midpoint rule at all grid nodes.
pub fn convolve_density_direct(kp: KernelParam, density: &ScalarField) -> Result<ScalarField> {
    check_support(density, kp)?;
    let g = density.grid;
    let sources = sources_of(density);
    let h2 = g.h * g.h;
    let selfw = self_cell_weight(g.h);
    let q = kp.qoppa;
    let values = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let x = g.point_of(k);
            let mut s = 0.0;
            for &(kk, y, f) in &sources {
                if kk == k {
                    s += selfw * f + h2 * image_term(x, y, q) * f;
                } else {
                    let d = sub(x, y);
                    s += h2 * f * (INV_4PI * dot(d, d).ln() + image_term(x, y, q));
                }
            }
            s
        })
        .collect();
    Ok(ScalarField { grid: g, values })
}

fn sources_of(density: &ScalarField) -> Vec<(usize, Point, f64)> {
    let g = density.grid;
    density
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, &v)| (k, g.point_of(k), v))
        .collect()
}

/// Convolution with the same discrete weights at arbitrary target points.
/// Targets coinciding with a source node receive the self-cell weight.
pub fn convolve_at_points(kp: KernelParam, density: &ScalarField, targets: &[Point]) -> Result<Vec<f64>> {
    check_support(density, kp)?;
    let g = density.grid;
    let sources = sources_of(density);
    let h2 = g.h * g.h;
    let selfw = self_cell_weight(g.h);
    let q = kp.qoppa;
    Ok(targets
        .par_iter()
        .map(|&x| {
            let mut s = 0.0;
            for &(_, y, f) in &sources {
                let d = sub(x, y);
                let r2 = dot(d, d);
                let free = if r2 < 1e-24 * h2 { selfw / h2 } else { INV_4PI * r2.ln() };
                s += h2 * f * (free + image_term(x, y, q));
            }
            s
        })
        .collect())
}

/// Smallest length `>= n` with no prime factor above 5, which keeps the
/// transforms on the fast radix paths.
fn fft_size(n: usize) -> usize {
    (n..)
        .find(|&k| {
            let mut k = k;
            for p in [2, 3, 5] {
                while k % p == 0 {
                    k /= p;
                }
            }
            k == 1
        })
        .unwrap_or(n)
}

/// Convolution on a fixed grid using zero-padded FFTs for the translation
/// invariant part and a moment expansion for the disk image term.
/// Produces the same discrete sum as [`convolve_density_direct`].
pub struct Convolver {
    grid: Grid2D,
    px: usize,
    py: usize,
    kernel_hat: Vec<Complex64>,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("grid", &self.grid).field("px", &self.px).field("py", &self.py).finish()
    }
}

impl Convolver {
    pub fn new(grid: Grid2D) -> Self {
        let px = fft_size(2 * grid.nx);
        let py = fft_size(2 * grid.ny);
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(px);
        let fwd_y = planner.plan_fft_forward(py);
        let inv_x = planner.plan_fft_inverse(px);
        let inv_y = planner.plan_fft_inverse(py);
        let h = grid.h;
        let h2 = h * h;
        let mut kern = vec![Complex64::new(0.0, 0.0); px * py];
        for b in 0..py {
            let oy = if b < py / 2 { b as f64 } else { b as f64 - py as f64 };
            for a in 0..px {
                let ox = if a < px / 2 { a as f64 } else { a as f64 - px as f64 };
                let v = if a == 0 && b == 0 {
                    self_cell_weight(h)
                } else {
                    h2 * INV_4PI * (h2 * (ox * ox + oy * oy)).ln()
                };
                kern[b * px + a] = Complex64::new(v, 0.0);
            }
        }
        let mut c = Self { grid, px, py, kernel_hat: Vec::new(), fwd_x, fwd_y, inv_x, inv_y };
        c.fft2(&mut kern, false);
        c.kernel_hat = kern;
        c
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let (px, py) = (self.px, self.py);
        let (fx, fy) = if inverse { (&self.inv_x, &self.inv_y) } else { (&self.fwd_x, &self.fwd_y) };
        for row in data.chunks_mut(px) {
            fx.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); py];
        for a in 0..px {
            for b in 0..py {
                col[b] = data[b * px + a];
            }
            fy.process(&mut col);
            for b in 0..py {
                data[b * px + a] = col[b];
            }
        }
    }

    /// Free-space part of the discrete convolution on the whole grid.
    fn free_part(&self, values: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let (px, py) = (self.px, self.py);
        let mut buf = vec![Complex64::new(0.0, 0.0); px * py];
        for j in 0..g.ny {
            for i in 0..g.nx {
                buf[j * px + i] = Complex64::new(values[g.index(i, j)], 0.0);
            }
        }
        self.fft2(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft2(&mut buf, true);
        let scale = 1.0 / (px * py) as f64;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                out[g.index(i, j)] = buf[j * px + i].re * scale;
            }
        }
        out
    }

    /// Full-grid convolution `N_q[f]` of a density on this grid.
    pub fn convolve(&self, kp: KernelParam, density: &ScalarField) -> Result<ScalarField> {
        if density.grid != self.grid {
            return config("density grid differs from convolver grid");
        }
        check_support(density, kp)?;
        let mut values = self.free_part(&density.values);
        if !kp.is_free() {
            let img = ImageMoments::new(kp, density)?;
            for (k, v) in values.iter_mut().enumerate() {
                *v += img.eval(self.grid.point_of(k));
            }
        }
        Ok(ScalarField { grid: self.grid, values })
    }

    /// Convolution without the support checks, for internal solver loops
    /// whose densities are known to be admissible.
    pub(crate) fn convolve_unchecked(&self, kp: KernelParam, values: &[f64]) -> Vec<f64> {
        let mut out = self.free_part(values);
        if !kp.is_free() {
            let field = ScalarField { grid: self.grid, values: values.to_vec() };
            let img = ImageMoments::build(kp, &field);
            for (k, v) in out.iter_mut().enumerate() {
                *v += img.eval(self.grid.point_of(k));
            }
        }
        out
    }
}

/// Moments `M_n = Σ h² f_j conj(y_j)^n` of a density, evaluating the image
/// part `(1/2π) Re Σ (q x)^n M_n / n` at any target.
pub struct ImageMoments {
    q: f64,
    moments: Vec<Complex64>,
}

impl ImageMoments {
    pub fn new(kp: KernelParam, density: &ScalarField) -> Result<Self> {
        check_support(density, kp)?;
        Ok(Self::build(kp, density))
    }

    fn build(kp: KernelParam, density: &ScalarField) -> Self {
        let g = density.grid;
        let q = kp.qoppa;
        let h2 = g.h * g.h;
        let mut rmax: f64 = 0.0;
        for (k, v) in density.values.iter().enumerate() {
            if *v != 0.0 {
                rmax = rmax.max(norm(g.point_of(k)));
            }
        }
        // |q x conj(y)| <= q R rmax <= 1/2 inside the disk; sized for 1e-17.
        let ratio = (q.sqrt() * rmax).max(1e-300);
        let nterms = if q == 0.0 { 0 } else { ((-40.0) / ratio.ln()).ceil().clamp(1.0, 200.0) as usize };
        let mut moments = vec![Complex64::new(0.0, 0.0); nterms + 1];
        for (k, &v) in density.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let p = g.point_of(k);
            let yc = Complex64::new(p[0], -p[1]);
            let mut pw = Complex64::new(h2 * v, 0.0);
            for m in moments.iter_mut().skip(1) {
                pw *= yc;
                *m += pw;
            }
        }
        Self { q, moments }
    }

    pub fn eval(&self, x: Point) -> f64 {
        let qx = Complex64::new(self.q * x[0], self.q * x[1]);
        let mut pw = Complex64::new(1.0, 0.0);
        let mut s = 0.0;
        for (n, m) in self.moments.iter().enumerate().skip(1) {
            pw *= qx;
            s += (pw * m).re / n as f64;
        }
        INV_2PI * s
    }
}
