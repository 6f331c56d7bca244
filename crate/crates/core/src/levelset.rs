//! Level sets of `Ψ + ψ` near the patch boundary: contraction-based local
//! graph charts, chart-partitioned coarea line integrals, band membership,
//! and marching-squares contour extraction with Newton polishing.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry;
use crate::grid::{norm, Point, ScalarField};
use crate::state::AdmissibleState;

/// A scalar function with gradient whose level sets are charted.
pub trait LevelFunction: Sync {
    fn value(&self, x: Point) -> f64;
    fn grad(&self, x: Point) -> Point;
}

/// Closed-form level function from a value and a gradient closure.
pub struct Analytic<F, G> {
    pub value: F,
    pub grad: G,
}

impl<F, G> LevelFunction for Analytic<F, G>
where
    F: Fn(Point) -> f64 + Sync,
    G: Fn(Point) -> Point + Sync,
{
    fn value(&self, x: Point) -> f64 {
        (self.value)(x)
    }

    fn grad(&self, x: Point) -> Point {
        (self.grad)(x)
    }
}

/// `Ψ + ψ` for a state and an optional grid perturbation interpolated bicubically.
pub struct PerturbedStream<'a> {
    pub state: &'a AdmissibleState,
    pub perturbation: Option<&'a ScalarField>,
}

impl<'a> PerturbedStream<'a> {
    /// Rejects perturbations larger than the state's band bound.
    pub fn new(state: &'a AdmissibleState, perturbation: Option<&'a ScalarField>) -> Result<Self> {
        if let Some(p) = perturbation {
            if p.grid != state.psi.grid {
                return domain("perturbation lives on a different grid");
            }
            let sup = p.max_abs();
            if sup > state.band_bound() {
                return domain(format!(
                    "perturbation sup {sup:.3e} exceeds the band bound {:.3e}",
                    state.band_bound()
                ));
            }
        }
        Ok(Self { state, perturbation })
    }
}

impl LevelFunction for PerturbedStream<'_> {
    fn value(&self, x: Point) -> f64 {
        self.state.psi_at(x) + self.perturbation.map_or(0.0, |p| p.bicubic(x).0)
    }

    fn grad(&self, x: Point) -> Point {
        let g = self.state.grad_psi_at(x);
        match self.perturbation {
            Some(p) => {
                let d = p.bicubic(x).1;
                [g[0] + d[0], g[1] + d[1]]
            }
            None => g,
        }
    }
}

impl LevelFunction for ScalarField {
    fn value(&self, x: Point) -> f64 {
        self.bicubic(x).0
    }

    fn grad(&self, x: Point) -> Point {
        self.bicubic(x).1
    }
}

/// Graph chart `G(y) = x + (y_1, g(y))` (or with the coordinates swapped)
/// satisfying `F(G(y)) = F(x) + y_2` on `[-ℓ, ℓ] × [-span, span]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphChart {
    pub center: Point,
    /// Half-width in the tangential coordinate `y_1`.
    pub ell: f64,
    /// Half-range of the level coordinate `y_2`.
    pub span: f64,
    /// When true the graph is over the second coordinate: `G(y) = x + (g(y), y_1)`.
    pub swapped: bool,
    /// `F(x)` at the center.
    pub base_level: f64,
    /// Dominant partial derivative of `F` at the center.
    pub slope: f64,
    pub tol: f64,
    /// Samples per side of the stored 2D graph sample.
    pub n: usize,
    /// Graph values `g` on the `n × n` sample, `y_1` fastest.
    pub g: Vec<f64>,
}

impl GraphChart {
    /// Sample coordinate `y` of index `(i, j)`.
    pub fn sample_y(&self, i: usize, j: usize) -> Point {
        let t = |k: usize, half: f64| -half + 2.0 * half * k as f64 / (self.n - 1) as f64;
        [t(i, self.ell), t(j, self.span)]
    }

    fn embed(&self, y1: f64, g: f64) -> Point {
        if self.swapped {
            [self.center[0] + g, self.center[1] + y1]
        } else {
            [self.center[0] + y1, self.center[1] + g]
        }
    }

    /// Solves the pointwise fixed point `g = ℵ(g)` at `y`, warm-started from `g0`.
    pub fn solve_with(&self, f: &dyn LevelFunction, y: Point, g0: f64) -> Result<f64> {
        let mut g = g0;
        let mut prev_step = f64::INFINITY;
        for it in 0..500 {
            let p = self.embed(y[0], g);
            let next = g - (f.value(p) - self.base_level - y[1]) / self.slope;
            let step = (next - g).abs();
            if !next.is_finite() {
                break;
            }
            g = next;
            if step < self.tol {
                return Ok(g);
            }
            if it > 2 && step >= prev_step && step > 1e3 * self.tol {
                return Err(Error::Chart(format!(
                    "contraction factor {:.3} >= 1 at y = {y:?}: gradient floor too small for the chart box",
                    step / prev_step
                )));
            }
            prev_step = step;
        }
        Err(Error::Chart(format!("chart iteration did not converge at y = {y:?}")))
    }

    pub fn solve(&self, f: &dyn LevelFunction, y: Point) -> Result<f64> {
        self.solve_with(f, y, y[1] / self.slope)
    }

    /// `G(y)`.
    pub fn point(&self, f: &dyn LevelFunction, y: Point) -> Result<Point> {
        Ok(self.embed(y[0], self.solve(f, y)?))
    }

    /// Stored sample point `G(y_ij)`.
    pub fn sample_point(&self, i: usize, j: usize) -> Point {
        let y = self.sample_y(i, j);
        self.embed(y[0], self.g[j * self.n + i])
    }

    /// `max |F(G(y)) - F(x) - y_2|` over the stored samples.
    pub fn identity_residual(&self, f: &dyn LevelFunction) -> f64 {
        (0..self.n * self.n)
            .map(|k| {
                let (i, j) = (k % self.n, k / self.n);
                let y = self.sample_y(i, j);
                (f.value(self.sample_point(i, j)) - self.base_level - y[1]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `max | |∂_1 G| - |∇F∘G| |det ∇G| |` with `∇G` by central differences of step `d`.
    pub fn jacobian_residual(&self, f: &dyn LevelFunction, d: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for j in 1..self.n - 1 {
            for i in 1..self.n - 1 {
                let y = self.sample_y(i, j);
                let dg1 = (self.solve(f, [y[0] + d, y[1]])? - self.solve(f, [y[0] - d, y[1]])?) / (2.0 * d);
                let dg2 = (self.solve(f, [y[0], y[1] + d])? - self.solve(f, [y[0], y[1] - d])?) / (2.0 * d);
                let lhs = (1.0 + dg1 * dg1).sqrt();
                let rhs = norm(f.grad(self.sample_point(i, j))) * dg2.abs();
                worst = worst.max((lhs - rhs).abs());
            }
        }
        Ok(worst)
    }

    /// Tangential chart coordinate of a point.
    pub fn tangential(&self, p: Point) -> f64 {
        if self.swapped { p[1] - self.center[1] } else { p[0] - self.center[0] }
    }

    /// Dominant partial derivative of `F` at `p` in this chart's graph direction.
    pub fn normal_partial(&self, f: &dyn LevelFunction, p: Point) -> f64 {
        let g = f.grad(p);
        if self.swapped { g[0] } else { g[1] }
    }
}

/// Builds the chart at `center` by iterating the contraction on an `n × n`
/// sample of `[-ℓ, ℓ] × [-span, span]`.
pub fn local_graph_chart(
    f: &dyn LevelFunction,
    center: Point,
    ell: f64,
    span: f64,
    n: usize,
    tol: f64,
) -> Result<GraphChart> {
    if !(ell > 0.0 && span >= 0.0 && n >= 2 && tol > 0.0) {
        return domain("chart needs ell > 0, span >= 0, n >= 2 and tol > 0");
    }
    let grad = f.grad(center);
    let gn = norm(grad);
    if !(gn > 0.0) {
        return Err(Error::Chart(format!("vanishing gradient at chart center {center:?}")));
    }
    let swapped = grad[0].abs() > grad[1].abs();
    let slope = if swapped { grad[0] } else { grad[1] };
    let mut chart = GraphChart {
        center,
        ell,
        span,
        swapped,
        base_level: f.value(center),
        slope,
        tol,
        n,
        g: Vec::new(),
    };
    let g: Result<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|k| chart.solve(f, chart.sample_y(k % n, k / n)))
        .collect();
    chart.g = g?;
    Ok(chart)
}

/// Chart centers on a boundary polyline: `count` vertices equally spaced in index.
pub fn chart_centers(sigma: &[Point], count: usize) -> Vec<Point> {
    (0..count).map(|k| sigma[k * sigma.len() / count]).collect()
}

/// Chart half-width `0.2 ρ_min` from the smallest discrete radius of curvature
/// of a closed polyline; a graph over the dominant axis stays single-valued
/// for tangential offsets up to about `0.29 ρ`.
pub fn default_chart_width(sigma: &[Point]) -> f64 {
    let n = sigma.len();
    let mut rho_min = f64::INFINITY;
    for i in 0..n {
        let (a, b, c) = (sigma[(i + n - 1) % n], sigma[i], sigma[(i + 1) % n]);
        let ab = norm([b[0] - a[0], b[1] - a[1]]);
        let bc = norm([c[0] - b[0], c[1] - b[1]]);
        let ca = norm([a[0] - c[0], a[1] - c[1]]);
        let cross = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
        if cross > 0.0 {
            rho_min = rho_min.min(ab * bc * ca / (2.0 * cross));
        }
    }
    0.2 * rho_min
}

/// Charts covering a level-set band, with smooth bump partition of unity.
#[derive(Debug, Clone)]
pub struct ChartCover {
    pub charts: Vec<GraphChart>,
    /// Support radius of each bump; every band point lies within it of some center.
    pub radius: f64,
}

fn bump(r: f64, radius: f64) -> f64 {
    let t = r / radius;
    if t >= 1.0 { 0.0 } else { (-1.0 / (1.0 - t * t)).exp() }
}

impl ChartCover {
    /// Cover of `Σ` by charts with tangential half-width `ell`, centers spaced
    /// so that consecutive centers are at most `ell / 2` apart.
    pub fn new(f: &dyn LevelFunction, sigma: &[Point], ell: f64, span: f64, tol: f64) -> Result<Self> {
        let len = geometry::closed_length(sigma);
        let count = ((2.0 * len / ell).ceil() as usize).max(4);
        let charts = chart_centers(sigma, count)
            .into_iter()
            .map(|c| local_graph_chart(f, c, ell, span, 3, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { charts, radius: 0.9 * ell })
    }

    /// Partition-of-unity weight of chart `i` at `p`; `None` outside the cover.
    pub fn weight(&self, i: usize, p: Point) -> Option<f64> {
        let total: f64 = self
            .charts
            .iter()
            .map(|c| bump(norm([p[0] - c.center[0], p[1] - c.center[1]]), self.radius))
            .sum();
        if total > 0.0 {
            let c = &self.charts[i];
            Some(bump(norm([p[0] - c.center[0], p[1] - c.center[1]]), self.radius) / total)
        } else {
            None
        }
    }

    /// Whether `p` lies in the union of the bump supports.
    pub fn covers(&self, p: Point) -> bool {
        self.charts.iter().any(|c| norm([p[0] - c.center[0], p[1] - c.center[1]]) < self.radius)
    }
}

/// `∫_{F = level} g / |∇F| dH¹` by chart-partitioned trapezoid quadrature with
/// `n_quad` nodes per chart.
pub fn coarea_line_integral(
    f: &dyn LevelFunction,
    cover: &ChartCover,
    level: f64,
    integrand: &(dyn Fn(Point) -> f64 + Sync),
    n_quad: usize,
) -> Result<f64> {
    for c in &cover.charts {
        if (level - c.base_level).abs() > c.span {
            return domain(format!("level {level:.3e} leaves the chart band at {:?}", c.center));
        }
    }
    let rad = cover.radius;
    let parts: Vec<Result<f64>> = (0..cover.charts.len())
        .into_par_iter()
        .map(|i| {
            let c = &cover.charts[i];
            let y2 = level - c.base_level;
            let dy = 2.0 * rad / n_quad as f64;
            let mut acc = 0.0;
            let mut g = y2 / c.slope;
            for k in 1..n_quad {
                let y1 = -rad + k as f64 * dy;
                g = c.solve_with(f, [y1, y2], g)?;
                let p = c.embed(y1, g);
                let Some(w) = cover.weight(i, p) else { continue };
                if w == 0.0 {
                    continue;
                }
                acc += w * integrand(p) / c.normal_partial(f, p).abs();
            }
            Ok(acc * dy)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Grid nodes of the state's band with `|Ψ + ψ| ≤ ε`, checked against the chart cover.
pub fn band_points(
    state: &AdmissibleState,
    perturbation: Option<&ScalarField>,
    eps: f64,
    cover: &ChartCover,
) -> Result<Vec<usize>> {
    if eps > state.tau {
        return domain(format!("ε = {eps:.3e} exceeds the band half-width {:.3e}", state.tau));
    }
    let mut out = Vec::new();
    for &k in &state.band {
        let v = state.psi.values[k] + perturbation.map_or(0.0, |p| p.values[k]);
        if v.abs() <= eps {
            let x = state.psi.grid.point_of(k);
            if !cover.covers(x) {
                return Err(Error::Chart(format!("band point {x:?} lies outside the chart cover")));
            }
            out.push(k);
        }
    }
    Ok(out)
}

/// Closed level curves of a grid field inside an optional index window
/// `(i0, j0, i1, j1)`, by marching squares with each vertex polished onto the
/// bicubic interpolant.
pub fn extract_level_curve(
    field: &ScalarField,
    level: f64,
    window: Option<(usize, usize, usize, usize)>,
) -> Result<Vec<Vec<Point>>> {
    let g = field.grid;
    let (i0, j0, i1, j1) = window.unwrap_or((0, 0, g.nx - 1, g.ny - 1));
    if !(i0 < i1 && j0 < j1 && i1 < g.nx && j1 < g.ny) {
        return domain("invalid extraction window");
    }
    let val = |i: usize, j: usize| field.at(i, j) - level;
    // Edge ids: horizontal edge (i,j)-(i+1,j) is 2*idx, vertical (i,j)-(i,j+1) is 2*idx+1.
    let h_edge = |i: usize, j: usize| 2 * g.index(i, j);
    let v_edge = |i: usize, j: usize| 2 * g.index(i, j) + 1;
    let crossing = |e: usize| -> Point {
        let k = e / 2;
        let (i, j) = g.ij(k);
        let (a, b, q) = if e.is_multiple_of(2) {
            (val(i, j), val(i + 1, j), g.point(i + 1, j))
        } else {
            (val(i, j), val(i, j + 1), g.point(i, j + 1))
        };
        let p = g.point(i, j);
        let t = a / (a - b);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut link = |a: usize, b: usize| {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    };
    let positive = |v: f64| v > 0.0;
    for j in j0..j1 {
        for i in i0..i1 {
            let v = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            let s: Vec<bool> = v.iter().map(|&x| positive(x)).collect();
            // Cell edges: bottom, right, top, left.
            let edges = [h_edge(i, j), v_edge(i + 1, j), h_edge(i, j + 1), v_edge(i, j)];
            let cut: Vec<usize> = (0..4).filter(|&e| s[e] != s[(e + 1) % 4]).collect();
            match cut.len() {
                0 => {}
                2 => link(edges[cut[0]], edges[cut[1]]),
                4 => {
                    let center = 0.25 * v.iter().sum::<f64>();
                    if positive(center) == s[0] {
                        link(edges[0], edges[1]);
                        link(edges[2], edges[3]);
                    } else {
                        link(edges[3], edges[0]);
                        link(edges[1], edges[2]);
                    }
                }
                _ => unreachable!("a cell has an even number of sign changes"),
            }
        }
    }
    let mut seen: HashMap<usize, bool> = HashMap::new();
    let mut keys: Vec<usize> = adj.keys().copied().collect();
    keys.sort_unstable();
    let mut curves = Vec::new();
    for &start in &keys {
        if seen.contains_key(&start) {
            continue;
        }
        if adj[&start].len() != 2 {
            return Err(Error::Topology("level curve leaves the extraction window".into()));
        }
        let mut chain = vec![start];
        seen.insert(start, true);
        let mut prev = start;
        let mut cur = adj[&start][0];
        while cur != start {
            let nb = &adj[&cur];
            if nb.len() != 2 {
                return Err(Error::Topology("level curve leaves the extraction window".into()));
            }
            seen.insert(cur, true);
            chain.push(cur);
            let next = if nb[0] == prev { nb[1] } else { nb[0] };
            prev = cur;
            cur = next;
        }
        let raw: Vec<Point> = chain.iter().map(|&e| crossing(e)).collect();
        let mut poly: Vec<Point> = raw.par_iter().map(|&p| polish(field, level, p)).collect::<Result<_>>()?;
        if geometry::signed_area(&poly) < 0.0 {
            poly.reverse();
        }
        curves.push(poly);
    }
    curves.sort_by(|a, b| geometry::signed_area(b).total_cmp(&geometry::signed_area(a)));
    Ok(curves)
}

/// Newton steps along the gradient of the bicubic interpolant.
fn polish(field: &ScalarField, level: f64, mut p: Point) -> Result<Point> {
    for _ in 0..50 {
        let (v, gr) = field.bicubic(p);
        let r = v - level;
        if r.abs() < 1e-12 {
            return Ok(p);
        }
        let g2 = gr[0] * gr[0] + gr[1] * gr[1];
        if !(g2 > 0.0) {
            break;
        }
        p = [p[0] - r * gr[0] / g2, p[1] - r * gr[1] / g2];
    }
    let r = field.bicubic(p).0 - level;
    if r.abs() < 1e-10 {
        Ok(p)
    } else {
        Err(Error::NoConvergence(format!("contour polishing stalled at residual {r:.2e}")))
    }
}

/// Index window covering the bounding box of `pts` grown by `margin`, clipped to the grid.
pub fn window_around(grid: crate::grid::Grid2D, pts: &[Point], margin: f64) -> (usize, usize, usize, usize) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d] - margin);
            hi[d] = hi[d].max(p[d] + margin);
        }
    }
    let (fx0, fy0) = grid.frac(lo);
    let (fx1, fy1) = grid.frac(hi);
    let clip = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    (
        clip(fx0.floor(), grid.nx) as usize,
        clip(fy0.floor(), grid.ny) as usize,
        clip(fx1.ceil(), grid.nx) as usize,
        clip(fy1.ceil(), grid.ny) as usize,
    )
}

/// Level curves for several levels; entry `k` holds the curves of `levels[k]`.
pub fn extract_level_sets(
    field: &ScalarField,
    levels: &[f64],
    window: Option<(usize, usize, usize, usize)>,
) -> Result<Vec<Vec<Vec<Point>>>> {
    levels.iter().map(|&l| extract_level_curve(field, l, window)).collect()
}
