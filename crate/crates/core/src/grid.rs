//! Uniform Cartesian grids, scalar fields on them, interpolation and
//! dihedral symmetrization.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

pub type Point = [f64; 2];

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Rotation by a quarter turn: (v1, v2) -> (-v2, v1).
#[inline]
pub fn perp(a: Point) -> Point {
    [-a[1], a[0]]
}

/// Uniform grid with `nx * ny` nodes. Node `(i, j)` sits at
/// `origin + (i h, j h)`; storage is row-major with `i` fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub origin: Point,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(origin: Point, h: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return config(format!("grid spacing must be positive, got {h}"));
        }
        if nx < 2 || ny < 2 {
            return config(format!("grid needs at least 2x2 nodes, got {nx}x{ny}"));
        }
        Ok(Self { origin, h, nx, ny })
    }

    /// Square grid with `n` nodes per side covering `[-half_width, half_width]^2`.
    pub fn centered(n: usize, half_width: f64) -> Result<Self> {
        if n < 2 {
            return config("grid needs at least 2 nodes per side");
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        Self::new([-half_width, -half_width], h, n, n)
    }

    /// Square centered grid with prescribed spacing, just covering `half_width`.
    pub fn centered_with_spacing(h: f64, half_width: f64) -> Result<Self> {
        let half = (half_width / h).ceil() as usize;
        let n = 2 * half + 1;
        Self::new([-(half as f64) * h, -(half as f64) * h], h, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn center(&self) -> Point {
        let cx = self.origin[0] + 0.5 * (self.nx - 1) as f64 * self.h;
        let cy = self.origin[1] + 0.5 * (self.ny - 1) as f64 * self.h;
        let snap = |c: f64| if c.abs() < 1e-9 * self.h { 0.0 } else { c };
        [snap(cx), snap(cy)]
    }

    /// True when the box is centered at the origin (to rounding).
    pub fn is_centered(&self) -> bool {
        self.center() == [0.0, 0.0]
    }

    pub fn is_square(&self) -> bool {
        self.nx == self.ny
    }

    /// Abscissa of column `i`. Centered grids produce exactly mirrored values.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.center()[0] + (i as f64 - 0.5 * (self.nx - 1) as f64) * self.h
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.center()[1] + (j as f64 - 0.5 * (self.ny - 1) as f64) * self.h
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> Point {
        [self.x(i), self.y(j)]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn point_of(&self, k: usize) -> Point {
        let (i, j) = self.ij(k);
        self.point(i, j)
    }

    /// Fractional node coordinates of a point.
    #[inline]
    pub fn frac(&self, p: Point) -> (f64, f64) {
        (
            (p[0] - self.origin[0]) / self.h,
            (p[1] - self.origin[1]) / self.h,
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        let (fx, fy) = self.frac(p);
        let tol = 1e-9;
        fx >= -tol && fy >= -tol && fx <= (self.nx - 1) as f64 + tol && fy <= (self.ny - 1) as f64 + tol
    }

    /// Largest radius of a disk centered at 0 that fits in the box.
    pub fn inscribed_radius(&self) -> f64 {
        let c = self.center();
        let hx = 0.5 * (self.nx - 1) as f64 * self.h;
        let hy = 0.5 * (self.ny - 1) as f64 * self.h;
        (hx - c[0].abs()).min(hy - c[1].abs())
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |k| self.point_of(k))
    }

    /// Four-neighbour indices of node `k` that lie inside the grid.
    pub fn neighbors4(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(k);
        let (nx, ny) = (self.nx, self.ny);
        let cand = [
            (i > 0).then(|| k - 1),
            (i + 1 < nx).then(|| k + 1),
            (j > 0).then(|| k - nx),
            (j + 1 < ny).then(|| k + nx),
        ];
        cand.into_iter().flatten()
    }
}

/// Real values on the nodes of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return config(format!("field has {} values, grid has {} nodes", values.len(), grid.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return config("field contains non-finite values");
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Point) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "fields on different grids");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values }
    }

    /// Grid integral by the midpoint (node) rule.
    pub fn integral(&self) -> f64 {
        self.grid.h * self.grid.h * self.values.iter().sum::<f64>()
    }

    /// Bilinear interpolation; points outside the box are clamped to it.
    pub fn bilinear(&self, p: Point) -> f64 {
        let g = &self.grid;
        let (fx, fy) = g.frac(p);
        let fx = fx.clamp(0.0, (g.nx - 1) as f64);
        let fy = fy.clamp(0.0, (g.ny - 1) as f64);
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }

    /// Catmull-Rom bicubic interpolation returning value and gradient.
    /// The interpolant is C¹ across cells.
    pub fn bicubic(&self, p: Point) -> (f64, Point) {
        let g = &self.grid;
        let (fx, fy) = g.frac(p);
        let fx = fx.clamp(0.0, (g.nx - 1) as f64);
        let fy = fy.clamp(0.0, (g.ny - 1) as f64);
        let i = (fx.floor() as isize).min(g.nx as isize - 2);
        let j = (fy.floor() as isize).min(g.ny as isize - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let (wx, dwx) = catmull_rom(tx);
        let (wy, dwy) = catmull_rom(ty);
        let clampi = |a: isize, n: usize| a.clamp(0, n as isize - 1) as usize;
        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for b in 0..4 {
            let jj = clampi(j - 1 + b as isize, g.ny);
            for a in 0..4 {
                let ii = clampi(i - 1 + a as isize, g.nx);
                let f = self.at(ii, jj);
                v += wx[a] * wy[b] * f;
                gx += dwx[a] * wy[b] * f;
                gy += wx[a] * dwy[b] * f;
            }
        }
        (v, [gx / g.h, gy / g.h])
    }

    /// Centered-difference gradient (one-sided on the box edge).
    pub fn gradient(&self) -> (ScalarField, ScalarField) {
        let g = self.grid;
        let mut gx = ScalarField::zeros(g);
        let mut gy = ScalarField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.index(i, j);
                gx.values[k] = if i == 0 {
                    (self.at(1, j) - self.at(0, j)) / g.h
                } else if i == g.nx - 1 {
                    (self.at(i, j) - self.at(i - 1, j)) / g.h
                } else {
                    (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * g.h)
                };
                gy.values[k] = if j == 0 {
                    (self.at(i, 1) - self.at(i, 0)) / g.h
                } else if j == g.ny - 1 {
                    (self.at(i, j) - self.at(i, j - 1)) / g.h
                } else {
                    (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * g.h)
                };
            }
        }
        (gx, gy)
    }

    /// Five-point Laplacian; zero on the outermost ring.
    pub fn laplacian(&self) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        let h2 = g.h * g.h;
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                out.values[g.index(i, j)] = (self.at(i + 1, j) + self.at(i - 1, j) + self.at(i, j + 1)
                    + self.at(i, j - 1)
                    - 4.0 * self.at(i, j))
                    / h2;
            }
        }
        out
    }
}

/// Catmull-Rom weights and their derivatives at offset `t` in [0, 1].
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let d = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, d)
}

/// The dihedral group of order `2m`: rotations by multiples of `2π/m` and
/// their compositions with the reflection `x2 -> -x2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryGroup {
    pub m: usize,
}

impl SymmetryGroup {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return config("symmetry order must be positive");
        }
        Ok(Self { m })
    }

    pub fn order(&self) -> usize {
        2 * self.m
    }

    /// Linear maps of the group as 2x2 matrices `[a, b, c, d]` acting by
    /// `(x, y) -> (a x + b y, c x + d y)`.
    pub fn elements(&self) -> Vec<[f64; 4]> {
        let mut out = Vec::with_capacity(self.order());
        for k in 0..self.m {
            let (c, s) = exact_cos_sin(k, self.m);
            out.push([c, -s, s, c]);
            out.push([c, s, s, -c]);
        }
        out
    }
}

/// cos and sin of `2πk/m`, exact at multiples of a quarter turn.
fn exact_cos_sin(k: usize, m: usize) -> (f64, f64) {
    if (4 * k).is_multiple_of(m) {
        match (4 * k / m) % 4 {
            0 => return (1.0, 0.0),
            1 => return (0.0, 1.0),
            2 => return (-1.0, 0.0),
            _ => return (0.0, -1.0),
        }
    }
    let a = std::f64::consts::TAU * k as f64 / m as f64;
    (a.cos(), a.sin())
}

#[inline]
fn apply(g: &[f64; 4], p: Point) -> Point {
    [g[0] * p[0] + g[1] * p[1], g[2] * p[0] + g[3] * p[1]]
}

/// Average of a field over the dihedral group of order `2m`.
///
/// Group images landing on a node are read exactly; others use bilinear
/// interpolation. Images leaving the box (possible when the square box is
/// not invariant, e.g. `m = 3`) are left out of the average.
pub fn symmetrize(field: &ScalarField, group: SymmetryGroup) -> Result<ScalarField> {
    let g = field.grid;
    if !g.is_centered() {
        return config("symmetrization needs a grid centered at the origin");
    }
    let elems = group.elements();
    let snap = 1e-9;
    let values = (0..g.len())
        .map(|k| {
            let p = g.point_of(k);
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for e in &elems {
                let q = apply(e, p);
                if !g.contains(q) {
                    continue;
                }
                let (fx, fy) = g.frac(q);
                let (rx, ry) = (fx.round(), fy.round());
                if (fx - rx).abs() < snap && (fy - ry).abs() < snap {
                    sum += field.at(rx as usize, ry as usize);
                } else {
                    sum += field.bilinear(q);
                }
                cnt += 1;
            }
            sum / cnt as f64
        })
        .collect();
    Ok(ScalarField { grid: g, values })
}

/// Sup-norm distance between a field and its symmetrization.
pub fn symmetry_residual(field: &ScalarField, group: SymmetryGroup) -> Result<f64> {
    let s = symmetrize(field, group)?;
    Ok(field.values.iter().zip(&s.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// True when every group image of every node is again a node, so that
/// symmetrization involves no interpolation.
pub fn group_maps_grid(grid: &Grid2D, group: SymmetryGroup) -> bool {
    if !grid.is_centered() || !grid.is_square() {
        return false;
    }
    matches!(group.m, 1 | 2 | 4)
}
