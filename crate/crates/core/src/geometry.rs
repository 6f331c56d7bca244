//! Closed polylines: length, area, winding numbers and distances.

use crate::grid::{dot, norm, sub, Point};

/// Perimeter of a closed polyline (last vertex joins the first).
pub fn closed_length(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| norm(sub(poly[(i + 1) % n], poly[i]))).sum()
}

/// Signed area; positive for counterclockwise orientation.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

/// Winding number of a closed polyline around `p`.
pub fn winding_number(poly: &[Point], p: Point) -> i32 {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

pub fn contains(poly: &[Point], p: Point) -> bool {
    winding_number(poly, p) != 0
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let l2 = dot(ab, ab);
    let t = if l2 > 0.0 { (dot(ap, ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

/// Distance from `p` to a closed polyline.
pub fn polyline_distance(poly: &[Point], p: Point) -> f64 {
    let n = poly.len();
    (0..n).map(|i| segment_distance(p, poly[i], poly[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Minimum distance between the vertex set of `a` and the polyline `b`.
pub fn curve_distance(a: &[Point], b: &[Point]) -> f64 {
    a.iter().map(|&p| polyline_distance(b, p)).fold(f64::INFINITY, f64::min)
}

/// Symmetric Hausdorff distance between two closed polylines, measured from vertices.
pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let ab = a.iter().map(|&p| polyline_distance(b, p)).fold(0.0, f64::max);
    let ba = b.iter().map(|&p| polyline_distance(a, p)).fold(0.0, f64::max);
    ab.max(ba)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let orient = |p: Point, q: Point, r: Point| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// True when no two non-adjacent edges of the closed polyline cross.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}
