mod common;

use std::f64::consts::TAU;

use vpatch::geometry::{closed_length, hausdorff};
use vpatch::kirchhoff::make_kirchhoff_state;
use vpatch::levelset::*;
use vpatch::{AdmissibleState, Grid2D, Point, ScalarField};

use common::polar_area;

fn ellipse(b: f64, n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let t = TAU * k as f64 / n as f64;
            [t.cos(), b * t.sin()]
        })
        .collect()
}

fn kirchhoff(h: f64) -> AdmissibleState {
    make_kirchhoff_state(1.0, Grid2D::centered_with_spacing(h, 1.5).unwrap(), None).unwrap()
}

#[test]
fn kirchhoff_charts_satisfy_the_identity() {
    let st = kirchhoff(1.0 / 32.0);
    let f = PerturbedStream::new(&st, None).unwrap();
    let ell = default_chart_width(&st.sigma);
    for c in chart_centers(&st.sigma, 12) {
        // An even sample count keeps the difference stencils off y_2 = 0,
        // where Ψ has a jump in its second derivative.
        let chart = local_graph_chart(&f, c, ell, st.tau, 6, 1e-15).unwrap();
        assert!(chart.identity_residual(&f) < 1e-9);
        assert!(chart.jacobian_residual(&f, 1e-6).unwrap() < 1e-6);
    }
}

#[test]
fn overlapping_charts_agree() {
    let st = kirchhoff(1.0 / 32.0);
    let f = PerturbedStream::new(&st, None).unwrap();
    let cover = ChartCover::new(&f, &st.sigma, default_chart_width(&st.sigma), st.tau, 1e-15).unwrap();
    let n = cover.charts.len();
    let level = 0.3 * st.tau;
    for i in 0..n {
        let (a, b) = (&cover.charts[i], &cover.charts[(i + 1) % n]);
        // A point of chart a between the two centers, re-expressed in chart b.
        let mid = [(a.center[0] + b.center[0]) / 2.0, (a.center[1] + b.center[1]) / 2.0];
        let p = a.point(&f, [a.tangential(mid), level - a.base_level]).unwrap();
        let q = b.point(&f, [b.tangential(p), level - b.base_level]).unwrap();
        assert!(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() < 1e-8);
    }
}

#[test]
fn contraction_failure_is_reported() {
    let f = Analytic { value: |x: Point| x[0] * x[0] + x[1] * x[1] - 1.0, grad: |x: Point| [2.0 * x[0], 2.0 * x[1]] };
    let c = [0.5_f64.sqrt(), 0.5_f64.sqrt()];
    let err = local_graph_chart(&f, c, 0.6, 0.2, 5, 1e-14).unwrap_err();
    assert!(matches!(err, vpatch::Error::Chart(_)));
}

#[test]
fn extracted_boundary_matches_the_ellipse() {
    for h in [1.0 / 32.0, 1.0 / 64.0] {
        let st = kirchhoff(h);
        let win = window_around(st.psi.grid, &st.sigma, 0.2);
        let curves = extract_level_curve(&st.psi, 0.0, Some(win)).unwrap();
        assert_eq!(curves.len(), 1);
        let d = hausdorff(&curves[0], &ellipse(1.0_f64.tanh(), 4096));
        assert!(d < 10.0 * h * h, "h = {h}: {d:e}");
    }
}

#[test]
fn circle_contour_length() {
    let g = Grid2D::centered(129, 1.5).unwrap();
    let field = ScalarField::from_fn(g, |x| x[0].hypot(x[1]) - 1.0);
    let c = extract_level_curve(&field, 0.0, None).unwrap();
    assert!((closed_length(&c[0]) - TAU).abs() < 5.0 * g.h * g.h);
}

#[test]
fn nested_levels_are_ordered() {
    let g = Grid2D::centered(101, 2.0).unwrap();
    let field = ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]);
    let sets = extract_level_sets(&field, &[0.5, 1.5], None).unwrap();
    let inner = &sets[0][0];
    let outer = &sets[1][0];
    assert!(inner.iter().all(|&p| vpatch::geometry::contains(outer, p)));
    assert!(vpatch::geometry::signed_area(inner) < vpatch::geometry::signed_area(outer));
    for (set, r2) in sets.iter().zip([0.5_f64, 1.5]) {
        assert!(set[0].iter().all(|p| (field.bicubic(*p).0 - r2).abs() < 1e-10));
    }
}

#[test]
fn open_contour_is_a_topology_error() {
    let g = Grid2D::centered(41, 2.0).unwrap();
    let field = ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]);
    let err = extract_level_curve(&field, 1.0, Some((0, 0, 25, 40))).unwrap_err();
    assert!(matches!(err, vpatch::Error::Topology(_)));
}

#[test]
fn coarea_length_matches_polyline() {
    let st = kirchhoff(1.0 / 64.0);
    let f = PerturbedStream::new(&st, None).unwrap();
    let cover = ChartCover::new(&f, &st.sigma, default_chart_width(&st.sigma), st.tau, 1e-15).unwrap();
    let len = coarea_line_integral(&f, &cover, 0.0, &|p| vpatch::grid::norm(st.grad_psi_at(p)), 400).unwrap();
    let exact = closed_length(&ellipse(1.0_f64.tanh(), 1 << 16));
    assert!((len - exact).abs() < 1e-4, "{len} {exact}");
    let curve = extract_level_curve(&st.psi, 0.0, Some(window_around(st.psi.grid, &st.sigma, 0.2))).unwrap();
    assert!((len - closed_length(&curve[0])).abs() < 1e-3);
}

#[test]
fn band_area_matches_coarea() {
    let st = kirchhoff(1.0 / 64.0);
    let f = PerturbedStream::new(&st, None).unwrap();
    let cover = ChartCover::new(&f, &st.sigma, default_chart_width(&st.sigma), st.tau, 1e-15).unwrap();
    let l0 = coarea_line_integral(&f, &cover, 0.0, &|_| 1.0, 400).unwrap();
    for eps in [0.02, 0.05, 0.1] {
        let e = eps * st.tau;
        let area = polar_area(&f, e, 2048) - polar_area(&f, -e, 2048);
        let ratio = area / (2.0 * e) / l0;
        assert!((ratio - 1.0).abs() < eps, "ε = {eps}: {ratio}");
        // Two-sided derivative of the band area against the line integrals.
        let d = 1e-3 * e;
        let darea = (polar_area(&f, e + d, 2048) - polar_area(&f, -e - d, 2048)
            - polar_area(&f, e - d, 2048)
            + polar_area(&f, -e + d, 2048))
            / (2.0 * d);
        let lines = coarea_line_integral(&f, &cover, e, &|_| 1.0, 400).unwrap()
            + coarea_line_integral(&f, &cover, -e, &|_| 1.0, 400).unwrap();
        assert!((darea / lines - 1.0).abs() < 0.02, "{darea} {lines}");
    }
}

#[test]
fn band_measure_on_the_grid() {
    let h = 1.0 / 256.0;
    let st = kirchhoff(h);
    let f = PerturbedStream::new(&st, None).unwrap();
    let cover = ChartCover::new(&f, &st.sigma, default_chart_width(&st.sigma), st.tau, 1e-15).unwrap();
    let l0 = coarea_line_integral(&f, &cover, 0.0, &|_| 1.0, 400).unwrap();
    let eps = 0.05 * st.tau;
    let pts = band_points(&st, None, eps, &cover).unwrap();
    let measure = pts.len() as f64 * h * h;
    assert!((measure / (2.0 * eps * l0) - 1.0).abs() < 0.05, "{measure} {}", 2.0 * eps * l0);
    assert!(band_points(&st, None, 0.0, &cover).unwrap().len() <= 4);
    // The ε-band stays inside the state's band, away from its edge.
    let band = st.band_mask();
    let g = st.psi.grid;
    for &k in &pts {
        assert!(g.neighbors4(k).all(|nb| band[nb]));
    }
}

#[test]
fn level_length_is_continuous() {
    let st = kirchhoff(1.0 / 64.0);
    let f = PerturbedStream::new(&st, None).unwrap();
    let cover = ChartCover::new(&f, &st.sigma, default_chart_width(&st.sigma), st.tau, 1e-15).unwrap();
    let len = |t: f64| coarea_line_integral(&f, &cover, t, &|p| vpatch::grid::norm(st.grad_psi_at(p)), 400).unwrap();
    let l0 = len(0.0);
    let mut c_fit: f64 = 0.0;
    for k in 1..=5 {
        let t = 0.15 * k as f64 * st.tau;
        c_fit = c_fit.max((len(t) - l0).abs() / t).max((len(-t) - l0).abs() / t);
    }
    // Lengths of nearby level sets differ by at most C|t| with a moderate C.
    assert!(c_fit.is_finite() && c_fit < 100.0, "{c_fit}");
}
