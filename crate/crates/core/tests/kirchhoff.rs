use std::f64::consts::TAU;

mod common;

use proptest::prelude::*;
use vpatch::kirchhoff::*;

use common::{exterior_quadrature_gap, laplacian_orders, one_sided_gradients};

#[test]
fn stream_vanishes_on_the_boundary() {
    for xi in [0.5f64, 1.0, 1.5] {
        let b = xi.tanh();
        for k in 0..200 {
            let t = TAU * k as f64 / 200.0;
            let p = [t.cos(), b * t.sin()];
            assert!(kirchhoff_stream(p, xi).abs() < 1e-10);
            assert!(kirchhoff_stream_exterior(xi, t, xi).unwrap().abs() < 1e-10);
        }
    }
}

#[test]
fn discrete_laplacian_converges_at_second_order() {
    for xi in [0.5, 1.0] {
        let (errs, orders) = laplacian_orders(xi);
        println!("ξ = {xi}: errors {errs:?}, orders {orders:?}");
        assert!(orders.iter().all(|o| *o >= 1.8));
    }
}

#[test]
fn one_sided_gradients_agree_on_the_boundary() {
    for xi in [0.5f64, 1.0, 1.5] {
        for k in 0..200 {
            let t = TAU * k as f64 / 200.0;
            let (a, b) = one_sided_gradients(xi, t);
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8, "ξ = {xi}, t = {t}");
        }
    }
}

#[test]
fn exterior_formula_matches_quadrature() {
    let (gap, tol) = exterior_quadrature_gap(1.0);
    println!("gap {gap:.3e}, tolerance {tol:.3e}");
    assert!(gap < tol);
}

#[test]
fn far_field_is_logarithmic() {
    // N * 1_E = (area / 2π) log|x| + O(|x|⁻²) far away.
    let xi: f64 = 0.8;
    let b = xi.tanh();
    let om = kirchhoff_angular_velocity(xi);
    let c = kirchhoff_constant(xi);
    for r in [50.0, 200.0] {
        for t in [0.1, 1.0, 2.5] {
            let p = [r * f64::cos(t), r * f64::sin(t)];
            let n = kirchhoff_stream(p, xi) + 0.5 * om * r * r + c;
            let want = 0.5 * b * f64::ln(r);
            assert!((n - want).abs() < 2.0 / (r * r), "{n} {want}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_is_continuous_across_the_boundary(xi in 0.2f64..2.5, t in 0.0f64..TAU) {
        let (a, b) = one_sided_gradients(xi, t);
        prop_assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
    }

    #[test]
    fn stream_is_even_in_both_axes(xi in 0.2f64..2.5, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let v = kirchhoff_stream([x, y], xi);
        prop_assert!((kirchhoff_stream([-x, y], xi) - v).abs() < 1e-14);
        prop_assert!((kirchhoff_stream([x, -y], xi) - v).abs() < 1e-14);
    }
}
