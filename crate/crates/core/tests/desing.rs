mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpatch::desing::*;
use vpatch::diagnostics::symmetry_residual;
use vpatch::kernels::convolve_at_points;
use vpatch::kirchhoff::make_rankine_state;
use vpatch::{Error, Grid2D, KernelParam, Region, ScalarField, SymmetryGroup};

use common::{kirchhoff_state, RadialOracle};

/// `G(x) = A x - y` with a dense, well-conditioned `A`.
struct Linear {
    a: DMatrix<f64>,
    y: DVector<f64>,
}

impl Linear {
    fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 3.0 } else { 0.0 } + rng.random_range(-0.5..0.5) / n as f64);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        Self { a, y }
    }
}

impl FlowProblem for Linear {
    fn residual(&self, x: &[f64]) -> vpatch::Result<Vec<f64>> {
        Ok((&self.a * DVector::from_column_slice(x) - &self.y).as_slice().to_vec())
    }

    fn linear_solve(&self, _x: &[f64], r: &[f64]) -> vpatch::Result<LinearSolve> {
        let step = self.a.clone().lu().solve(&DVector::from_column_slice(r)).unwrap();
        Ok(LinearSolve { step: step.as_slice().to_vec(), sigma_min: 1.0, iterations: 1 })
    }
}

/// `G(x)_i = x_i + 0.3 sin(x_i) + 0.1 x_{i+1}² - y_i`.
struct Toy {
    y: Vec<f64>,
}

impl FlowProblem for Toy {
    fn residual(&self, x: &[f64]) -> vpatch::Result<Vec<f64>> {
        let n = x.len();
        Ok((0..n).map(|i| x[i] + 0.3 * x[i].sin() + 0.1 * x[(i + 1) % n].powi(2) - self.y[i]).collect())
    }

    fn linear_solve(&self, x: &[f64], r: &[f64]) -> vpatch::Result<LinearSolve> {
        let n = x.len();
        let j = DMatrix::from_fn(n, n, |i, k| {
            if k == i {
                1.0 + 0.3 * x[i].cos()
            } else if k == (i + 1) % n {
                0.2 * x[k]
            } else {
                0.0
            }
        });
        let step = j.lu().solve(&DVector::from_column_slice(r)).unwrap();
        Ok(LinearSolve { step: step.as_slice().to_vec(), sigma_min: 1.0, iterations: 1 })
    }
}

fn flow(integrator: Integrator, substeps: usize, max_outer: usize) -> SolverConfig {
    SolverConfig { integrator, substeps, max_outer, tol: 1e-13, ..SolverConfig::default() }
}

#[test]
fn exact_inner_integration_tracks_the_homotopy() {
    let p = Linear::random(12, 7);
    let (x, rep) = newton_flow_solve(&p, &[0.0; 12], &flow(Integrator::Exponential, 1, 40)).unwrap();
    assert!(rep.converged);
    assert!(rep.defects.iter().all(|d| *d < 1e-12), "{:?}", rep.defects);
    assert!(rep.is_monotone());
    let r = p.residual(&x).unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-13));
}

#[test]
fn zero_residual_returns_the_start() {
    let p = Linear { a: DMatrix::identity(4, 4), y: DVector::zeros(4) };
    let (x, rep) = newton_flow_solve(&p, &[0.0; 4], &SolverConfig::default()).unwrap();
    assert_eq!(x, vec![0.0; 4]);
    assert!(rep.converged);
    assert_eq!(rep.outer_steps, 0);
}

#[test]
fn euler_defect_shrinks_at_first_order() {
    let y: Vec<f64> = (0..8).map(|i| 0.5 + 0.1 * i as f64).collect();
    let p = Toy { y };
    let d: Vec<f64> = [4, 8, 16, 32]
        .iter()
        .map(|&n| {
            let (_, rep) = newton_flow_solve(&p, &[0.0; 8], &flow(Integrator::Euler, n, 40)).unwrap();
            rep.defects[1]
        })
        .collect();
    for w in d.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.0, "{d:?}");
    }
}

#[test]
fn plain_newton_converges_on_the_toy_problem() {
    let p = Toy { y: vec![0.4; 6] };
    let cfg = SolverConfig { mode: SolveMode::Newton, tol: 1e-13, ..SolverConfig::default() };
    let (x, rep) = newton_flow_solve(&p, &[0.0; 6], &cfg).unwrap();
    assert!(rep.converged && rep.outer_steps <= 8);
    assert!(p.residual(&x).unwrap().iter().all(|v| v.abs() < 1e-13));
}

#[test]
fn solver_errors_are_typed() {
    let p = Toy { y: vec![0.4; 6] };
    let err = newton_flow_solve(&p, &[0.0; 6], &flow(Integrator::Euler, 4, 1)).unwrap_err();
    assert!(matches!(err, Error::NoConvergence(_)));
    let cfg = SolverConfig { radius: Some(1e-3), ..SolverConfig::default() };
    assert!(matches!(newton_flow_solve(&p, &[0.0; 6], &cfg).unwrap_err(), Error::Admissibility(_)));
    let bad = SolverConfig { step: -1.0, ..SolverConfig::default() };
    assert!(matches!(newton_flow_solve(&p, &[0.0; 6], &bad).unwrap_err(), Error::Config(_)));
}

fn small_psi(problem: &DesingProblem<'_>, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..problem.len()).map(|_| amp * rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn heaviside_saturates_and_localizes() {
    let st = kirchhoff_state(1.0, 96);
    let eps = 0.2 * st.tau;
    let psi = ScalarField::zeros(st.psi.grid);
    let (v, d) = heaviside_field(&st, &psi, 0.0, eps, Transition::Smooth).unwrap();
    for k in 0..v.values.len() {
        let p = st.psi.values[k];
        match st.region[k] {
            Region::Inner => assert_eq!(v.values[k], 1.0),
            Region::Outer => assert_eq!(v.values[k], 0.0),
            Region::Band => {
                if p <= -eps {
                    assert_eq!(v.values[k], 1.0);
                }
                if p >= eps {
                    assert_eq!(v.values[k], 0.0);
                }
                assert!(d.values[k] <= 0.0);
            }
        }
        if st.region[k] != Region::Band {
            assert_eq!(d.values[k], 0.0);
        }
    }
    assert!(symmetry_residual(&v, 2).unwrap() < 1e-12);
    assert!(symmetry_residual(&d, 2).unwrap() < 1e-12);
    let big = ScalarField::from_fn(st.psi.grid, |_| st.tau);
    assert!(matches!(heaviside_field(&st, &big, 0.0, eps, Transition::Smooth), Err(Error::Admissibility(_))));
}

#[test]
fn residual_equals_perturbation_form() {
    let st = kirchhoff_state(1.0, 96);
    for (rho, sig) in [(0.0, vec![1.0]), (0.05, vec![0.5, 0.0, 0.5]), (0.04, vec![0.2, 0.3, 0.5])] {
        let prof = VorticityProfile::relative(&st, 0.1, rho, sig).unwrap();
        for kp in [KernelParam::FREE, KernelParam::from_radius(4.0).unwrap()] {
            let pb = DesingProblem::new(&st, prof.clone(), kp).unwrap();
            for seed in 0..3 {
                let x = small_psi(&pb, 0.1 * st.tau, seed);
                let r = pb.residual(&x).unwrap();
                let (big_f, f) = pb.perturbation_form(&x).unwrap();
                let gap = r.iter().zip(big_f.iter().zip(&f)).fold(0.0_f64, |m, (a, (b, c))| m.max((a - (b - c)).abs()));
                assert!(gap < 1e-12, "ρ = {rho}, q = {}, seed {seed}: {gap:e}", kp.qoppa);
            }
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let st = kirchhoff_state(1.0, 64);
    let prof = VorticityProfile::relative(&st, 0.2, 0.0, vec![1.0]).unwrap();
    let pb = DesingProblem::new(&st, prof, KernelParam::from_radius(8.0).unwrap()).unwrap();
    let x = small_psi(&pb, 0.02 * st.tau, 1);
    let phi = small_psi(&pb, 1.0, 2);
    let h = 1e-6;
    let xp: Vec<f64> = x.iter().zip(&phi).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(&phi).map(|(a, b)| a - h * b).collect();
    let (rp, rm) = (pb.residual(&xp).unwrap(), pb.residual(&xm).unwrap());
    let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let jphi = pb.apply_jacobian(&x, &phi);
    let dense = pb.jacobian(&x) * DVector::from_column_slice(&phi);
    let scale = jphi.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..fd.len() {
        assert!((fd[i] - jphi[i]).abs() < 1e-6 * scale, "{i}: {} {}", fd[i], jphi[i]);
        assert!((dense[i] - jphi[i]).abs() < 1e-10 * scale);
    }
}

#[test]
fn jacobian_is_identity_off_the_layer() {
    let st = kirchhoff_state(1.0, 96);
    let prof = VorticityProfile::relative(&st, 0.05, 0.0, vec![1.0]).unwrap();
    let pb = DesingProblem::new(&st, prof, KernelParam::FREE).unwrap();
    let x = vec![0.0; pb.len()];
    let d = pb.layer_weights(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let phi: Vec<f64> = d.iter().map(|w| if *w == 0.0 { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    assert!(phi.iter().any(|v| *v != 0.0));
    assert_eq!(pb.apply_jacobian(&x, &phi), phi);
}

#[test]
fn linearization_is_invertible_across_widths() {
    let st = kirchhoff_state(1.0, 128);
    for eps in [0.02, 0.05, 0.1, 0.2] {
        let prof = VorticityProfile::relative(&st, eps, 0.0, vec![1.0]).unwrap();
        let pb = DesingProblem::new(&st, prof, KernelParam::FREE).unwrap();
        let x = vec![0.0; pb.len()];
        let r = pb.residual(&x).unwrap();
        let ls = pb.solve_jacobian(&x, &r);
        assert!(ls.sigma_min > 1e-4, "ε = {eps}: {:e}", ls.sigma_min);
        let back = pb.apply_jacobian(&x, &ls.step);
        let scale = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(back.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-9 * scale));
    }
}

#[test]
fn radial_states_give_radial_residuals() {
    let st = make_rankine_state(0.1, Grid2D::centered(97, 1.3).unwrap(), None).unwrap();
    let prof = VorticityProfile::relative(&st, 0.1, 0.0, vec![1.0]).unwrap();
    let pb = DesingProblem::new(&st, prof, KernelParam::FREE).unwrap();
    let g = st.psi.grid;
    let x: Vec<f64> = st.band.iter().map(|&k| 1e-3 * st.tau * (3.0 * vpatch::grid::norm(g.point_of(k))).sin()).collect();
    let r = pb.band_field(&pb.residual(&x).unwrap());
    assert!(vpatch::grid::symmetry_residual(&r, SymmetryGroup { m: 4 }).unwrap() < 1e-12);
}

#[test]
fn kirchhoff_solve_converges_quickly() {
    let st = kirchhoff_state(1.0, 128);
    let prof = VorticityProfile::relative(&st, 0.1, 0.0, vec![1.0]).unwrap();
    let sol = solve_perturbed(&st, &prof, &SolverConfig::default()).unwrap();
    let rep = &sol.report;
    assert!(rep.converged && rep.final_residual() < 1e-10);
    assert!(rep.outer_steps <= 8, "{} outer steps", rep.outer_steps);
    assert!(sol.history.iter().all(|h| h.report.is_monotone()));
    assert!(sol.history.iter().all(|h| h.report.projections.iter().all(|p| *p < 1e-10)));
    let e = prof.eps;
    let c = sol.psi.max_abs() / (e * (1.0 / e).ln());
    println!("|psi| = {:.3e}, C = {c:.3e}", sol.psi.max_abs());
    assert!(c < 1.0);
    assert!(sol.consistency < 1e-9, "{:e}", sol.consistency);
    for f in [&sol.psi, &sol.omega, &sol.psi_full, &sol.omega_cells] {
        assert!(symmetry_residual(f, 2).unwrap() < 1e-10);
    }
    // Inside the band the vorticity is the profile of the full stream function.
    for &k in &st.band {
        let w = prof.transition.value(-sol.psi_full.values[k] / e);
        assert!((sol.omega.values[k] - w).abs() < 1e-6, "{} {w}", sol.omega.values[k]);
    }
    println!("transport residual {:.3e}", sol.transport_residual);
    assert!(sol.transport_residual.is_finite());
}

#[test]
fn initial_residual_is_bounded_by_the_width() {
    let st = kirchhoff_state(1.0, 128);
    let mut fitted = Vec::new();
    for eps in [0.2, 0.1, 0.05] {
        let prof = VorticityProfile::relative(&st, eps, 0.0, vec![1.0]).unwrap();
        let pb = DesingProblem::new(&st, prof, KernelParam::FREE).unwrap();
        let r = pb.residual(&vec![0.0; pb.len()]).unwrap();
        let e = eps * st.tau;
        fitted.push(r.iter().fold(0.0, |m: f64, x| m.max(x.abs())) / (e * (1.0 / e).ln()));
    }
    // The residual at these widths is dominated by a width-independent
    // quadrature floor, so only the bound itself is checked.
    println!("fitted C: {fitted:?}");
    assert!(fitted.iter().all(|c| *c < 0.01));
}

#[test]
fn rankine_matches_the_radial_oracle() {
    let omega = 0.1;
    let st = make_rankine_state(omega, Grid2D::centered_with_spacing(1.0 / 128.0, 1.3).unwrap(), None).unwrap();
    let prof = VorticityProfile::relative(&st, 0.1, 0.0, vec![1.0]).unwrap();
    let sol = solve_perturbed(&st, &prof, &SolverConfig::default()).unwrap();
    let oracle = RadialOracle::solve(omega, st.c, prof.eps, 0.5 * st.tau, 800, prof.transition);
    let g = st.psi.grid;
    let err = (0..g.len())
        .map(|k| (sol.psi_full.values[k] - oracle.stream(vpatch::grid::norm(g.point_of(k)))).abs())
        .fold(0.0, f64::max);
    println!("radial oracle sup error {err:.3e}");
    assert!(err < 5e-3);
}

#[test]
fn trapped_stream_is_constant_on_the_circle() {
    let st = kirchhoff_state(1.0, 96);
    let prof = VorticityProfile::relative(&st, 0.1, 0.0, vec![1.0]).unwrap();
    for r in [4.0, 8.0] {
        let cfg = SolverConfig { qoppa: 1.0 / (r * r), ..SolverConfig::default() };
        let sol = solve_perturbed(&st, &prof, &cfg).unwrap();
        let ring: Vec<[f64; 2]> = (0..256)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 256.0;
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        let v = convolve_at_points(sol.kernel, &sol.omega_cells, &ring).unwrap();
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        let mass = sol.omega_cells.integral();
        assert!(hi - lo < 1e-12, "{:e}", hi - lo);
        assert!((lo - mass * sol.kernel.boundary_constant()).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transitions_are_monotone_and_bounded(a in -1.5f64..1.5, b in -1.5f64..1.5) {
        for tr in [Transition::Smooth, Transition::Quintic] {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(tr.value(lo) <= tr.value(hi));
            prop_assert!((0.0..=1.0).contains(&tr.value(a)));
            prop_assert!(tr.slope(a) >= 0.0);
            if a.abs() >= 1.0 {
                prop_assert_eq!(tr.slope(a), 0.0);
            }
        }
    }

    #[test]
    fn schedules_descend_onto_their_targets(start in 0.2f64..1.0, factor in 0.3f64..0.9, t in prop::collection::vec(0.01f64..0.2, 1..4)) {
        let s = eps_schedule(start, factor, &t);
        prop_assert!(s.windows(2).all(|w| w[1] < w[0]));
        for target in &t {
            prop_assert!(s.contains(target));
        }
        prop_assert!(s.windows(2).all(|w| w[1] >= factor * w[0] - 1e-15 || t.contains(&w[1])));
    }

    #[test]
    fn profiles_validate_their_weights(w in prop::collection::vec(0.0f64..1.0, 1..4)) {
        let mut sig = w.clone();
        sig.extend(w.iter().rev().skip(1));
        let total: f64 = sig.iter().sum();
        prop_assume!(total > 1e-3);
        let norm: Vec<f64> = sig.iter().map(|s| s / total).collect();
        prop_assert!(VorticityProfile::new(Transition::Smooth, 0.1, 0.01, norm).is_ok());
        let skew: Vec<f64> = sig.iter().map(|s| 2.0 * s / total).collect();
        prop_assert!(VorticityProfile::new(Transition::Smooth, 0.1, 0.01, skew).is_err());
    }
}
