use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use sha2::{Digest, Sha256};
use tempfile::tempdir;
use vpatch::experiment::*;
use vpatch::{Grid2D, ScalarField};

fn config(dir: &Path, n: usize, eps: &[f64]) -> ExperimentConfig {
    ExperimentConfig {
        base: BaseConfig::Kirchhoff { xi: 1.0 },
        grid: GridConfig { n, half_width: 1.3 },
        profile: ProfileConfig { transition: Default::default(), eps: eps.to_vec(), rho: 0.0, sigmas: vec![1.0] },
        trap_radii: vec![],
        solver: Default::default(),
        output: dir.to_path_buf(),
    }
}

#[test]
fn field_round_trip_is_bit_exact() {
    let dir = tempdir().unwrap();
    let g = Grid2D::new([-0.3, 0.7], 0.013, 17, 11).unwrap();
    let f = ScalarField::from_fn(g, |p| (p[0] * 37.0).sin() / 3.0 + p[1].exp() * 1e-300);
    let files = export_field(&f, "f", dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let back = import_field(dir.path(), "f").unwrap();
    assert_eq!(back.grid, g);
    assert!(f.values.iter().zip(&back.values).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn curve_round_trip_is_bit_exact() {
    let dir = tempdir().unwrap();
    let curves = vec![vec![[0.1, 1.0 / 3.0], [-2.5e-17, 7.0]], vec![], vec![[1e308, -0.0]]];
    export_curves(&curves, &[0.0, 0.5, -0.5], "c", dir.path()).unwrap();
    let (back, labels) = import_curves(dir.path(), "c").unwrap();
    assert_eq!(labels, vec![0.0, 0.5, -0.5]);
    assert_eq!(back.len(), 3);
    for (a, b) in curves.iter().flatten().zip(back.iter().flatten()) {
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}

#[test]
fn corrupt_files_are_format_errors() {
    let dir = tempdir().unwrap();
    let g = Grid2D::centered(5, 1.0).unwrap();
    export_field(&ScalarField::zeros(g), "z", dir.path()).unwrap();
    fs::write(dir.path().join("z.csv"), "0,1,x\n").unwrap();
    assert_eq!(import_field(dir.path(), "z").unwrap_err().kind(), "format");
    assert_eq!(import_field(dir.path(), "missing").unwrap_err().kind(), "io");
}

#[test]
fn bundles_are_reproducible_and_checksummed() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let ra = run_experiment(&config(a.path(), 65, &[0.2, 0.1])).unwrap();
    let rb = run_experiment(&config(b.path(), 65, &[0.2, 0.1])).unwrap();
    assert!(ra.error.is_none());
    assert_eq!(ra.manifest, rb.manifest);
    assert_eq!(fs::read(a.path().join("manifest.json")).unwrap(), fs::read(b.path().join("manifest.json")).unwrap());
    let mut on_disk: Vec<String> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    on_disk.retain(|n| n != "manifest.json");
    on_disk.sort();
    let listed: Vec<String> = ra.manifest.files.iter().map(|f| f.name.clone()).collect();
    assert_eq!(listed, on_disk);
    for f in &ra.manifest.files {
        let bytes = fs::read(a.path().join(&f.name)).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(digest, f.sha256, "{}", f.name);
        assert_eq!(bytes.len() as u64, f.bytes);
    }
    assert_eq!(ra.manifest.config_sha256, config(a.path(), 65, &[0.2, 0.1]).hash());

    let cmp = compare_runs(a.path(), b.path()).unwrap();
    assert!(!cmp.fields.is_empty());
    assert!(cmp.fields.iter().all(|f| f.same_grid && f.max_abs == 0.0));
    assert_eq!(cmp.summary_max_delta, 0.0);
    assert_eq!(cmp.summary_mismatches, 0);
    assert!(cmp.differing_files.is_empty());
}

#[test]
fn bundle_contents_match_the_run() {
    let dir = tempdir().unwrap();
    let run = run_experiment(&config(dir.path(), 65, &[0.2, 0.1])).unwrap();
    let s = &run.summary;
    assert!(s.admissibility.as_ref().unwrap().verdict);
    assert_eq!(s.deviations.len(), 2);
    assert!(s.levels.iter().all(|l| l.converged && l.monotone));
    assert!(s.symmetry.values().all(|r| *r < 1e-10));
    let table = fs::read_to_string(dir.path().join("deviations.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let (curves, _) = import_curves(dir.path(), "boundary_1").unwrap();
    assert_eq!(curves.len(), 1);
    let psi = import_field(dir.path(), "psi_full_1").unwrap();
    assert_eq!(psi.grid, Grid2D::centered(65, 1.3).unwrap());
}

#[test]
fn module_errors_are_recorded_in_the_bundle() {
    let dir = tempdir().unwrap();
    let mut cfg = config(dir.path(), 65, &[0.2, 0.1]);
    cfg.grid.half_width = 0.9;
    let run = run_experiment(&cfg).unwrap();
    let e = run.error.expect("the box is too small for the ellipse");
    let on_disk: ErrorRecord = serde_json::from_str(&fs::read_to_string(dir.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(on_disk, e);
    assert!(run.manifest.files.iter().any(|f| f.name == "error.json"));

    let mut cfg = config(dir.path(), 65, &[0.1, 0.2]);
    cfg.profile.eps = vec![0.1, 0.2];
    assert_eq!(run_experiment(&cfg).unwrap().error.unwrap().kind, "config");
}

#[test]
fn resolutions_differ_at_second_order() {
    let dirs: Vec<_> = (0..3).map(|_| tempdir().unwrap()).collect();
    for (d, n) in dirs.iter().zip([65, 129, 257]) {
        assert!(run_experiment(&config(d.path(), n, &[0.2])).unwrap().error.is_none());
    }
    let diff = |a: &Path, b: &Path| {
        let r = compare_runs(a, b).unwrap();
        let f = r.fields.iter().find(|f| f.name == "psi_full_0").unwrap().clone();
        assert!(!f.same_grid && f.probes > 1000);
        f.max_abs
    };
    let coarse = diff(dirs[0].path(), dirs[1].path());
    let fine = diff(dirs[1].path(), dirs[2].path());
    println!("differences {coarse:.3e} {fine:.3e}, ratio {:.2}", coarse / fine);
    assert!(coarse / fine > 3.0);
}

#[test]
fn split_and_trap_recipes() {
    let dir = tempdir().unwrap();
    let mut cfg = config(dir.path(), 129, &[0.05]);
    cfg.profile.rho = 0.05;
    cfg.profile.sigmas = vec![0.5, 0.0, 0.5];
    let run = run_experiment(&cfg).unwrap();
    let sp = run.summary.splitting.expect("split summary");
    assert!(sp.nested && sp.distances.iter().all(|d| *d >= sp.distance_bound));
    let (curves, labels) = import_curves(dir.path(), "split_boundaries").unwrap();
    assert_eq!(curves.len(), 3);
    assert_eq!(labels.len(), 3);

    let dir = tempdir().unwrap();
    let mut cfg = config(dir.path(), 65, &[0.1]);
    cfg.trap_radii = vec![4.0, 8.0, 16.0];
    let run = run_experiment(&cfg).unwrap();
    assert!(run.error.is_none(), "{:?}", run.error);
    let trap = run.summary.trap.unwrap();
    assert_eq!(trap.deviations.len(), 3);
    assert!(trap.boundary_spread.iter().all(|s| *s < 1e-12));
    assert!(trap.boundary_offset.iter().all(|s| s.abs() < 1e-12));
    assert!(trap.fit.is_some());
}

fn vpatch(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vpatch")).args(args).output().unwrap()
}

#[test]
fn cli_failures_print_one_json_line() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("b");
    let cases: Vec<Vec<&str>> = vec![
        vec!["desing", "--n", "33", "--eps", "0.1,0.2", "--out", out.to_str().unwrap()],
        vec!["desing", "--n", "33", "--eps", "0.2", "--sigmas", "0.5,0.6", "--rho", "0.1", "--out", out.to_str().unwrap()],
        vec!["desing", "--no-such-flag"],
        vec!["kirchhoff", "--xi=-1", "--n", "33", "--out", out.to_str().unwrap()],
        vec!["diagnose", "/nonexistent/bundle"],
        vec!["compare", "/nonexistent/a", "/nonexistent/b"],
        vec!["burbea", "--m", "1", "--out", out.to_str().unwrap()],
    ];
    for args in cases {
        let o = vpatch(&args);
        assert!(!o.status.success(), "{args:?}");
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert!(v["error"].is_string() && v["message"].is_string());
    }
}

#[test]
fn cli_runs_diagnose_and_compare() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let o = vpatch(&["desing", "--n", "65", "--eps", "0.2,0.1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = vpatch(&["diagnose", out.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true), "{v}");
    let o = vpatch(&["compare", out.to_str().unwrap(), out.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["summary_max_delta"], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_fields_round_trip(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 12)) {
        let dir = tempdir().unwrap();
        let g = Grid2D::new([0.0, 0.0], 0.5, 4, 3).unwrap();
        let f = ScalarField::from_values(g, values).unwrap();
        export_field(&f, "p", dir.path()).unwrap();
        let back = import_field(dir.path(), "p").unwrap();
        prop_assert!(f.values.iter().zip(&back.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
