//! Experiment configuration, orchestration and the on-disk run bundle.
//!
//! A run is described by one JSON document. [`run_experiment`] builds the
//! base state, checks its admissibility, solves the smoothed problem down the
//! width schedule and, when asked, checks the splitting and trapping
//! constructions. Every emitted file is listed with its SHA-256 digest in
//! `manifest.json`; no timestamps are written, so identical configurations
//! give identical bundles.
//!
//! Fields are stored as CSV with one grid row per line (`y` fixed, `x`
//! increasing) and 17 significant digits, next to a JSON sidecar with the
//! grid. Curves are stored as `curve,x,y` rows.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::burbea::{continue_branch, vstate_to_admissible, BranchConfig};
use crate::desing::{solve_perturbed, solve_schedule, ContinuationStep, Solution, SolverConfig, Transition, VorticityProfile};
use crate::diagnostics::{
    deviation_norms, splitting_check, symmetry_residual, trap_deviation, trap_scaling, DeviationReport, TrapDeviation,
    TrapFit,
};
use crate::error::{config, Error, Result};
use crate::grid::{Grid2D, Point, ScalarField};
use crate::kernels::{convolve_at_points, KernelParam};
use crate::kirchhoff::{make_kirchhoff_state, make_rankine_state};
use crate::levelset::{extract_level_curve, window_around};
use crate::nondegeneracy::{check_admissibility, SpectralReport};
use crate::state::AdmissibleState;

/// Boundary nodes used for the admissibility check.
const ADMISSIBILITY_NODES: usize = 256;
const ADMISSIBILITY_TOL: f64 = 1e-8;
/// Points on each trapping circle for the boundary constancy check.
const RING_POINTS: usize = 256;
const TRAP_RINGS: usize = 16;
const TRAP_ANGLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseConfig {
    Kirchhoff { xi: f64 },
    /// m-fold V-state at amplitude `s`, continued from the Rankine vortex.
    Burbea { m: usize, s: f64 },
    Rankine { omega: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    pub half_width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 256, half_width: 1.3 }
    }
}

/// Widths and level spacing are fractions of the band half-width `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    #[serde(default)]
    pub transition: Transition,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "unit_weights")]
    pub sigmas: Vec<f64>,
}

fn unit_weights() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub base: BaseConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub profile: ProfileConfig,
    /// Trapping radii, solved at the smallest width against the free run.
    #[serde(default)]
    pub trap_radii: Vec<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Bundle directory; not part of the configuration hash.
    #[serde(default)]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The configuration without its output directory, so that bundles
    /// written to different places can be compared byte for byte.
    fn portable(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output");
        }
        v
    }

    /// Checks that need no state; the 25% box margin is checked when the
    /// state is built.
    pub fn validate(&self) -> Result<()> {
        let eps = &self.profile.eps;
        if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return config("the width schedule must be non-empty and positive");
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return config("the width schedule must be strictly decreasing");
        }
        let sum: f64 = self.profile.sigmas.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return config(format!("level weights must sum to 1, got {sum}"));
        }
        if self.profile.sigmas.len() > 1 && !(self.profile.rho > 0.0) {
            return config("several levels need a positive spacing");
        }
        if self.grid.n < 16 || !(self.grid.half_width > 0.0) {
            return config("grid needs at least 16 nodes per side and a positive box");
        }
        if self.trap_radii.iter().any(|r| !(*r > 1.0 && r.is_finite())) {
            return config("trapping radii must exceed 1");
        }
        if !self.trap_radii.is_empty() && self.solver.qoppa != 0.0 {
            return config("trapping runs compare against a free solve; leave the solver qoppa at 0");
        }
        self.solver.validate()
    }

    /// SHA-256 of the compact JSON of the configuration, output directory
    /// excluded.
    pub fn hash(&self) -> String {
        hex_digest(self.portable().to_string().as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn build_state(base: &BaseConfig, grid: &GridConfig) -> Result<AdmissibleState> {
    let g = Grid2D::centered(grid.n, grid.half_width)?;
    match *base {
        BaseConfig::Kirchhoff { xi } => make_kirchhoff_state(xi, g, None),
        BaseConfig::Rankine { omega } => make_rankine_state(omega, g, None),
        BaseConfig::Burbea { m, s } => {
            let p = continue_branch(m, &[0.5 * s, s], &BranchConfig::default())?.pop().expect("two amplitudes");
            vstate_to_admissible(&p, g, None)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_sha256: String,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join("manifest.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self { kind: e.kind().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub eps: f64,
    pub converged: bool,
    pub outer_steps: usize,
    pub residuals: Vec<f64>,
    pub monotone: bool,
    pub consistency: f64,
    pub transport_residual: f64,
    pub history: Vec<ContinuationStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub levels: Vec<f64>,
    pub nested: bool,
    pub distances: Vec<f64>,
    pub distance_bound: f64,
    pub max_grad: f64,
    pub recovery_error: f64,
    pub recovery_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSummary {
    pub eps: f64,
    pub deviations: Vec<TrapDeviation>,
    /// `max - min` of `Ψ_full + Ω|x|²/2` on each trapping circle.
    pub boundary_spread: Vec<f64>,
    /// Offset of `N_q[ω]` on the circle from `mass · boundary_constant`.
    pub boundary_offset: Vec<f64>,
    pub fit: Option<TrapFit>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub admissibility: Option<SpectralReport>,
    pub warnings: Vec<String>,
    pub levels: Vec<LevelSummary>,
    pub deviations: Vec<DeviationReport>,
    pub splitting: Option<SplitSummary>,
    pub trap: Option<TrapSummary>,
    /// Dihedral symmetry residual of every emitted field.
    pub symmetry: BTreeMap<String, f64>,
}

/// A finished bundle. A module error still yields a bundle, with the error
/// recorded in `error.json` and here.
#[derive(Debug, Clone)]
pub struct RunBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub summary: RunSummary,
    pub error: Option<ErrorRecord>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FieldSidecar {
    kind: String,
    name: String,
    grid: Grid2D,
    layout: String,
}

/// Writes `name.csv` and `name.json`; returns both paths.
pub fn export_field(field: &ScalarField, name: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let g = field.grid;
    let mut csv = String::with_capacity(g.len() * 25);
    for j in 0..g.ny {
        let row: Vec<String> = (0..g.nx).map(|i| format!("{:.16e}", field.at(i, j))).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let data = dir.join(format!("{name}.csv"));
    let side = dir.join(format!("{name}.json"));
    fs::write(&data, csv)?;
    let meta = FieldSidecar {
        kind: "field".into(),
        name: name.into(),
        grid: g,
        layout: "one row per y, x increasing".into(),
    };
    write_json(&side, &meta)?;
    Ok(vec![data, side])
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("{}: bad number {s:?}", path.display())))
}

pub fn import_field(dir: &Path, name: &str) -> Result<ScalarField> {
    let meta: FieldSidecar = read_json(&dir.join(format!("{name}.json")))?;
    if meta.kind != "field" {
        return Err(Error::Format(format!("{name} is not a field")));
    }
    let path = dir.join(format!("{name}.csv"));
    let text = fs::read_to_string(&path)?;
    let values = text
        .lines()
        .filter(|l| !l.is_empty())
        .flat_map(|l| l.split(','))
        .map(|s| parse_f64(s, &path))
        .collect::<Result<Vec<f64>>>()?;
    ScalarField::from_values(meta.grid, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveSidecar {
    kind: String,
    name: String,
    points: Vec<usize>,
    /// Optional label per curve, such as the level it was extracted at.
    labels: Vec<f64>,
}

/// Writes `name.csv` with `curve,x,y` rows and a `name.json` sidecar.
pub fn export_curves(curves: &[Vec<Point>], labels: &[f64], name: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = String::from("curve,x,y\n");
    for (k, c) in curves.iter().enumerate() {
        for p in c {
            csv.push_str(&format!("{k},{:.16e},{:.16e}\n", p[0], p[1]));
        }
    }
    let data = dir.join(format!("{name}.csv"));
    let side = dir.join(format!("{name}.json"));
    fs::write(&data, csv)?;
    let meta = CurveSidecar {
        kind: "curves".into(),
        name: name.into(),
        points: curves.iter().map(Vec::len).collect(),
        labels: labels.to_vec(),
    };
    write_json(&side, &meta)?;
    Ok(vec![data, side])
}

/// Curves and their labels.
pub fn import_curves(dir: &Path, name: &str) -> Result<(Vec<Vec<Point>>, Vec<f64>)> {
    let meta: CurveSidecar = read_json(&dir.join(format!("{name}.json")))?;
    let path = dir.join(format!("{name}.csv"));
    let text = fs::read_to_string(&path)?;
    let mut curves: Vec<Vec<Point>> = meta.points.iter().map(|n| Vec::with_capacity(*n)).collect();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!("{}: expected 3 columns", path.display())));
        }
        let k: usize = cols[0].parse().map_err(|_| Error::Format(format!("{}: bad curve index", path.display())))?;
        let c = curves.get_mut(k).ok_or_else(|| Error::Format(format!("{}: curve {k} not in sidecar", path.display())))?;
        c.push([parse_f64(cols[1], &path)?, parse_f64(cols[2], &path)?]);
    }
    if curves.iter().zip(&meta.points).any(|(c, n)| c.len() != *n) {
        return Err(Error::Format(format!("{}: point counts disagree with the sidecar", path.display())));
    }
    Ok((curves, meta.labels))
}

fn state_order(state: &AdmissibleState) -> usize {
    state.m.m
}

struct Emitter<'a> {
    dir: &'a Path,
    m: usize,
    summary: RunSummary,
}

impl Emitter<'_> {
    fn field(&mut self, f: &ScalarField, name: &str) -> Result<()> {
        export_field(f, name, self.dir)?;
        self.summary.symmetry.insert(name.to_string(), symmetry_residual(f, self.m)?);
        Ok(())
    }
}

/// Boundary constancy of `Ψ_full + Ω|x|²/2 = N_q[ω] - c` on `|x| = R`.
fn ring_constancy(sol: &Solution) -> Result<(f64, f64)> {
    let r = sol.kernel.radius() * (1.0 - 1e-12);
    let ring: Vec<Point> = (0..RING_POINTS)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / RING_POINTS as f64;
            [r * a.cos(), r * a.sin()]
        })
        .collect();
    let v = convolve_at_points(sol.kernel, &sol.omega_cells, &ring)?;
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let expected = sol.omega_cells.integral() * sol.kernel.boundary_constant();
    Ok((hi - lo, lo - expected))
}

fn execute(cfg: &ExperimentConfig, out: &mut Emitter<'_>) -> Result<()> {
    cfg.validate()?;
    let state = build_state(&cfg.base, &cfg.grid)?;
    out.m = state_order(&state);
    let adm = check_admissibility(&state, ADMISSIBILITY_NODES, ADMISSIBILITY_TOL)?;
    if !adm.verdict {
        out.summary.warnings.push(format!("base state is numerically degenerate: sigma_min {:.3e}", adm.sigma_min));
    }
    out.summary.admissibility = Some(adm);
    out.field(&state.psi, "state_psi")?;
    export_curves(std::slice::from_ref(&state.sigma), &[0.0], "state_boundary", out.dir)?;

    let p = &cfg.profile;
    let profile = VorticityProfile::relative(&state, p.eps[0], p.rho, p.sigmas.clone())?;
    let profile = VorticityProfile { transition: p.transition, ..profile };
    let targets: Vec<f64> = p.eps.iter().map(|e| e * state.tau).collect();
    let sols = solve_schedule(&state, &profile, &targets, &cfg.solver)?;
    let win = window_around(state.psi.grid, &state.sigma, 0.2);
    let mut rows = String::from("eps,l1_vorticity,tv_gap,sup_grad,tv_coarea,tv_direct\n");
    for (i, sol) in sols.iter().enumerate() {
        out.field(&sol.psi, &format!("psi_{i}"))?;
        out.field(&sol.omega, &format!("omega_{i}"))?;
        out.field(&sol.psi_full, &format!("psi_full_{i}"))?;
        let curves = extract_level_curve(&sol.psi_full, 0.0, Some(win))?;
        export_curves(&curves, &vec![0.0; curves.len()], &format!("boundary_{i}"), out.dir)?;
        let d = deviation_norms(sol, &state)?;
        rows.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            d.eps, d.l1_vorticity, d.tv_gap, d.sup_grad, d.tv_coarea, d.tv_direct
        ));
        out.summary.deviations.push(d);
        out.summary.levels.push(LevelSummary {
            eps: sol.profile.eps,
            converged: sol.report.converged,
            outer_steps: sol.report.outer_steps,
            residuals: sol.report.residuals.clone(),
            monotone: sol.report.is_monotone(),
            consistency: sol.consistency,
            transport_residual: sol.transport_residual,
            history: sol.history.clone(),
        });
    }
    fs::write(out.dir.join("deviations.csv"), rows)?;
    let last = sols.last().expect("non-empty schedule");

    if p.rho > 0.0 {
        let r = splitting_check(&last.psi_full, &last.omega, &last.profile, &state)?;
        let mut curves = Vec::new();
        let mut labels = Vec::new();
        for (level, cs) in r.levels.iter().zip(&r.curves) {
            for c in cs {
                curves.push(c.clone());
                labels.push(*level);
            }
        }
        export_curves(&curves, &labels, "split_boundaries", out.dir)?;
        out.summary.splitting = Some(SplitSummary {
            levels: r.levels,
            nested: r.nested,
            distances: r.distances,
            distance_bound: r.distance_bound,
            max_grad: r.max_grad,
            recovery_error: r.recovery_error,
            recovery_nodes: r.recovery_nodes,
        });
    }

    if !cfg.trap_radii.is_empty() {
        let mut trap = TrapSummary {
            eps: last.profile.eps,
            deviations: Vec::new(),
            boundary_spread: Vec::new(),
            boundary_offset: Vec::new(),
            fit: None,
        };
        let mut rows = String::from("radius,l1_vorticity,tv_gap,sup_grad,total,boundary_spread\n");
        for &radius in &cfg.trap_radii {
            let solver = SolverConfig { qoppa: KernelParam::from_radius(radius)?.qoppa, ..cfg.solver.clone() };
            let sol = solve_perturbed(&state, &last.profile, &solver)?;
            out.field(&sol.psi_full, &format!("psi_full_trap_{radius}"))?;
            let d = trap_deviation(&sol, last, &state, TRAP_RINGS, TRAP_ANGLES)?;
            let (spread, offset) = ring_constancy(&sol)?;
            rows.push_str(&format!(
                "{radius:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{spread:.16e}\n",
                d.l1_vorticity,
                d.tv_gap,
                d.sup_grad,
                d.total()
            ));
            trap.deviations.push(d);
            trap.boundary_spread.push(spread);
            trap.boundary_offset.push(offset);
        }
        if cfg.trap_radii.len() >= 3 {
            let totals: Vec<f64> = trap.deviations.iter().map(TrapDeviation::total).collect();
            trap.fit = Some(trap_scaling(&cfg.trap_radii, &totals)?);
        }
        fs::write(out.dir.join("trap.csv"), rows)?;
        out.summary.trap = Some(trap);
    }
    Ok(())
}

fn manifest_for(dir: &Path, config_sha256: String) -> Result<Manifest> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|n| n != "manifest.json");
    names.sort();
    let files = names
        .into_iter()
        .map(|name| {
            let bytes = fs::read(dir.join(&name))?;
            Ok(FileEntry { sha256: hex_digest(&bytes), bytes: bytes.len() as u64, name })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest { crate_version: env!("CARGO_PKG_VERSION").to_string(), config_sha256, files })
}

/// Runs the configured construction into `cfg.output`, replacing any files
/// from an earlier run. Only IO failures on the bundle itself are returned
/// as errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunBundle> {
    let dir = cfg.output.clone();
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), &cfg.portable())?;
    let mut out = Emitter { dir: &dir, m: 1, summary: RunSummary::default() };
    let error = execute(cfg, &mut out).err().map(|e| ErrorRecord::from(&e));
    if let Some(e) = &error {
        write_json(&dir.join("error.json"), e)?;
    }
    let summary = out.summary;
    write_json(&dir.join("summary.json"), &summary)?;
    let manifest = manifest_for(&dir, cfg.hash())?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunBundle { dir, manifest, summary, error })
}

/// Writes a bundle holding only the given reports, for single-module
/// commands that produce no fields.
pub fn write_report_bundle(dir: &Path, reports: &[(&str, Value)], error: Option<&Error>) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    for (name, v) in reports {
        write_json(&dir.join(format!("{name}.json")), v)?;
    }
    if let Some(e) = error {
        write_json(&dir.join("error.json"), &ErrorRecord::from(e))?;
    }
    let key = serde_json::to_string(&reports.iter().map(|(n, _)| *n).collect::<Vec<_>>()).unwrap_or_default();
    let manifest = manifest_for(dir, hex_digest(key.as_bytes()))?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub name: String,
    pub same_grid: bool,
    /// Nodes compared: all nodes on a shared grid, otherwise coarse nodes
    /// inside the finer box away from a two-node collar.
    pub probes: usize,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub fields: Vec<FieldDiff>,
    /// Largest difference over numeric leaves of the run summaries.
    pub summary_max_delta: f64,
    /// Summary leaves present in only one run or of differing type.
    pub summary_mismatches: usize,
    pub identical_files: usize,
    pub differing_files: Vec<String>,
}

impl CompareReport {
    pub fn max_field_diff(&self) -> f64 {
        self.fields.iter().map(|f| f.max_abs).fold(0.0, f64::max)
    }
}

fn json_delta(a: &Value, b: &Value, max: &mut f64, mismatches: &mut usize) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            let d = (x - y).abs();
            if d.is_nan() {
                *mismatches += 1;
            } else {
                *max = max.max(d);
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            *mismatches += x.len().abs_diff(y.len());
            x.iter().zip(y).for_each(|(u, v)| json_delta(u, v, max, mismatches));
        }
        (Value::Object(x), Value::Object(y)) => {
            for (k, u) in x {
                match y.get(k) {
                    Some(v) => json_delta(u, v, max, mismatches),
                    None => *mismatches += 1,
                }
            }
            *mismatches += y.keys().filter(|k| !x.contains_key(*k)).count();
        }
        (x, y) if x == y => {}
        _ => *mismatches += 1,
    }
}

fn field_names(dir: &Path, manifest: &Manifest) -> Vec<String> {
    manifest
        .files
        .iter()
        .filter_map(|f| f.name.strip_suffix(".json"))
        .filter(|n| read_json::<FieldSidecar>(&dir.join(format!("{n}.json"))).is_ok_and(|s| s.kind == "field"))
        .map(str::to_string)
        .collect()
}

fn field_diff(name: &str, a: &ScalarField, b: &ScalarField) -> FieldDiff {
    if a.grid == b.grid {
        let max_abs = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        return FieldDiff { name: name.into(), same_grid: true, probes: a.grid.len(), max_abs };
    }
    let (coarse, fine) = if a.grid.h >= b.grid.h { (a, b) } else { (b, a) };
    let fg = fine.grid;
    let (mut probes, mut max_abs) = (0, 0.0f64);
    for k in 0..coarse.grid.len() {
        let p = coarse.grid.point_of(k);
        let (fx, fy) = fg.frac(p);
        let inside = fx >= 2.0 && fy >= 2.0 && fx <= (fg.nx - 3) as f64 && fy <= (fg.ny - 3) as f64;
        if !inside {
            continue;
        }
        let (ri, rj) = (fx.round(), fy.round());
        let v = if (fx - ri).abs() < 1e-9 && (fy - rj).abs() < 1e-9 {
            fine.at(ri as usize, rj as usize)
        } else {
            fine.bicubic(p).0
        };
        probes += 1;
        max_abs = max_abs.max((coarse.values[k] - v).abs());
    }
    FieldDiff { name: name.into(), same_grid: false, probes, max_abs }
}

/// Field and report differences between two bundles.
pub fn compare_runs(a: &Path, b: &Path) -> Result<CompareReport> {
    let (ma, mb) = (Manifest::load(a)?, Manifest::load(b)?);
    let names_b = field_names(b, &mb);
    let mut fields = Vec::new();
    for name in field_names(a, &ma).into_iter().filter(|n| names_b.contains(n)) {
        let (fa, fb) = (import_field(a, &name)?, import_field(b, &name)?);
        fields.push(field_diff(&name, &fa, &fb));
    }
    let (mut max, mut mismatches) = (0.0, 0);
    let (sa, sb) = (a.join("summary.json"), b.join("summary.json"));
    if sa.exists() && sb.exists() {
        json_delta(&read_json::<Value>(&sa)?, &read_json::<Value>(&sb)?, &mut max, &mut mismatches);
    } else if sa.exists() != sb.exists() {
        mismatches += 1;
    }
    let digests: BTreeMap<&str, &str> = mb.files.iter().map(|f| (f.name.as_str(), f.sha256.as_str())).collect();
    let mut identical = 0;
    let mut differing = Vec::new();
    for f in &ma.files {
        if digests.get(f.name.as_str()) == Some(&f.sha256.as_str()) {
            identical += 1;
        } else {
            differing.push(f.name.clone());
        }
    }
    differing.extend(mb.files.iter().filter(|f| !ma.files.iter().any(|g| g.name == f.name)).map(|f| f.name.clone()));
    Ok(CompareReport {
        fields,
        summary_max_delta: max,
        summary_mismatches: mismatches,
        identical_files: identical,
        differing_files: differing,
    })
}

/// Canonical JSON used in error output of the command line tool.
pub fn error_line(e: &Error) -> String {
    json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
