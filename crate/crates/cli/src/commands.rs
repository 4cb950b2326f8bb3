//! The five subcommands, as pure functions from a config to output payloads.

use std::sync::Arc;
use std::time::Instant;

use dirac_ibvp::analysis::{check_energy_estimate, check_flux, check_support};
use dirac_ibvp::boundary::{boundary_spectrum, check_admissible, AdmissibilityReport, BoundaryOperatorSpec, ModeSpectrum, ProjectorFamily};
use dirac_ibvp::clifford::{CliffordModel, SpatialDim};
use dirac_ibvp::discrete::{constrained_operator, constraint_subspace, family_continuity_probe, DiscreteOperator, Field, Grid, ProbeNorm};
use dirac_ibvp::evolve::{
    random_perturbation, solve_cauchy, solve_regularized, tilde_inverse, CauchyData, Scheme, SolveOptions, StorePolicy, Trajectory,
};
use dirac_ibvp::geometry::Geometry;
use dirac_ibvp::green::{check_green_axioms, GreenReport, TimeGrid};
use dirac_ibvp::oracle::{circle_boundary_spectrum, exact_transmission_field, initial_fields};
use dirac_ibvp::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Suite};
use crate::emit::{trajectory_csv, CsvSlice};
use crate::CliError;

pub const CONSERVATION_TOL: f64 = 1e-10;
pub const SUPPORT_TOL: f64 = 1e-8;
pub const CAUSAL_TOL: f64 = 1e-10;

/// Wall-clock phases, kept out of the deterministic payloads.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub phases: Vec<(String, f64)>,
}

impl Timings {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.phases.iter().map(|p| p.1).sum()
    }
}

/// Everything a command needs, built from the config.
pub struct Setup {
    pub geometry: Geometry,
    pub grid: Grid,
    pub family: ProjectorFamily,
    pub dt: f64,
    pub window: (f64, f64),
    pub t_initial: f64,
    pub psi0: Vec<Field>,
    pub data: CauchyData,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let geometry = cfg.geometry.clone();
        let grid = Grid::new(cfg.grid.nx, geometry.length)?;
        let spec = BoundaryOperatorSpec::new(geometry.clone());
        let family = ProjectorFamily::from_config(&spec, &cfg.boundary)?;
        let dt = cfg.grid.dt.unwrap_or(0.5 * grid.h());
        let window = (cfg.grid.window[0], cfg.grid.window[1]);
        let psi0 = initial_fields(&geometry, &grid, &cfg.data.initial)?;
        let data = CauchyData {
            psi0: psi0.clone(),
            source: Arc::new(cfg.data.source.clone()),
            window,
            t_initial: cfg.grid.t_initial,
        };
        Ok(Setup { geometry, grid, family, dt, window, t_initial: cfg.grid.t_initial, psi0, data })
    }

    pub fn snapshot_times(&self, cfg: &ExperimentConfig) -> Vec<f64> {
        cfg.run.snapshot_times.clone().unwrap_or_else(|| {
            (0..=10).map(|i| self.window.0 + (self.window.1 - self.window.0) * i as f64 / 10.0).collect()
        })
    }

    fn admissibility(&self, cfg: &ExperimentConfig) -> Result<AdmissibilityReport, CliError> {
        Ok(check_admissible(&self.family, self.window, cfg.check.samples.max(2))?)
    }

    /// Gate on admissibility unless the run is explicitly unchecked.
    fn gate(&self, cfg: &ExperimentConfig) -> Result<Option<AdmissibilityReport>, CliError> {
        if cfg.run.unchecked {
            return Ok(None);
        }
        let rep = self.admissibility(cfg)?;
        if !rep.passed {
            return Err(CliError::Solver(Error::Inadmissible(Box::new(rep))));
        }
        Ok(Some(rep))
    }

    fn options(&self, cfg: &ExperimentConfig, store: StorePolicy) -> SolveOptions {
        let opts = SolveOptions::new(self.dt).store(store);
        if cfg.run.unchecked {
            opts.unchecked()
        } else {
            opts
        }
    }
}

fn physical_slices<'a>(traj: &'a Trajectory, geometry: &Geometry) -> Vec<(f64, Vec<Field>)> {
    traj.snapshots
        .iter()
        .map(|s| (s.t, s.fields.iter().map(|f| tilde_inverse(geometry, f, s.t)).collect()))
        .collect()
}

fn csv_from(grid: &Grid, modes: &[i32], slices: &[(f64, Vec<Field>)]) -> String {
    let rows: Vec<CsvSlice> = slices.iter().map(|(t, f)| CsvSlice { t: *t, modes, fields: f }).collect();
    trajectory_csv(grid, &rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct SupportVerdict {
    pub max_violation: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub command: &'static str,
    pub family: String,
    pub scheme: Scheme,
    pub epsilon: Option<f64>,
    pub nx: usize,
    pub h: f64,
    pub dt: f64,
    pub window: [f64; 2],
    pub t_initial: f64,
    pub admissible: Option<bool>,
    pub energy_initial: f64,
    pub energy_final: f64,
    /// `max_t |‖ψ̃(t)‖² − ‖ψ̃(t₀)‖²| / ‖ψ̃(t₀)‖²` for source-free runs.
    pub conservation_drift: Option<f64>,
    /// `max_t |flux| / ‖ψ̃‖²`.
    pub max_flux: f64,
    pub max_projection_defect: f64,
    pub support: SupportVerdict,
    pub steps: usize,
    pub pass: bool,
}

pub struct SimulateOutput {
    pub csv: String,
    pub summary: SimulateSummary,
    pub trajectory: Trajectory,
    pub timings: Timings,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulateOutput, CliError> {
    let mut timings = Timings::default();
    let setup = timings.time("setup", || Setup::new(cfg))?;
    let admissible = timings.time("admissibility", || setup.gate(cfg))?.map(|r| r.passed);
    let store = StorePolicy::Times(setup.snapshot_times(cfg));
    let opts = setup.options(cfg, store);
    let (traj, epsilon) = match cfg.run.scheme {
        Scheme::CrankNicolson => (timings.time("evolve", || solve_cauchy(&setup.data, &setup.geometry, &setup.family, &setup.grid, &opts))?, None),
        Scheme::MollifiedRk4 => {
            let eps = cfg.run.epsilon[0];
            (
                timings.time("evolve", || solve_regularized(&setup.data, &setup.geometry, &setup.family, &setup.grid, &opts, eps))?,
                Some(eps),
            )
        }
    };
    let flux = check_flux(&traj);
    let support = check_support(&traj, &setup.geometry, &setup.family, &setup.data)?;
    let has_source = setup.data.source.support().is_some();
    let init = traj.index_of(setup.t_initial).unwrap_or(0);
    let n0 = traj.steps[init].norm_sqr;
    let conservation_drift = (!has_source && n0 > 0.0)
        .then(|| traj.steps.iter().map(|s| (s.norm_sqr - n0).abs() / n0).fold(0.0, f64::max));
    let max_projection_defect = traj.steps.iter().map(|s| s.projection_defect).fold(0.0, f64::max);
    let pass = flux.passed && support.passed && conservation_drift.is_none_or(|d| d <= CONSERVATION_TOL);
    let slices = physical_slices(&traj, &setup.geometry);
    let csv = timings.time("emit", || csv_from(&setup.grid, &traj.modes, &slices));
    let summary = SimulateSummary {
        command: "simulate",
        family: setup.family.name(),
        scheme: cfg.run.scheme,
        epsilon,
        nx: setup.grid.nx(),
        h: setup.grid.h(),
        dt: setup.dt,
        window: cfg.grid.window,
        t_initial: setup.t_initial,
        admissible,
        energy_initial: traj.physical_energy(init),
        energy_final: traj.physical_energy(traj.steps.len() - 1),
        conservation_drift,
        max_flux: flux.max_relative,
        max_projection_defect,
        support: SupportVerdict { max_violation: support.max_violation, passed: support.passed },
        steps: traj.steps.len() - 1,
        pass,
    };
    Ok(SimulateOutput { csv, summary, trajectory: traj, timings })
}

/// Characteristic solution of the transmission problem at the snapshot times.
pub fn exact(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let setup = Setup::new(cfg)?;
    if setup.family.name() != "transmission" {
        return Err(CliError::Solver(Error::Precondition("the explicit solution is for transmission conditions".into())));
    }
    if setup.data.source.support().is_some() {
        return Err(CliError::Solver(Error::Precondition("the explicit solution is for source-free data".into())));
    }
    let slices = setup
        .snapshot_times(cfg)
        .into_iter()
        .map(|t| Ok((t, vec![exact_transmission_field(&setup.geometry, &setup.grid, &cfg.data.initial, setup.t_initial, t)?])))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(csv_from(&setup.grid, &[0], &slices))
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckEntry {
    pub name: &'static str,
    pub passed: bool,
    pub skipped: bool,
    pub metrics: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub command: &'static str,
    pub family: String,
    pub checks: Vec<CheckEntry>,
    pub pass: bool,
}

fn entry(name: &'static str, passed: bool, metrics: Value) -> CheckEntry {
    CheckEntry { name, passed, skipped: false, metrics }
}

fn run_admissibility(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckEntry, CliError> {
    let rep = setup.admissibility(cfg)?;
    Ok(entry(
        "admissibility",
        rep.passed,
        json!({
            "samples": rep.samples.len(),
            "max_defect": rep.max_defect,
            "min_fredholm_sv": rep.min_fredholm_sv,
            "max_continuity_step": rep.continuity.iter().copied().fold(0.0, f64::max),
            "notes": rep.notes,
        }),
    ))
}

/// Observed order `log(d_i/d_{i+1}) / log(Δ_i/Δ_{i+1})` of the probe
/// differences against the sample spacing.
fn run_continuity(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckEntry, CliError> {
    let c = &cfg.check.continuity;
    let grid = Grid::new(c.nx, setup.geometry.length)?;
    let mut rows = Vec::new();
    for &n in &c.samples {
        let probe = family_continuity_probe(&setup.geometry, &setup.family, &grid, setup.window, n, c.epsilon, ProbeNorm::L2)?;
        let spacing = (setup.window.1 - setup.window.0) / (n - 1) as f64;
        let max = probe.iter().map(|r| r.difference).fold(0.0, f64::max);
        rows.push((spacing, max));
    }
    let orders: Vec<f64> = rows.windows(2).map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln()).collect();
    let frozen = rows.iter().all(|r| r.1 < 1e-12);
    let passed = frozen || (!orders.is_empty() && orders.iter().all(|o| (0.8..=1.2).contains(o)));
    Ok(entry(
        "continuity",
        passed,
        json!({
            "spacing": rows.iter().map(|r| r.0).collect::<Vec<_>>(),
            "max_difference": rows.iter().map(|r| r.1).collect::<Vec<_>>(),
            "observed_order": orders,
            "time_independent": frozen,
        }),
    ))
}

fn run_flux(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckEntry, CliError> {
    let opts = setup.options(cfg, StorePolicy::Endpoints);
    let traj = solve_cauchy(&setup.data, &setup.geometry, &setup.family, &setup.grid, &opts)?;
    let rep = check_flux(&traj);
    Ok(entry("flux", rep.passed, json!({ "max_relative_flux": rep.max_relative, "tolerance": rep.tolerance, "unchecked": cfg.run.unchecked })))
}

fn random_data(setup: &Setup, seed: u64) -> CauchyData {
    let (phi, g) = random_perturbation(&setup.geometry, &setup.grid, setup.window, seed);
    CauchyData { psi0: phi, source: Arc::new(g), window: setup.window, t_initial: setup.t_initial }
}

fn run_energy(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckEntry, CliError> {
    let opts = setup.options(cfg, StorePolicy::Endpoints);
    let mut ratios = Vec::new();
    let mut constant = 0.0;
    for trial in 0..cfg.check.trials {
        let data = random_data(setup, cfg.run.seed + trial as u64);
        let traj = solve_cauchy(&data, &setup.geometry, &setup.family, &setup.grid, &opts)?;
        let rep = check_energy_estimate(&traj, &setup.geometry);
        constant = rep.constant;
        ratios.push(rep.max_ratio);
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(entry(
        "energy",
        max_ratio <= 1.0,
        json!({ "trials": ratios.len(), "constant": constant, "max_ratio": ratios, "min_slack": 1.0 - max_ratio }),
    ))
}

fn run_support(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckEntry, CliError> {
    let opts = setup.options(cfg, StorePolicy::Times(setup.snapshot_times(cfg)));
    let mut worst: f64 = 0.0;
    for trial in 0..cfg.check.trials {
        let data = random_data(setup, cfg.run.seed + 1000 + trial as u64);
        let traj = solve_cauchy(&data, &setup.geometry, &setup.family, &setup.grid, &opts)?;
        worst = worst.max(check_support(&traj, &setup.geometry, &setup.family, &data)?.max_violation);
    }
    Ok(entry(
        "support",
        worst <= SUPPORT_TOL,
        json!({ "trials": cfg.check.trials, "max_violation": worst, "tolerance": SUPPORT_TOL, "nonlocal": !setup.family.is_local() }),
    ))
}

pub fn green_report(setup: &Setup, cfg: &ExperimentConfig) -> Result<(GreenReport, bool), CliError> {
    let gc = cfg.check.green.clone().unwrap_or(crate::config::GreenConfig { test: None, residual_tolerance: 1e-2 });
    let tg = TimeGrid::new(setup.window, setup.dt)?;
    let rep = check_green_axioms(setup.data.source.clone(), &setup.geometry, &setup.family, &setup.grid, &tg, gc.test.as_ref())?;
    let tol = gc.residual_tolerance;
    let passed = rep.residual_plus <= tol
        && rep.residual_minus <= tol
        && rep.causal_leak <= CAUSAL_TOL
        && rep.slice_difference <= CAUSAL_TOL
        && rep.left_inverse.is_none_or(|l| l[0] <= tol && l[1] <= tol)
        && rep.time_reflection.is_none_or(|d| d <= CAUSAL_TOL);
    Ok((rep, passed))
}

fn run_green(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckEntry, CliError> {
    let (rep, passed) = green_report(setup, cfg)?;
    Ok(entry("green", passed, serde_json::to_value(&rep).expect("report serializes")))
}

pub fn check(cfg: &ExperimentConfig, only: Option<Suite>) -> Result<(CheckSummary, Timings), CliError> {
    let mut timings = Timings::default();
    let setup = timings.time("setup", || Setup::new(cfg))?;
    let mut suites: Vec<Suite> = match only {
        Some(s) => vec![s],
        None => cfg.check.suites.clone(),
    };
    suites.sort();
    suites.dedup();
    let mut checks = Vec::new();
    let mut blocked = false;
    for s in suites {
        if blocked {
            checks.push(CheckEntry { name: s.name(), passed: false, skipped: true, metrics: json!({ "reason": "boundary family is not admissible" }) });
            continue;
        }
        let e = timings.time(s.name(), || match s {
            Suite::Admissibility => run_admissibility(&setup, cfg),
            Suite::Continuity => run_continuity(&setup, cfg),
            Suite::Flux => run_flux(&setup, cfg),
            Suite::Energy => run_energy(&setup, cfg),
            Suite::Support => run_support(&setup, cfg),
            Suite::Green => run_green(&setup, cfg),
        })?;
        if s == Suite::Admissibility && !e.passed {
            blocked = true;
        }
        checks.push(e);
    }
    let pass = checks.iter().all(|c| c.passed);
    Ok((CheckSummary { command: "check", family: setup.family.name(), checks, pass }, timings))
}

#[derive(Clone, Debug, Serialize)]
pub struct CircleCheck {
    pub points: usize,
    pub max_mode: i32,
    /// `max |λ − (±(k+½)/r)|` over `|k| ≤ max_mode`.
    pub max_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub command: &'static str,
    pub t: f64,
    pub boundary: Vec<ModeSpectrum>,
    pub circle: Option<CircleCheck>,
    /// Per mode: the eigenvalues of the compressed operator nearest zero.
    pub operator_low: Vec<(i32, Vec<f64>)>,
    pub pass: bool,
}

pub fn spectrum(cfg: &ExperimentConfig) -> Result<SpectrumSummary, CliError> {
    let setup = Setup::new(cfg)?;
    let t = setup.t_initial;
    let spec = setup.family.spec().clone();
    let two = setup.geometry.dim() == SpatialDim::Two;
    let boundary = if two { boundary_spectrum(&spec, t, true)? } else { Vec::new() };
    let circle = if two {
        let r = setup.geometry.radius(t).expect("cylinder");
        let kmax = setup.geometry.modes().iter().copied().max().unwrap_or(0).max(8);
        let m = (4 * (kmax as usize + 1)).next_power_of_two().max(64);
        let mut max_error: f64 = 0.0;
        for comp in 0..2 {
            let ev = circle_boundary_spectrum(&spec, comp, t, m)?;
            for k in -kmax..=kmax {
                for sign in [1.0, -1.0] {
                    let target = sign * (k as f64 + 0.5) / r;
                    let near = ev.iter().map(|l| (l - target).abs()).fold(f64::INFINITY, f64::min);
                    max_error = max_error.max(near);
                }
            }
        }
        Some(CircleCheck { points: m, max_mode: kmax, max_error })
    } else {
        None
    };
    let model = CliffordModel::new(setup.geometry.dim());
    let mut operator_low = Vec::new();
    for k in setup.geometry.modes() {
        let op = DiscreteOperator::build(&setup.geometry, &model, &setup.grid, k, t)?;
        let v = constraint_subspace(&op, &setup.family.block(k, t)?, 1)?;
        let mut ev = constrained_operator(&op, &v)?.eigenvalues()?;
        ev.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        ev.truncate(8);
        ev.sort_by(f64::total_cmp);
        operator_low.push((k, ev));
    }
    let pass = circle.as_ref().is_none_or(|c| c.max_error <= 1e-6);
    Ok(SpectrumSummary { command: "spectrum", t, boundary, circle, operator_low, pass })
}
