//! Time integration of `(∂_t + iD̃_t)ψ̃ = f̌` on the constraint subspace:
//! Crank–Nicolson for the boundary value problem and RK4 for the mollified
//! (regularized) problem.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::ProjectorFamily;
use crate::clifford::CliffordModel;
use crate::discrete::{
    constrained_operator, constrained_operator_unchecked, constraint_subspace, mollifier_weight, ConstrainedOperator,
    ConstraintSubspace, DiscreteOperator, Field, Grid, SpectralDecomposition,
};
use crate::error::{precondition, Error, Result};
use crate::geometry::{Geometry, Interval};
use crate::profile::bump;
use crate::spinor::{c, Spinor, ZERO_SPINOR};
use crate::C64;

pub const RK4_STABILITY: f64 = 2.8;
const TRACE_TOL: f64 = 1e-12;

/// `ψ̃ = w(t) ψ`.
pub fn tilde_transform(geometry: &Geometry, psi: &[Spinor], t: f64) -> Field {
    let w = geometry.tilde_weight(t);
    psi.iter().map(|s| [s[0] * w, s[1] * w]).collect()
}

pub fn tilde_inverse(geometry: &Geometry, psi: &[Spinor], t: f64) -> Field {
    let w = 1.0 / geometry.tilde_weight(t);
    psi.iter().map(|s| [s[0] * w, s[1] * w]).collect()
}

/// `f̌ = −γ(ν) w N f`.
pub fn source_to_tilde(geometry: &Geometry, model: &CliffordModel, f: &Spinor, t: f64) -> Spinor {
    let s = -geometry.tilde_weight(t) * geometry.lapse(t);
    let g = model.gamma_nu().apply(f);
    [g[0] * s, g[1] * s]
}

/// Inverse of [`source_to_tilde`] (`γ(ν)² = 1`).
pub fn source_from_tilde(geometry: &Geometry, model: &CliffordModel, f: &Spinor, t: f64) -> Spinor {
    let s = -1.0 / (geometry.tilde_weight(t) * geometry.lapse(t));
    let g = model.gamma_nu().apply(f);
    [g[0] * s, g[1] * s]
}

/// Physical source term, per angular mode.
pub trait Source: Send + Sync {
    fn eval(&self, mode: i32, t: f64, x: f64) -> Spinor;
    /// Bounding box `(time, space)` of the support; `None` for the zero source.
    fn support(&self) -> Option<(Interval, Interval)>;
    /// `false` if the source vanishes identically in this mode.
    fn acts_on(&self, _mode: i32) -> bool {
        self.support().is_some()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroSource;

impl Source for ZeroSource {
    fn eval(&self, _: i32, _: f64, _: f64) -> Spinor {
        ZERO_SPINOR
    }
    fn support(&self) -> Option<(Interval, Interval)> {
        None
    }
}

/// Separable bump `b((t−t_c)/t_w) b((x−x_c)/x_w) · amplitude` in one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSource {
    #[serde(default)]
    pub mode: i32,
    pub t_center: f64,
    pub t_half_width: f64,
    pub x_center: f64,
    pub x_half_width: f64,
    /// `[[re, im], [re, im]]`
    pub amplitude: [[f64; 2]; 2],
}

impl BumpSource {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_half_width > 0.0) || !(self.x_half_width > 0.0) {
            return Err(precondition("source bump widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub bumps: Vec<BumpSource>,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        self.bumps.iter().try_for_each(BumpSource::validate)
    }
}

impl Source for SourceSpec {
    fn acts_on(&self, mode: i32) -> bool {
        self.bumps.iter().any(|b| b.mode == mode && b.amplitude.iter().flatten().any(|v| *v != 0.0))
    }

    fn eval(&self, mode: i32, t: f64, x: f64) -> Spinor {
        let mut out = ZERO_SPINOR;
        for b in self.bumps.iter().filter(|b| b.mode == mode) {
            let s = bump((t - b.t_center) / b.t_half_width) * bump((x - b.x_center) / b.x_half_width);
            if s != 0.0 {
                out[0] += c(b.amplitude[0][0], b.amplitude[0][1]) * s;
                out[1] += c(b.amplitude[1][0], b.amplitude[1][1]) * s;
            }
        }
        out
    }

    fn support(&self) -> Option<(Interval, Interval)> {
        let mut it = self.bumps.iter().filter(|b| b.amplitude.iter().flatten().any(|v| *v != 0.0));
        let first = it.next()?;
        let mut tb = Interval::new(first.t_center - first.t_half_width, first.t_center + first.t_half_width);
        let mut xb = Interval::new(first.x_center - first.x_half_width, first.x_center + first.x_half_width);
        for b in it {
            tb = Interval::new(tb.lo.min(b.t_center - b.t_half_width), tb.hi.max(b.t_center + b.t_half_width));
            xb = Interval::new(xb.lo.min(b.x_center - b.x_half_width), xb.hi.max(b.x_center + b.x_half_width));
        }
        Some((tb, xb))
    }
}

/// Closure-backed source.
pub struct FnSource<F> {
    pub f: F,
    pub support: Option<(Interval, Interval)>,
}

impl<F: Fn(i32, f64, f64) -> Spinor + Send + Sync> Source for FnSource<F> {
    fn eval(&self, mode: i32, t: f64, x: f64) -> Spinor {
        (self.f)(mode, t, x)
    }
    fn support(&self) -> Option<(Interval, Interval)> {
        self.support
    }
}

/// Initial data on `Σ_{t_initial}` (physical picture, one field per mode in
/// the order of `Geometry::modes`) and a source.
#[derive(Clone)]
pub struct CauchyData {
    pub psi0: Vec<Field>,
    pub source: Arc<dyn Source>,
    pub window: (f64, f64),
    pub t_initial: f64,
}

impl CauchyData {
    pub fn new(psi0: Vec<Field>, source: Arc<dyn Source>, window: (f64, f64)) -> Self {
        CauchyData { psi0, source, window, t_initial: 0.0 }
    }

    pub fn homogeneous(psi0: Vec<Field>, window: (f64, f64)) -> Self {
        Self::new(psi0, Arc::new(ZeroSource), window)
    }

    pub fn validate(&self, geometry: &Geometry, grid: &Grid) -> Result<()> {
        let (t0, t1) = self.window;
        if !(t0 <= self.t_initial && self.t_initial <= t1) {
            return Err(precondition(format!("initial time {} outside window [{t0}, {t1}]", self.t_initial)));
        }
        let modes = geometry.modes();
        if self.psi0.len() != modes.len() {
            return Err(Error::InvalidData(format!("expected {} mode fields, got {}", modes.len(), self.psi0.len())));
        }
        for f in &self.psi0 {
            if f.len() != grid.nx() {
                return Err(Error::InvalidData(format!("field has {} nodes, grid has {}", f.len(), grid.nx())));
            }
            let scale = f.iter().map(crate::spinor::norm_sqr).fold(0.0, f64::max).sqrt();
            let edge = crate::spinor::norm_sqr(&f[0]).max(crate::spinor::norm_sqr(&f[f.len() - 1])).sqrt();
            if edge > TRACE_TOL * scale.max(1e-300) && edge > 0.0 {
                return Err(Error::InvalidData("initial data must vanish at the boundary".into()));
            }
        }
        if let Some((_, xs)) = self.source.support() {
            if xs.lo <= 0.0 || xs.hi >= grid.length() {
                return Err(Error::SourceTouchesBoundary);
            }
        }
        geometry.validate_window(t0, t1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StorePolicy {
    All,
    /// Snapshots nearest to the requested times.
    Times(Vec<f64>),
    Endpoints,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub dt: f64,
    pub store: StorePolicy,
    /// Refuse non-Hermitian compressions (disable only for negative controls).
    pub enforce_selfadjoint: bool,
}

impl SolveOptions {
    pub fn new(dt: f64) -> Self {
        SolveOptions { dt, store: StorePolicy::All, enforce_selfadjoint: true }
    }

    pub fn store(mut self, store: StorePolicy) -> Self {
        self.store = store;
        self
    }

    pub fn unchecked(mut self) -> Self {
        self.enforce_selfadjoint = false;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    CrankNicolson,
    MollifiedRk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeMeta {
    pub scheme: Scheme,
    pub dt_forward: f64,
    pub dt_backward: f64,
    pub epsilon: Option<f64>,
    pub t_initial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    /// `Σ_k ‖ψ̃_k‖²_H`.
    pub norm_sqr: f64,
    /// Outward boundary flux summed over modes (`d‖ψ̃‖²/dt = −flux + source`).
    pub flux: f64,
    /// Distance moved by the orthogonal re-projection onto `V_B(t)`.
    pub projection_defect: f64,
}

/// Source bookkeeping for `[t0, t1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub t0: f64,
    pub t1: f64,
    /// `Σ_k ‖f̌_k(t_mid)‖²_H`.
    pub forcing_norm_sqr: f64,
    pub lapse_mid: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub index: usize,
    pub t: f64,
    /// `ψ̃` per mode.
    pub fields: Vec<Field>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub modes: Vec<i32>,
    pub grid: Grid,
    pub meta: SchemeMeta,
    pub steps: Vec<StepDiagnostics>,
    pub intervals: Vec<IntervalRecord>,
    pub snapshots: Vec<Snapshot>,
    /// `c_E` with physical energy `c_E Σ_k ‖ψ̃_k‖²_H`.
    pub energy_scale: f64,
}

impl Trajectory {
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let (i, d) = self
            .times
            .iter()
            .enumerate()
            .map(|(i, s)| (i, (s - t).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        let tol = 1e-9 * (1.0 + t.abs()) + 0.5 * self.meta.dt_forward.abs().max(self.meta.dt_backward.abs()) * 1e-6;
        (d <= tol).then_some(i)
    }

    pub fn snapshot(&self, index: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.index == index)
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshot(self.index_of(t)?)
    }

    /// Snapshot closest in time.
    pub fn nearest_snapshot(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    pub fn physical_energy(&self, index: usize) -> f64 {
        self.energy_scale * self.steps[index].norm_sqr
    }
}

struct ModeRun {
    norm_sqr: Vec<f64>,
    flux: Vec<f64>,
    defect: Vec<f64>,
    forcing: Vec<f64>,
    stored: Vec<(usize, Field)>,
}

/// Step layout shared by every mode.
struct TimeLayout {
    times: Vec<f64>,
    init_index: usize,
    dt_forward: f64,
    dt_backward: f64,
}

fn layout(window: (f64, f64), t_init: f64, dt: f64) -> Result<TimeLayout> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(precondition("dt must be positive"));
    }
    let split = |span: f64| -> (usize, f64) {
        if span <= 0.0 {
            return (0, dt);
        }
        let n = ((span / dt).round() as usize).max(1);
        (n, span / n as f64)
    };
    let (nb, dtb) = split(t_init - window.0);
    let (nf, dtf) = split(window.1 - t_init);
    let mut times = Vec::with_capacity(nb + nf + 1);
    for i in (1..=nb).rev() {
        times.push(if i == nb { window.0 } else { t_init - dtb * i as f64 });
    }
    times.push(t_init);
    for i in 1..=nf {
        times.push(if i == nf { window.1 } else { t_init + dtf * i as f64 });
    }
    Ok(TimeLayout { times, init_index: nb, dt_forward: dtf, dt_backward: dtb })
}

fn stored_indices(policy: &StorePolicy, times: &[f64]) -> Vec<bool> {
    let mut keep = vec![false; times.len()];
    match policy {
        StorePolicy::All => keep.iter_mut().for_each(|k| *k = true),
        StorePolicy::Endpoints => {
            keep[0] = true;
            *keep.last_mut().unwrap() = true;
        }
        StorePolicy::Times(ts) => {
            for t in ts {
                if let Some((i, _)) = times.iter().enumerate().min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs())) {
                    keep[i] = true;
                }
            }
        }
    }
    keep
}

/// Cache of per-time operators for one mode.
struct ModeContext<'a> {
    geometry: &'a Geometry,
    family: &'a ProjectorFamily,
    model: CliffordModel,
    grid: &'a Grid,
    mode: i32,
    enforce: bool,
}

struct Frozen {
    op: DiscreteOperator,
    space: ConstraintSubspace,
    matrix: ConstrainedOperator,
}

impl ModeContext<'_> {
    fn freeze(&self, t: f64) -> Result<Frozen> {
        let op = DiscreteOperator::build(self.geometry, &self.model, self.grid, self.mode, t)?;
        let p = self.family.block(self.mode, t)?;
        let space = constraint_subspace(&op, &p, 1)?;
        let matrix = if self.enforce {
            constrained_operator(&op, &space)?
        } else {
            constrained_operator_unchecked(&op, &space)
        };
        Ok(Frozen { op, space, matrix })
    }

    fn space(&self, t: f64) -> Result<(DiscreteOperator, ConstraintSubspace)> {
        let op = DiscreteOperator::build(self.geometry, &self.model, self.grid, self.mode, t)?;
        let p = self.family.block(self.mode, t)?;
        let space = constraint_subspace(&op, &p, 1)?;
        Ok((op, space))
    }

    fn forcing(&self, source: &dyn Source, t: f64) -> Field {
        self.grid.sample(|x| source_to_tilde(self.geometry, &self.model, &source.eval(self.mode, t, x), t))
    }
}

fn field_diff_norm(grid: &Grid, a: &[Spinor], b: &[Spinor]) -> f64 {
    let d: Vec<Spinor> = a.iter().zip(b).map(|(x, y)| [x[0] - y[0], x[1] - y[1]]).collect();
    grid.norm_sqr(&d).sqrt()
}

fn run_mode_cn(ctx: &ModeContext, data: &CauchyData, psi0: &[Spinor], lay: &TimeLayout, keep: &[bool]) -> Result<ModeRun> {
    let n_t = lay.times.len();
    let mut run = ModeRun {
        norm_sqr: vec![0.0; n_t],
        flux: vec![0.0; n_t],
        defect: vec![0.0; n_t],
        forcing: vec![0.0; n_t.saturating_sub(1)],
        stored: Vec::new(),
    };
    let grid = ctx.grid;
    let t_init = lay.times[lay.init_index];
    let static_op = ctx.geometry.is_static() && !ctx.family.is_time_dependent();
    let has_source = data.source.acts_on(ctx.mode);
    if !has_source && psi0.iter().all(|v| *v == ZERO_SPINOR) {
        // a zero mode stays zero; build the operator once so that errors still surface
        ctx.freeze(lay.times[lay.init_index])?;
        for (idx, k) in keep.iter().enumerate() {
            if *k {
                run.stored.push((idx, grid.zeros()));
            }
        }
        return Ok(run);
    }

    let tilde0 = tilde_transform(ctx.geometry, psi0, t_init);
    let (op0, v0) = ctx.space(t_init)?;
    let start = v0.project(&tilde0);
    let record = |run: &mut ModeRun, idx: usize, op: &DiscreteOperator, psi: &Field, defect: f64| {
        run.norm_sqr[idx] = grid.norm_sqr(psi);
        run.flux[idx] = op.boundary_flux(psi);
        run.defect[idx] = defect;
        if keep[idx] {
            run.stored.push((idx, psi.clone()));
        }
    };
    record(&mut run, lay.init_index, &op0, &start, field_diff_norm(grid, &start, &tilde0));

    for forward in [true, false] {
        let span = if forward { n_t - 1 - lay.init_index } else { lay.init_index };
        if span == 0 {
            continue;
        }
        let mut psi = start.clone();
        let mut cached: Option<(Frozen, crate::discrete::ShiftedSolver)> = None;
        for s in 0..span {
            let (i_from, i_to) = if forward {
                (lay.init_index + s, lay.init_index + s + 1)
            } else {
                (lay.init_index - s, lay.init_index - s - 1)
            };
            let (t_from, t_to) = (lay.times[i_from], lay.times[i_to]);
            let step = t_to - t_from;
            let t_mid = 0.5 * (t_from + t_to);
            let rebuild = !static_op || cached.is_none();
            if rebuild {
                let fr = ctx.freeze(t_mid)?;
                let solver = fr.matrix.shifted(c(1.0, 0.0), c(0.0, 0.5 * step))?;
                cached = Some((fr, solver));
            }
            let (fr, solver) = cached.as_ref().unwrap();
            let mut x = fr.space.restrict(&psi);
            let ax = fr.matrix.apply(&x);
            let half = c(0.0, -0.5 * step);
            for (xi, ai) in x.iter_mut().zip(&ax) {
                *xi += half * ai;
            }
            if has_source {
                let f = ctx.forcing(data.source.as_ref(), t_mid);
                let fi = i_from.min(i_to);
                run.forcing[fi] = grid.norm_sqr(&f);
                let g = fr.space.restrict(&f);
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi += gi * step;
                }
            }
            let next = solver.solve(&x)?;
            let lifted = fr.space.lift(&next);
            let (op_to, defect, new_psi) = if static_op {
                (fr.op.clone(), 0.0, lifted)
            } else {
                let (op_to, v_to) = ctx.space(t_to)?;
                let projected = v_to.project(&lifted);
                let d = field_diff_norm(grid, &projected, &lifted);
                (op_to, d, projected)
            };
            psi = new_psi;
            record(&mut run, i_to, &op_to, &psi, defect);
        }
    }
    Ok(run)
}

fn assemble(
    geometry: &Geometry,
    grid: &Grid,
    data: &CauchyData,
    lay: TimeLayout,
    keep: &[bool],
    runs: Vec<ModeRun>,
    meta: SchemeMeta,
) -> Trajectory {
    let n_t = lay.times.len();
    let modes = geometry.modes();
    let mut steps = Vec::with_capacity(n_t);
    for i in 0..n_t {
        steps.push(StepDiagnostics {
            t: lay.times[i],
            norm_sqr: runs.iter().map(|r| r.norm_sqr[i]).sum(),
            flux: runs.iter().map(|r| r.flux[i]).sum(),
            projection_defect: runs.iter().map(|r| r.defect[i]).fold(0.0, f64::max),
        });
    }
    let intervals = (0..n_t.saturating_sub(1))
        .map(|i| {
            let (a, b) = (lay.times[i], lay.times[i + 1]);
            IntervalRecord {
                t0: a,
                t1: b,
                forcing_norm_sqr: runs.iter().map(|r| r.forcing[i]).sum(),
                lapse_mid: geometry.lapse(0.5 * (a + b)),
            }
        })
        .collect();
    let mut per_index: Vec<Vec<Field>> = vec![Vec::new(); n_t];
    for run in runs {
        for (idx, f) in run.stored {
            per_index[idx].push(f);
        }
    }
    let snapshots = per_index
        .into_iter()
        .enumerate()
        .filter(|(i, f)| keep[*i] && f.len() == modes.len())
        .map(|(index, fields)| Snapshot { index, t: lay.times[index], fields })
        .collect();
    let _ = data;
    Trajectory {
        times: lay.times,
        modes,
        grid: grid.clone(),
        meta,
        steps,
        intervals,
        snapshots,
        energy_scale: geometry.energy_scale(),
    }
}

/// Crank–Nicolson solve of the Cauchy problem on `V_B`, forward to `window.1`
/// and backward to `window.0` from `data.t_initial`.
pub fn solve_cauchy(
    data: &CauchyData,
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    data.validate(geometry, grid)?;
    let lay = layout(data.window, data.t_initial, opts.dt)?;
    let keep = stored_indices(&opts.store, &lay.times);
    let modes = geometry.modes();
    let runs = modes
        .par_iter()
        .zip(data.psi0.par_iter())
        .map(|(&mode, psi0)| {
            let ctx = ModeContext {
                geometry,
                family,
                model: CliffordModel::new(geometry.dim()),
                grid,
                mode,
                enforce: opts.enforce_selfadjoint,
            };
            run_mode_cn(&ctx, data, psi0, &lay, &keep)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = SchemeMeta {
        scheme: Scheme::CrankNicolson,
        dt_forward: lay.dt_forward,
        dt_backward: lay.dt_backward,
        epsilon: None,
        t_initial: data.t_initial,
    };
    Ok(assemble(geometry, grid, data, lay, &keep, runs, meta))
}

/// Norm of the regularized generator `−iD̃_B J^(ε)`: `max_λ |λ| e^{−ε(1+λ²)}`.
pub fn regularized_generator_norm(spec: &SpectralDecomposition, epsilon: f64) -> f64 {
    spec.eigenvalues
        .iter()
        .map(|l| l.abs() * mollifier_weight(epsilon, *l))
        .fold(0.0, f64::max)
}

/// RK4 for `(∂_t + iD̃_{t,B}J^(ε))ψ̃ = f̌`. The boundary family must be
/// time-independent; a time-dependent lapse is allowed when the slice is
/// static (the operator then only rescales).
pub fn solve_regularized(
    data: &CauchyData,
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    opts: &SolveOptions,
    epsilon: f64,
) -> Result<Trajectory> {
    if !(epsilon > 0.0) {
        return Err(precondition("mollifier parameter must be positive"));
    }
    if family.is_time_dependent() {
        return Err(precondition("the regularized solver needs a time-independent boundary family"));
    }
    if let crate::geometry::Slice::Cylinder { radius, .. } = &geometry.slice {
        if !radius.is_constant() {
            return Err(precondition("the regularized solver needs a static slice geometry"));
        }
    }
    data.validate(geometry, grid)?;
    let lay = layout(data.window, data.t_initial, opts.dt)?;
    let keep = stored_indices(&opts.store, &lay.times);
    let modes = geometry.modes();
    let t_init = data.t_initial;
    let lapse_ref = geometry.lapse(t_init);
    let lapse_max = geometry.lapse.max_on(data.window.0, data.window.1);
    let model = CliffordModel::new(geometry.dim());

    struct Prepared {
        space: ConstraintSubspace,
        op: DiscreteOperator,
        spec: SpectralDecomposition,
    }
    let prepared = modes
        .par_iter()
        .map(|&mode| -> Result<Prepared> {
            let op = DiscreteOperator::build(geometry, &model, grid, mode, t_init)?;
            let p = family.block(mode, t_init)?;
            let space = constraint_subspace(&op, &p, 1)?;
            let spec = constrained_operator(&op, &space)?.eigen()?;
            Ok(Prepared { space, op, spec })
        })
        .collect::<Result<Vec<_>>>()?;

    // stability over the window: eigenvalues scale with N(t)/N(t_init)
    let mut gnorm: f64 = 0.0;
    for p in &prepared {
        for l in &p.spec.eigenvalues {
            // |sλ| e^{−ε(1+s²λ²)} over s ∈ [0, s_max] peaks at sλ = (2ε)^{-1/2}
            let s_max = lapse_max / lapse_ref;
            let peak = (1.0 / (2.0 * epsilon)).sqrt();
            let m = if s_max * l.abs() >= peak { peak } else { s_max * l.abs() };
            gnorm = gnorm.max(m * mollifier_weight(epsilon, m));
        }
    }
    let dt_max = lay.dt_forward.max(lay.dt_backward);
    if dt_max * gnorm > RK4_STABILITY {
        return Err(Error::StepSizeTooLarge { dt: dt_max, bound: RK4_STABILITY / gnorm });
    }

    let runs = prepared
        .par_iter()
        .zip(modes.par_iter())
        .zip(data.psi0.par_iter())
        .map(|((prep, &mode), psi0)| -> Result<ModeRun> {
            let n_t = lay.times.len();
            let mut run = ModeRun {
                norm_sqr: vec![0.0; n_t],
                flux: vec![0.0; n_t],
                defect: vec![0.0; n_t],
                forcing: vec![0.0; n_t.saturating_sub(1)],
                stored: Vec::new(),
            };
            let has_source = data.source.acts_on(mode);
            let u = &prep.spec.vectors;
            let lam = &prep.spec.eigenvalues;
            let gen = |t: f64, j: usize| -> C64 {
                let l = lam[j] * geometry.lapse(t) / lapse_ref;
                c(0.0, -l * mollifier_weight(epsilon, l))
            };
            let forcing_eig = |t: f64| -> (Vec<C64>, f64) {
                let f = grid.sample(|x| source_to_tilde(geometry, &model, &data.source.eval(mode, t, x), t));
                let n2 = grid.norm_sqr(&f);
                (crate::discrete::matvec_adjoint(u, &prep.space.restrict(&f)), n2)
            };
            let to_field = |y: &[C64]| prep.space.lift(&crate::discrete::matvec(u, y));
            let tilde0 = tilde_transform(geometry, psi0, t_init);
            let y0 = crate::discrete::matvec_adjoint(u, &prep.space.restrict(&tilde0));
            let record = |run: &mut ModeRun, idx: usize, y: &[C64]| {
                let psi = to_field(y);
                run.norm_sqr[idx] = grid.norm_sqr(&psi);
                let op = if geometry.lapse.is_constant() {
                    prep.op.clone()
                } else {
                    DiscreteOperator::build(geometry, &model, grid, mode, lay.times[idx]).expect("validated geometry")
                };
                run.flux[idx] = op.boundary_flux(&psi);
                if keep[idx] {
                    run.stored.push((idx, psi));
                }
            };
            record(&mut run, lay.init_index, &y0);
            for forward in [true, false] {
                let span = if forward { n_t - 1 - lay.init_index } else { lay.init_index };
                let mut y = y0.clone();
                for s in 0..span {
                    let (i_from, i_to) = if forward {
                        (lay.init_index + s, lay.init_index + s + 1)
                    } else {
                        (lay.init_index - s, lay.init_index - s - 1)
                    };
                    let t = lay.times[i_from];
                    let h = lay.times[i_to] - t;
                    let (f0, f1, f2) = if has_source {
                        let (a, _) = forcing_eig(t);
                        let (b, nb) = forcing_eig(t + 0.5 * h);
                        let (cc, _) = forcing_eig(t + h);
                        run.forcing[i_from.min(i_to)] = nb;
                        (Some(a), Some(b), Some(cc))
                    } else {
                        (None, None, None)
                    };
                    let rhs = |tt: f64, v: &[C64], f: &Option<Vec<C64>>| -> Vec<C64> {
                        v.iter()
                            .enumerate()
                            .map(|(j, vj)| gen(tt, j) * vj + f.as_ref().map_or(c(0.0, 0.0), |f| f[j]))
                            .collect()
                    };
                    let axpy = |a: &[C64], s: f64, b: &[C64]| -> Vec<C64> { a.iter().zip(b).map(|(x, z)| x + z * s).collect() };
                    let k1 = rhs(t, &y, &f0);
                    let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1), &f1);
                    let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2), &f1);
                    let k4 = rhs(t + h, &axpy(&y, h, &k3), &f2);
                    for j in 0..y.len() {
                        y[j] += (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (h / 6.0);
                    }
                    record(&mut run, i_to, &y);
                }
            }
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = SchemeMeta {
        scheme: Scheme::MollifiedRk4,
        dt_forward: lay.dt_forward,
        dt_backward: lay.dt_backward,
        epsilon: Some(epsilon),
        t_initial: t_init,
    };
    Ok(assemble(geometry, grid, data, lay, &keep, runs, meta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub delta: f64,
    pub gronwall_constant: f64,
    /// `(t, physical ‖Δψ(t)‖ / δ)`.
    pub ratios: Vec<(f64, f64)>,
    /// Energy-estimate bound on each ratio.
    pub bounds: Vec<f64>,
    pub max_ratio: f64,
    pub passed: bool,
}

/// Random smooth perturbation data `(φ, g)` supported away from `∂Σ`.
pub fn random_perturbation(geometry: &Geometry, grid: &Grid, window: (f64, f64), seed: u64) -> (Vec<Field>, SourceSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = geometry.length;
    let modes = geometry.modes();
    // a few active modes; the rest stay exactly zero
    let mut active: Vec<i32> = Vec::new();
    while active.len() < modes.len().min(3) {
        let k = modes[rng.random_range(0..modes.len())];
        if !active.contains(&k) {
            active.push(k);
        }
    }
    let amp = |rng: &mut ChaCha8Rng| [[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]];
    // wide bumps: the discrete front spreads ~ (t h²)^{1/3} ahead of the cone
    let placement = |rng: &mut ChaCha8Rng| {
        let w = rng.random_range(0.25..0.35) * len;
        let margin = 0.03 * len;
        (rng.random_range(w + margin..len - w - margin), w)
    };
    let mut psi: Vec<Field> = vec![grid.zeros(); modes.len()];
    for &k in &active {
        let (cx, w) = placement(&mut rng);
        let a = amp(&mut rng);
        let idx = modes.iter().position(|&m| m == k).expect("active mode");
        psi[idx] = grid.sample(|x| {
            let b = bump((x - cx) / w);
            [c(a[0][0], a[0][1]) * b, c(a[1][0], a[1][1]) * b]
        });
    }
    let span = window.1 - window.0;
    let bumps = active
        .iter()
        .map(|&mode| {
            let (x_center, x_half_width) = placement(&mut rng);
            BumpSource {
                mode,
                t_center: window.0 + rng.random_range(0.3..0.7) * span,
                t_half_width: rng.random_range(0.15..0.3) * span,
                x_center,
                x_half_width,
                amplitude: amp(&mut rng),
            }
        })
        .collect();
    (psi, SourceSpec { bumps })
}

/// Physical `∫∫|f|² dvol_M` from the interval records.
pub fn source_energy(traj: &Trajectory, t0: f64, t1: f64) -> f64 {
    traj.intervals
        .iter()
        .filter(|r| r.t0 >= t0.min(t1) - 1e-12 && r.t1 <= t0.max(t1) + 1e-12)
        .map(|r| traj.energy_scale * r.forcing_norm_sqr / r.lapse_mid * (r.t1 - r.t0))
        .sum()
}

/// Solve for `(f, ψ₀)` and `(f + δg, ψ₀ + δφ)` and compare with the
/// energy-estimate bound `sqrt(e^{C|t|}(C·∫∫|g|² + ‖φ‖²))`.
pub fn solution_map_stability(
    data: &CauchyData,
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    opts: &SolveOptions,
    delta: f64,
    seed: u64,
) -> Result<StabilityReport> {
    if delta < 0.0 {
        return Err(precondition("perturbation scale must be nonnegative"));
    }
    let (phi, g) = random_perturbation(geometry, grid, data.window, seed);
    let base = solve_cauchy(data, geometry, family, grid, &opts.clone().store(StorePolicy::All))?;
    let perturbed_psi: Vec<Field> = data
        .psi0
        .iter()
        .zip(&phi)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| [x[0] + y[0] * delta, x[1] + y[1] * delta]).collect())
        .collect();
    let src = data.source.clone();
    let g_src = g.clone();
    let combined = FnSource {
        f: move |k: i32, t: f64, x: f64| {
            let a = src.eval(k, t, x);
            let b = g_src.eval(k, t, x);
            [a[0] + b[0] * delta, a[1] + b[1] * delta]
        },
        support: union_support(data.source.support(), g.support()),
    };
    let pert = CauchyData { psi0: perturbed_psi, source: Arc::new(combined), window: data.window, t_initial: data.t_initial };
    let other = solve_cauchy(&pert, geometry, family, grid, &opts.clone().store(StorePolicy::All))?;
    // perturbation alone, to evaluate the right-hand side of the bound
    let alone = CauchyData { psi0: phi.clone(), source: Arc::new(g), window: data.window, t_initial: data.t_initial };
    let pert_only = solve_cauchy(&alone, geometry, family, grid, &opts.clone().store(StorePolicy::Endpoints))?;
    let c_const = crate::analysis::estimate_constant(geometry, data.window);
    let phi_energy = geometry.energy_scale()
        * phi
            .iter()
            .map(|f| grid.norm_sqr(&tilde_transform(geometry, f, data.t_initial)))
            .sum::<f64>();
    let mut ratios = Vec::new();
    let mut bounds = Vec::new();
    let mut passed = true;
    for (a, b) in base.snapshots.iter().zip(&other.snapshots) {
        let diff: f64 = a.fields.iter().zip(&b.fields).map(|(x, y)| field_diff_norm(grid, x, y).powi(2)).sum();
        let ratio = if delta == 0.0 { 0.0 } else { (base.energy_scale * diff).sqrt() / delta };
        let dt = (a.t - data.t_initial).abs();
        let g_energy = source_energy(&pert_only, data.t_initial, a.t);
        let bound = ((c_const * dt).exp() * (c_const * g_energy + phi_energy)).sqrt();
        passed &= ratio <= bound * (1.0 + 1e-9);
        ratios.push((a.t, ratio));
        bounds.push(bound);
    }
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(StabilityReport { delta, gronwall_constant: c_const, ratios, bounds, max_ratio, passed })
}

fn union_support(a: Option<(Interval, Interval)>, b: Option<(Interval, Interval)>) -> Option<(Interval, Interval)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some((ta, xa)), Some((tb, xb))) => Some((
            Interval::new(ta.lo.min(tb.lo), ta.hi.max(tb.hi)),
            Interval::new(xa.lo.min(xb.lo), xa.hi.max(xb.hi)),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryOperatorSpec;
    use crate::profile::AnalyticFn;

    fn bump_field(grid: &Grid, center: f64, width: f64, amp: [C64; 2]) -> Field {
        grid.sample(|x| {
            let b = bump((x - center) / width);
            [amp[0] * b, amp[1] * b]
        })
    }

    fn strip_family() -> (Geometry, ProjectorFamily) {
        let g = Geometry::strip(1.0).unwrap();
        let fam = ProjectorFamily::transmission(&BoundaryOperatorSpec::new(g.clone())).unwrap();
        (g, fam)
    }

    #[test]
    fn zero_data_stays_zero() {
        let (g, fam) = strip_family();
        let grid = Grid::new(32, 1.0).unwrap();
        let data = CauchyData::homogeneous(vec![grid.zeros()], (-0.5, 0.5));
        let traj = solve_cauchy(&data, &g, &fam, &grid, &SolveOptions::new(0.01)).unwrap();
        assert!(traj.steps.iter().all(|s| s.norm_sqr == 0.0));
        assert_eq!(traj.times.first(), Some(&-0.5));
        assert_eq!(traj.times.last(), Some(&0.5));
    }

    #[test]
    fn backward_run_is_time_reflection_of_forward() {
        let (g, fam) = strip_family();
        let grid = Grid::new(64, 1.0).unwrap();
        let psi = bump_field(&grid, 0.5, 0.3, [c(1.0, 0.0), c(0.0, 0.5)]);
        let reflect = |f: &Field| -> Field { f.iter().map(|s| [s[0].conj(), -s[1].conj()]).collect() };
        let opts = SolveOptions::new(0.01);
        let fwd = solve_cauchy(&CauchyData::homogeneous(vec![psi.clone()], (0.0, 0.7)), &g, &fam, &grid, &opts).unwrap();
        let bwd = solve_cauchy(&CauchyData::homogeneous(vec![reflect(&psi)], (-0.7, 0.0)), &g, &fam, &grid, &opts).unwrap();
        let a = &fwd.snapshots.last().unwrap().fields[0];
        let b = &bwd.snapshots[0].fields[0];
        assert!(field_diff_norm(&grid, &reflect(a), b) < 1e-12);
        assert!((fwd.steps.last().unwrap().norm_sqr - grid.norm_sqr(&psi)).abs() < 1e-12);
    }

    #[test]
    fn boundary_data_rejected() {
        let (g, fam) = strip_family();
        let grid = Grid::new(32, 1.0).unwrap();
        let psi = grid.sample(|_| [c(1.0, 0.0), c(0.0, 0.0)]);
        let data = CauchyData::homogeneous(vec![psi], (0.0, 0.1));
        assert!(matches!(solve_cauchy(&data, &g, &fam, &grid, &SolveOptions::new(0.01)), Err(Error::InvalidData(_))));
        let src = SourceSpec {
            bumps: vec![BumpSource { mode: 0, t_center: 0.1, t_half_width: 0.05, x_center: 0.05, x_half_width: 0.1, amplitude: [[1.0, 0.0], [0.0, 0.0]] }],
        };
        let data = CauchyData::new(vec![grid.zeros()], Arc::new(src), (0.0, 0.2));
        assert!(matches!(solve_cauchy(&data, &g, &fam, &grid, &SolveOptions::new(0.01)), Err(Error::SourceTouchesBoundary)));
    }

    #[test]
    fn tilde_roundtrip_and_source_map() {
        let g = Geometry::cylinder(1.0, AnalyticFn::SinAffine { offset: 1.0, slope: 0.2, amplitude: 0.0, frequency: 0.0, phase: 0.0 }, 1)
            .unwrap()
            .with_lapse(AnalyticFn::SinAffine { offset: 1.0, slope: 0.0, amplitude: 0.5, frequency: 1.0, phase: 0.0 })
            .unwrap();
        let grid = Grid::new(16, 1.0).unwrap();
        let psi = grid.sample(|x| [c(x, 1.0), c(-x, 0.5)]);
        let back = tilde_inverse(&g, &tilde_transform(&g, &psi, 0.7), 0.7);
        assert!(field_diff_norm(&grid, &back, &psi) < 1e-15);
        let model = CliffordModel::new(g.dim());
        let f = [c(0.3, -0.1), c(1.0, 2.0)];
        let fc = source_to_tilde(&g, &model, &f, 0.4);
        let w = g.tilde_weight(0.4) * g.lapse(0.4);
        assert!((fc[0] + f[0] * w).norm() < 1e-15);
        assert!((fc[1] - f[1] * w).norm() < 1e-15);
        let f2 = source_from_tilde(&g, &model, &fc, 0.4);
        assert!((f2[0] - f[0]).norm() < 1e-15 && (f2[1] - f[1]).norm() < 1e-15);
        let strip = Geometry::strip(1.0).unwrap();
        assert_eq!(tilde_transform(&strip, &psi, 3.0), psi);
    }

    #[test]
    fn single_mode_stays_single() {
        let g = Geometry::cylinder(1.0, AnalyticFn::Const(1.0), 2).unwrap();
        let fam = ProjectorFamily::aps(&BoundaryOperatorSpec::new(g.clone())).unwrap();
        let grid = Grid::new(32, 1.0).unwrap();
        let mut psi0 = vec![grid.zeros(); 5];
        psi0[3] = bump_field(&grid, 0.5, 0.2, [c(1.0, 0.0), c(1.0, 0.0)]);
        let traj = solve_cauchy(&CauchyData::homogeneous(psi0, (0.0, 0.3)), &g, &fam, &grid, &SolveOptions::new(0.02)).unwrap();
        for s in &traj.snapshots {
            for (k, f) in s.fields.iter().enumerate() {
                if k != 3 {
                    assert!(f.iter().all(|v| v[0] == c(0.0, 0.0) && v[1] == c(0.0, 0.0)));
                }
            }
        }
    }

    #[test]
    fn regularized_step_limit() {
        let (g, fam) = strip_family();
        let grid = Grid::new(32, 1.0).unwrap();
        let psi = bump_field(&grid, 0.5, 0.3, [c(1.0, 0.0), c(0.0, 0.0)]);
        let data = CauchyData::homogeneous(vec![psi.clone()], (0.0, 0.5));
        let err = solve_regularized(&data, &g, &fam, &grid, &SolveOptions::new(0.5), 1e-4);
        assert!(matches!(err, Err(Error::StepSizeTooLarge { .. })));
        let traj = solve_regularized(&data, &g, &fam, &grid, &SolveOptions::new(0.01), 0.1).unwrap();
        let first = &traj.snapshots[0].fields[0];
        assert!(field_diff_norm(&grid, first, &psi) < 1e-14);
    }

    #[test]
    fn large_epsilon_freezes_dynamics() {
        let (g, fam) = strip_family();
        let grid = Grid::new(32, 1.0).unwrap();
        let psi = bump_field(&grid, 0.5, 0.3, [c(1.0, 0.0), c(0.0, 0.0)]);
        let data = CauchyData::homogeneous(vec![psi.clone()], (0.0, 1.0));
        let traj = solve_regularized(&data, &g, &fam, &grid, &SolveOptions::new(0.01), 6.0).unwrap();
        let last = &traj.snapshots.last().unwrap().fields[0];
        // generator norm ≤ e^{-ε}/sqrt(2ε)·…, so the state barely moves
        assert!(field_diff_norm(&grid, last, &psi) < (-6.0f64).exp() * grid.norm_sqr(&psi).sqrt());
    }

    #[test]
    fn stability_is_linear() {
        let (g, fam) = strip_family();
        let grid = Grid::new(32, 1.0).unwrap();
        let psi = bump_field(&grid, 0.5, 0.2, [c(1.0, 0.0), c(0.0, 0.0)]);
        let data = CauchyData::homogeneous(vec![psi], (0.0, 0.5));
        let opts = SolveOptions::new(0.02);
        let a = solution_map_stability(&data, &g, &fam, &grid, &opts, 1e-2, 3).unwrap();
        let b = solution_map_stability(&data, &g, &fam, &grid, &opts, 5e-3, 3).unwrap();
        assert!(a.passed && b.passed);
        for (x, y) in a.ratios.iter().zip(&b.ratios) {
            assert!((x.1 - y.1).abs() <= 1e-10 * x.1.max(1e-300) + 1e-12);
        }
        let z = solution_map_stability(&data, &g, &fam, &grid, &opts, 0.0, 3).unwrap();
        assert_eq!(z.max_ratio, 0.0);
    }
}
