//! Retarded and advanced Green operators `G±` built from the Cauchy problem
//! with vanishing data on a slice before (after) the source.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary::ProjectorFamily;
use crate::clifford::CliffordModel;
use crate::discrete::{constraint_subspace, DiscreteOperator, Field, Grid};
use crate::error::{precondition, Error, Result};
use crate::evolve::{solve_cauchy, source_from_tilde, source_to_tilde, CauchyData, FnSource, SolveOptions, Source, StorePolicy, Trajectory};
use crate::geometry::{Geometry, Interval};
use crate::profile::bump;
use crate::spinor::{c, Mat2, Spinor, ZERO_SPINOR};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Causality {
    Retarded,
    Advanced,
}

/// Global time grid `T0 + n·dt` on `[T0, T1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(window: (f64, f64), dt: f64) -> Result<Self> {
        if !(window.1 > window.0) || !(dt > 0.0) {
            return Err(precondition("time grid needs t1 > t0 and dt > 0"));
        }
        let steps = (((window.1 - window.0) / dt).round() as usize).max(1);
        Ok(TimeGrid { t0: window.0, t1: window.1, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t1
        } else {
            self.t0 + self.dt() * n as f64
        }
    }

    /// Node closest to `t`.
    pub fn snap(&self, t: f64) -> f64 {
        let n = ((t - self.t0) / self.dt()).round().clamp(0.0, self.steps as f64) as usize;
        self.time(n)
    }
}

#[derive(Clone, Debug)]
pub struct GreenResult {
    pub causality: Causality,
    /// Slice carrying the vanishing data (snapped to the time grid).
    pub slice: f64,
    pub trajectory: Trajectory,
}

impl GreenResult {
    /// `ψ̃` per mode at time node `t`; zero on the far side of the slice.
    pub fn fields_at(&self, t: f64) -> Option<Vec<Field>> {
        let outside = match self.causality {
            Causality::Retarded => t < self.slice - 1e-12,
            Causality::Advanced => t > self.slice + 1e-12,
        };
        if outside {
            let grid = &self.trajectory.grid;
            return Some(vec![grid.zeros(); self.trajectory.modes.len()]);
        }
        self.trajectory.snapshot_at(t).map(|s| s.fields.clone())
    }
}

fn green(
    causality: Causality,
    source: Arc<dyn Source>,
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    time: &TimeGrid,
    slice: Option<f64>,
) -> Result<GreenResult> {
    let support = source.support();
    let slice = time.snap(slice.unwrap_or(match causality {
        Causality::Retarded => time.t0,
        Causality::Advanced => time.t1,
    }));
    if let Some((ts, _)) = support {
        let ok = match causality {
            Causality::Retarded => slice <= ts.lo,
            Causality::Advanced => slice >= ts.hi,
        };
        if !ok {
            return Err(precondition(format!("slice {slice} meets the source support [{}, {}]", ts.lo, ts.hi)));
        }
    }
    let window = match causality {
        Causality::Retarded => (slice, time.t1),
        Causality::Advanced => (time.t0, slice),
    };
    let data = CauchyData { psi0: vec![grid.zeros(); geometry.modes().len()], source, window, t_initial: slice };
    let opts = SolveOptions::new(time.dt()).store(StorePolicy::All);
    let trajectory = solve_cauchy(&data, geometry, family, grid, &opts)?;
    Ok(GreenResult { causality, slice, trajectory })
}

/// `G⁺f`: vanishing data on `slice` (default `T0`), evolved forward.
pub fn green_plus(
    source: Arc<dyn Source>,
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    time: &TimeGrid,
    slice: Option<f64>,
) -> Result<GreenResult> {
    green(Causality::Retarded, source, geometry, family, grid, time, slice)
}

/// `G⁻f`: vanishing data on `slice` (default `T1`), evolved backward.
pub fn green_minus(
    source: Arc<dyn Source>,
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    time: &TimeGrid,
    slice: Option<f64>,
) -> Result<GreenResult> {
    green(Causality::Advanced, source, geometry, family, grid, time, slice)
}

/// Smooth compactly supported `ψ̃(t,x) = b(t) b(x) · amplitude`, used to test
/// `G±Dψ = ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpinor {
    #[serde(default)]
    pub mode: i32,
    pub t_center: f64,
    pub t_half_width: f64,
    pub x_center: f64,
    pub x_half_width: f64,
    pub amplitude: [[f64; 2]; 2],
}

fn bump_and_derivative(u: f64) -> (f64, f64) {
    let b = bump(u);
    if b == 0.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - u * u;
    (b, -2.0 * u / (q * q) * b)
}

impl TestSpinor {
    fn amp(&self) -> [C64; 2] {
        [c(self.amplitude[0][0], self.amplitude[0][1]), c(self.amplitude[1][0], self.amplitude[1][1])]
    }

    pub fn eval(&self, mode: i32, t: f64, x: f64) -> Spinor {
        if mode != self.mode {
            return ZERO_SPINOR;
        }
        let s = bump((t - self.t_center) / self.t_half_width) * bump((x - self.x_center) / self.x_half_width);
        let a = self.amp();
        [a[0] * s, a[1] * s]
    }

    /// Physical `Dψ` with `ψ̃` this test spinor: `f̌ = ∂_tψ̃ + iD̃_tψ̃`.
    pub fn dirac(&self, geometry: &Geometry) -> Result<impl Source> {
        let model = CliffordModel::new(geometry.dim());
        let sym = model.spatial_symbol(crate::clifford::Covector::DX)?;
        let mass = match geometry.dim() {
            crate::clifford::SpatialDim::One => Mat2::zero(),
            crate::clifford::SpatialDim::Two => model.spatial_symbol(crate::clifford::Covector::ANGULAR)?.scale(c(0.0, 1.0)),
        };
        let this = self.clone();
        let g = geometry.clone();
        let support = Some((
            Interval::new(self.t_center - self.t_half_width, self.t_center + self.t_half_width),
            Interval::new(self.x_center - self.x_half_width, self.x_center + self.x_half_width),
        ));
        Ok(FnSource {
            f: move |mode: i32, t: f64, x: f64| -> Spinor {
                if mode != this.mode {
                    return ZERO_SPINOR;
                }
                let (bt, dbt) = bump_and_derivative((t - this.t_center) / this.t_half_width);
                let (bx, dbx) = bump_and_derivative((x - this.x_center) / this.x_half_width);
                if bt == 0.0 || bx == 0.0 {
                    return ZERO_SPINOR;
                }
                let a = this.amp();
                let dt = dbt / this.t_half_width * bx;
                let dx = bt * dbx / this.x_half_width;
                let val = bt * bx;
                let n = g.lapse(t);
                let mu = g.mode_mass(mode, t);
                // D̃ = N(σ(dx)∂_x + μ·iσ(ϑ)); principal part −iσ_x∂_x in this representation
                let ds = sym.apply(&[a[0] * dx, a[1] * dx]);
                let ms = mass.apply(&[a[0] * (mu * val), a[1] * (mu * val)]);
                let i = c(0.0, 1.0);
                let ft = [a[0] * dt + i * n * (ds[0] + ms[0]), a[1] * dt + i * n * (ds[1] + ms[1])];
                source_from_tilde(&g, &model, &ft, t)
            },
            support,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenReport {
    /// `‖DG±f − f‖ / ‖f‖` in `L²(time; H)` over interior time nodes.
    pub residual_plus: f64,
    pub residual_minus: f64,
    /// `max ‖G⁺f‖` before the source support and `max ‖G⁻f‖` after it.
    pub causal_leak: f64,
    /// `max ‖G⁺_{s}f − G⁺_{s'}f‖` for two admissible slices.
    pub slice_difference: f64,
    /// `‖G±Dψ − ψ‖ / ‖ψ‖` when a test spinor is supplied.
    pub left_inverse: Option<[f64; 2]>,
    /// `max |G⁻(Tf∘r) − T(G⁺f)∘r|` for time-symmetric setups.
    pub time_reflection: Option<f64>,
}

/// `DG±f − f` at interior nodes via central differences in time and the
/// discrete operator projected onto `V_B(t)`; returns the relative
/// `L²(time; H)` size.
pub fn equation_residual(result: &GreenResult, source: &dyn Source, geometry: &Geometry, family: &ProjectorFamily) -> Result<f64> {
    let traj = &result.trajectory;
    let grid = &traj.grid;
    let model = CliffordModel::new(geometry.dim());
    let n = traj.times.len();
    if n < 3 {
        return Err(precondition("residual needs at least three time nodes"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 1..n - 1 {
        let (tm, t, tp) = (traj.times[i - 1], traj.times[i], traj.times[i + 1]);
        let (a, b, cc) = (traj.snapshot(i - 1), traj.snapshot(i), traj.snapshot(i + 1));
        let (a, b, cc) = match (a, b, cc) {
            (Some(a), Some(b), Some(cc)) => (a, b, cc),
            _ => return Err(precondition("residual needs every time node stored")),
        };
        let w = 0.5 * (tp - tm);
        for (m, &k) in traj.modes.iter().enumerate() {
            let op = DiscreteOperator::build(geometry, &model, grid, k, t)?;
            let space = constraint_subspace(&op, &family.block(k, t)?, 1)?;
            let dpsi = op.apply(&b.fields[m]);
            let f = grid.sample(|x| source_to_tilde(geometry, &model, &source.eval(k, t, x), t));
            let raw: Field = (0..grid.nx())
                .map(|j| {
                    let d0 = (cc.fields[m][j][0] - a.fields[m][j][0]) / (tp - tm);
                    let d1 = (cc.fields[m][j][1] - a.fields[m][j][1]) / (tp - tm);
                    [d0 + c(0.0, 1.0) * dpsi[j][0] - f[j][0], d1 + c(0.0, 1.0) * dpsi[j][1] - f[j][1]]
                })
                .collect();
            num += w * grid.norm_sqr(&space.project(&raw));
            den += w * grid.norm_sqr(&f);
        }
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

fn max_field_norm(grid: &Grid, fields: &[Field]) -> f64 {
    fields.iter().map(|f| grid.norm_sqr(f)).sum::<f64>().sqrt()
}

fn time_reflect(f: &[Spinor]) -> Field {
    f.iter().map(|s| [s[0].conj(), -s[1].conj()]).collect()
}

/// Whether `T = σ_z K` preserves every projector block (and the geometry is
/// static), so that time reflection maps `G⁺` to `G⁻`.
pub fn reflection_symmetric(geometry: &Geometry, family: &ProjectorFamily) -> Result<bool> {
    if !geometry.is_static() || family.is_time_dependent() {
        return Ok(false);
    }
    for k in geometry.modes() {
        let p = family.block(k, 0.0)?;
        let sz = |i: usize| if i % 2 == 0 { 1.0 } else { -1.0 };
        let defect = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| (p[(i, j)].conj() * (sz(i) * sz(j)) - p[(i, j)]).norm())
            .fold(0.0, f64::max);
        if defect > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Check the Green axioms for a source `f` on `[T0, T1]`.
pub fn check_green_axioms(
    source: Arc<dyn Source>,
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    time: &TimeGrid,
    test: Option<&TestSpinor>,
) -> Result<GreenReport> {
    let (ts, _) = source.support().ok_or_else(|| precondition("Green check needs a nonzero source"))?;
    if ts.lo <= time.t0 || ts.hi >= time.t1 {
        return Err(precondition("source support must lie inside the time window"));
    }
    let plus = green_plus(source.clone(), geometry, family, grid, time, None)?;
    let minus = green_minus(source.clone(), geometry, family, grid, time, None)?;
    let residual_plus = equation_residual(&plus, source.as_ref(), geometry, family)?;
    let residual_minus = equation_residual(&minus, source.as_ref(), geometry, family)?;

    let mut causal_leak: f64 = 0.0;
    for s in &plus.trajectory.snapshots {
        if s.t < ts.lo {
            causal_leak = causal_leak.max(max_field_norm(grid, &s.fields));
        }
    }
    for s in &minus.trajectory.snapshots {
        if s.t > ts.hi {
            causal_leak = causal_leak.max(max_field_norm(grid, &s.fields));
        }
    }

    // a second slice halfway to the support
    let other = green_plus(source.clone(), geometry, family, grid, time, Some(time.snap(0.5 * (time.t0 + ts.lo)).min(ts.lo)))?;
    let mut slice_difference: f64 = 0.0;
    for s in &other.trajectory.snapshots {
        if let Some(f) = plus.fields_at(s.t) {
            let d: f64 = f
                .iter()
                .zip(&s.fields)
                .map(|(a, b)| grid.norm_sqr(&a.iter().zip(b).map(|(x, y)| [x[0] - y[0], x[1] - y[1]]).collect::<Vec<_>>()))
                .sum::<f64>()
                .sqrt();
            slice_difference = slice_difference.max(d);
        }
    }

    let left_inverse = match test {
        None => None,
        Some(tst) => {
            let dpsi: Arc<dyn Source> = Arc::new(tst.dirac(geometry)?);
            let gp = green_plus(dpsi.clone(), geometry, family, grid, time, None)?;
            let gm = green_minus(dpsi, geometry, family, grid, time, None)?;
            let modes = geometry.modes();
            let err = |g: &GreenResult| -> f64 {
                let (mut num, mut den) = (0.0, 0.0);
                for s in &g.trajectory.snapshots {
                    for (m, &k) in modes.iter().enumerate() {
                        let exact = grid.sample(|x| tst.eval(k, s.t, x));
                        let d: Field = exact.iter().zip(&s.fields[m]).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
                        num += grid.norm_sqr(&d);
                        den += grid.norm_sqr(&exact);
                    }
                }
                if den == 0.0 {
                    f64::INFINITY
                } else {
                    (num / den).sqrt()
                }
            };
            Some([err(&gp), err(&gm)])
        }
    };

    let time_reflection = if reflection_symmetric(geometry, family)? && (time.t0 + time.t1).abs() < 1e-12 {
        let model = CliffordModel::new(geometry.dim());
        let src = source.clone();
        let g = geometry.clone();
        let reflected = FnSource {
            f: move |k: i32, t: f64, x: f64| -> Spinor {
                let ft = source_to_tilde(&g, &model, &src.eval(k, -t, x), -t);
                let r = time_reflect(&[ft])[0];
                source_from_tilde(&g, &model, &[-r[0], -r[1]], t)
            },
            support: source.support().map(|(t, x)| (Interval::new(-t.hi, -t.lo), x)),
        };
        let gm = green_minus(Arc::new(reflected), geometry, family, grid, time, None)?;
        let mut worst: f64 = 0.0;
        for s in &plus.trajectory.snapshots {
            let Some(other) = gm.fields_at(-s.t) else {
                return Err(Error::Precondition("time grid is not symmetric".into()));
            };
            for (a, b) in s.fields.iter().zip(&other) {
                let ra = time_reflect(a);
                for (x, y) in ra.iter().zip(b) {
                    worst = worst.max((x[0] - y[0]).norm()).max((x[1] - y[1]).norm());
                }
            }
        }
        Some(worst)
    } else {
        None
    };

    Ok(GreenReport { residual_plus, residual_minus, causal_leak, slice_difference, left_inverse, time_reflection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryOperatorSpec;
    use crate::evolve::{BumpSource, SourceSpec};

    fn wide_source() -> SourceSpec {
        SourceSpec {
            bumps: vec![BumpSource {
                mode: 0,
                t_center: 0.0,
                t_half_width: 0.3,
                x_center: 0.5,
                x_half_width: 0.3,
                amplitude: [[1.0, 0.0], [0.0, 0.5]],
            }],
        }
    }

    #[test]
    fn time_grid_snaps() {
        let tg = TimeGrid::new((-0.5, 0.5), 0.1).unwrap();
        assert_eq!(tg.steps, 10);
        assert!((tg.snap(-0.33) + 0.3).abs() < 1e-15);
        assert_eq!(tg.snap(9.0), 0.5);
    }

    #[test]
    fn axioms_on_coarse_strip() {
        let g = Geometry::strip(1.0).unwrap();
        let fam = ProjectorFamily::transmission(&BoundaryOperatorSpec::new(g.clone())).unwrap();
        let grid = Grid::new(64, 1.0).unwrap();
        let tg = TimeGrid::new((-0.5, 0.5), 0.5 * grid.h()).unwrap();
        let test = TestSpinor { mode: 0, t_center: 0.0, t_half_width: 0.3, x_center: 0.5, x_half_width: 0.3, amplitude: [[1.0, 0.0], [0.0, 1.0]] };
        let rep = check_green_axioms(Arc::new(wide_source()), &g, &fam, &grid, &tg, Some(&test)).unwrap();
        assert!(rep.residual_plus < 0.1 && rep.residual_minus < 0.1, "{rep:?}");
        assert_eq!(rep.causal_leak, 0.0);
        assert!(rep.slice_difference <= 1e-10, "{rep:?}");
        let li = rep.left_inverse.unwrap();
        assert!(li[0] < 0.1 && li[1] < 0.1, "{rep:?}");
        assert!(rep.time_reflection.unwrap() < 1e-10, "{rep:?}");
    }

    #[test]
    fn slice_inside_support_rejected() {
        let g = Geometry::strip(1.0).unwrap();
        let fam = ProjectorFamily::transmission(&BoundaryOperatorSpec::new(g.clone())).unwrap();
        let grid = Grid::new(32, 1.0).unwrap();
        let tg = TimeGrid::new((-0.5, 0.5), 0.01).unwrap();
        assert!(green_plus(Arc::new(wide_source()), &g, &fam, &grid, &tg, Some(0.0)).is_err());
        assert!(green_minus(Arc::new(wide_source()), &g, &fam, &grid, &tg, Some(0.0)).is_err());
    }
}
