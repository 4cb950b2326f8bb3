//! Independent reference solutions: the characteristic formula for the
//! transmission problem on the strip, a dense matrix-exponential propagator,
//! and a Fourier discretization of the boundary circle operator.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryOperatorSpec, ProjectorFamily};
use crate::clifford::CliffordModel;
use crate::dense;
use crate::discrete::{constrained_operator, constraint_subspace, DiscreteOperator, Field, Grid};
use crate::error::{precondition, Error, Result};
use crate::evolve::{tilde_inverse, tilde_transform};
use crate::geometry::{Geometry, Slice};
use crate::profile::bump;
use crate::spinor::{c, Spinor, ZERO_SPINOR};
use crate::C64;

/// `ψ₀(x) = b((x − center)/half_width) · amplitude` in one angular mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpProfile {
    #[serde(default)]
    pub mode: i32,
    pub center: f64,
    pub half_width: f64,
    /// `[[re, im], [re, im]]`
    pub amplitude: [[f64; 2]; 2],
}

impl BumpProfile {
    pub fn new(center: f64, half_width: f64, amplitude: [C64; 2]) -> Self {
        BumpProfile {
            mode: 0,
            center,
            half_width,
            amplitude: [[amplitude[0].re, amplitude[0].im], [amplitude[1].re, amplitude[1].im]],
        }
    }

    pub fn validate(&self, length: f64) -> Result<()> {
        if !(self.half_width > 0.0) {
            return Err(precondition("bump half-width must be positive"));
        }
        if self.center - self.half_width <= 0.0 || self.center + self.half_width >= length {
            return Err(Error::InvalidData("initial bump must be supported away from the boundary".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Spinor {
        let b = bump((x - self.center) / self.half_width);
        if b == 0.0 {
            return ZERO_SPINOR;
        }
        [c(self.amplitude[0][0], self.amplitude[0][1]) * b, c(self.amplitude[1][0], self.amplitude[1][1]) * b]
    }
}

/// Initial fields for every mode of `geometry` from a list of bumps.
pub fn initial_fields(geometry: &Geometry, grid: &Grid, bumps: &[BumpProfile]) -> Result<Vec<Field>> {
    let modes = geometry.modes();
    let mut out = vec![grid.zeros(); modes.len()];
    for b in bumps {
        b.validate(geometry.length)?;
        let idx = modes
            .iter()
            .position(|&k| k == b.mode)
            .ok_or_else(|| Error::InvalidData(format!("mode {} outside the cutoff", b.mode)))?;
        for (j, v) in out[idx].iter_mut().enumerate() {
            let s = b.eval(grid.x(j));
            v[0] += s[0];
            v[1] += s[1];
        }
    }
    Ok(out)
}

/// Characteristic solution of the homogeneous transmission problem on the
/// strip: with `s = ∫_{t0}^{t} N`,
/// `ψ(t,x) = P₊ψ₀(x − s) + P₋ψ₀(x + s)`, `P± = (1 ± σ_x)/2`, periodic in `x`.
pub fn exact_transmission(geometry: &Geometry, psi0: &dyn Fn(f64) -> Spinor, t0: f64, t: f64, x: f64) -> Result<Spinor> {
    if geometry.slice != Slice::Strip {
        return Err(precondition("the characteristic formula is for the strip"));
    }
    let len = geometry.length;
    let s = geometry.signed_proper_time(t0, t);
    let wrap = |y: f64| y.rem_euclid(len);
    let r = psi0(wrap(x - s));
    let l = psi0(wrap(x + s));
    let half = 0.5;
    Ok([
        (r[0] + r[1]) * half + (l[0] - l[1]) * half,
        (r[0] + r[1]) * half - (l[0] - l[1]) * half,
    ])
}

/// Exact transmission solution sampled on a grid.
pub fn exact_transmission_field(geometry: &Geometry, grid: &Grid, bumps: &[BumpProfile], t0: f64, t: f64) -> Result<Field> {
    let psi0 = |x: f64| {
        bumps.iter().fold(ZERO_SPINOR, |acc, b| {
            let v = b.eval(x);
            [acc[0] + v[0], acc[1] + v[1]]
        })
    };
    (0..grid.nx()).map(|j| exact_transmission(geometry, &psi0, t0, t, grid.x(j))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormulaCheck {
    /// `max |(∂_t + N σ_x ∂_x)ψ|` at sample points, by central differences.
    pub pde_residual: f64,
    /// `max |ψ(t,0) − ψ(t,L)|`.
    pub transmission_residual: f64,
    pub initial_residual: f64,
}

/// Check that the characteristic formula solves the PDE, the transmission
/// condition and the initial condition.
pub fn verify_formula_solves(geometry: &Geometry, bumps: &[BumpProfile], t0: f64, times: &[f64], nx: usize) -> Result<FormulaCheck> {
    let psi0 = |x: f64| {
        bumps.iter().fold(ZERO_SPINOR, |acc, b| {
            let v = b.eval(x);
            [acc[0] + v[0], acc[1] + v[1]]
        })
    };
    let len = geometry.length;
    let step = 1e-5;
    let mut check = FormulaCheck { pde_residual: 0.0, transmission_residual: 0.0, initial_residual: 0.0 };
    let sx = crate::spinor::Mat2::pauli_x();
    for &t in times {
        let n = geometry.lapse(t);
        for j in 1..nx {
            let x = len * j as f64 / nx as f64;
            let at = |tt: f64, xx: f64| exact_transmission(geometry, &psi0, t0, tt, xx);
            let (tp, tm) = (at(t + step, x)?, at(t - step, x)?);
            let (xp, xm) = (at(t, x + step)?, at(t, x - step)?);
            let dx = [(xp[0] - xm[0]) / (2.0 * step), (xp[1] - xm[1]) / (2.0 * step)];
            let flow = sx.apply(&dx);
            for i in 0..2 {
                let r = (tp[i] - tm[i]) / (2.0 * step) + flow[i] * n;
                check.pde_residual = check.pde_residual.max(r.norm());
            }
        }
        let (a, b) = (exact_transmission(geometry, &psi0, t0, t, 0.0)?, exact_transmission(geometry, &psi0, t0, t, len)?);
        check.transmission_residual = check.transmission_residual.max((a[0] - b[0]).norm().max((a[1] - b[1]).norm()));
    }
    for j in 0..=nx {
        let x = len * j as f64 / nx as f64;
        let v = exact_transmission(geometry, &psi0, t0, t0, x)?;
        let w = psi0(x);
        check.initial_residual = check.initial_residual.max((v[0] - w[0]).norm().max((v[1] - w[1]).norm()));
    }
    Ok(check)
}

/// `ψ(t) = e^{−i(t−t0)D̃_B}ψ(t0)` for every mode, via a dense
/// eigendecomposition of the compressed operator (static geometry,
/// time-independent family, no source). Physical fields in and out.
pub fn dense_oracle(geometry: &Geometry, family: &ProjectorFamily, grid: &Grid, psi0: &[Field], t0: f64, t: f64) -> Result<Vec<Field>> {
    if !geometry.is_static() || family.is_time_dependent() {
        return Err(precondition("the dense oracle needs a static problem"));
    }
    let model = CliffordModel::new(geometry.dim());
    geometry
        .modes()
        .iter()
        .zip(psi0)
        .map(|(&k, f)| {
            let op = DiscreteOperator::build(geometry, &model, grid, k, t0)?;
            let space = constraint_subspace(&op, &family.block(k, t0)?, 1)?;
            let spec = constrained_operator(&op, &space)?.eigen()?;
            let coords = space.restrict(&tilde_transform(geometry, f, t0));
            let dt = t - t0;
            let evolved = spec.apply_fn(&coords, |l| C64::from_polar(1.0, -l * dt));
            Ok(tilde_inverse(geometry, &space.lift(&evolved), t))
        })
        .collect()
}

/// Fourier differentiation `−i∂_θ` on `m` equispaced points of the circle,
/// acting on antiperiodic functions (`ψ(θ+2π) = −ψ(θ)`).
pub fn antiperiodic_derivative(m: usize) -> Result<Mat<C64>> {
    if m < 4 || m % 2 != 0 {
        return Err(precondition("antiperiodic Fourier matrix needs an even size of at least 4"));
    }
    let h = 2.0 * std::f64::consts::PI / m as f64;
    // periodic spectral derivative (even m): ½(−1)^{j−l} cot((j−l)h/2)
    let dper = |j: usize, l: usize| -> f64 {
        if j == l {
            return 0.0;
        }
        let d = j as f64 - l as f64;
        let sign = if (j + l) % 2 == 0 { 1.0 } else { -1.0 };
        0.5 * sign / (0.5 * d * h).tan()
    };
    // ψ = e^{iθ/2}φ with φ periodic: −i∂_θψ = e^{iθ/2}(−i∂_θ + ½)φ
    Ok(Mat::from_fn(m, m, |j, l| {
        let twist = C64::from_polar(1.0, 0.5 * h * (j as f64 - l as f64));
        let base = c(0.0, -dper(j, l)) + if j == l { c(0.5, 0.0) } else { c(0.0, 0.0) };
        twist * base
    }))
}

/// Dense boundary operator `A_c(t) = S_c ⊗ (−i∂_θ)/r(t)` on `m` angular
/// points of boundary component `comp`.
pub fn circle_boundary_operator(spec: &BoundaryOperatorSpec, comp: usize, t: f64, m: usize) -> Result<Mat<C64>> {
    let s = spec
        .involution(comp)
        .ok_or_else(|| precondition("the strip has no angular boundary operator"))?;
    let r = spec.geometry.radius(t).expect("cylinder has a radius");
    let d = antiperiodic_derivative(m)?;
    Ok(Mat::from_fn(2 * m, 2 * m, |i, j| s.get(i / m, j / m) * d[(i % m, j % m)] / r))
}

/// Eigenvalues of [`circle_boundary_operator`], ascending.
pub fn circle_boundary_spectrum(spec: &BoundaryOperatorSpec, comp: usize, t: f64, m: usize) -> Result<Vec<f64>> {
    let a = circle_boundary_operator(spec, comp, t, m)?;
    let n = a.nrows();
    let herm = Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    dense::eigvalsh(herm.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::AnalyticFn;

    #[test]
    fn formula_solves_transmission_problem() {
        let g = Geometry::strip(1.0).unwrap();
        let bumps = [BumpProfile::new(0.5, 0.45, [c(1.0, 0.0), c(0.0, 0.5)])];
        let chk = verify_formula_solves(&g, &bumps, 0.0, &[0.1, 0.37, 0.8], 200).unwrap();
        assert!(chk.pde_residual < 1e-5, "{chk:?}");
        assert!(chk.transmission_residual < 1e-14);
        assert_eq!(chk.initial_residual, 0.0);
    }

    #[test]
    fn formula_with_lapse_uses_proper_time() {
        let lapse = AnalyticFn::SinAffine { offset: 1.0, slope: 0.0, amplitude: 0.5, frequency: 1.0, phase: 0.0 };
        let g = Geometry::strip(1.0).unwrap().with_lapse(lapse).unwrap();
        let bumps = [BumpProfile::new(0.5, 0.3, [c(1.0, 0.0), c(1.0, 0.0)])];
        let chk = verify_formula_solves(&g, &bumps, 0.0, &[0.2, 0.9], 100).unwrap();
        assert!(chk.pde_residual < 1e-5, "{chk:?}");
    }

    #[test]
    fn dense_oracle_is_unitary() {
        let g = Geometry::strip(1.0).unwrap();
        let fam = ProjectorFamily::transmission(&BoundaryOperatorSpec::new(g.clone())).unwrap();
        let grid = Grid::new(40, 1.0).unwrap();
        let psi0 = initial_fields(&g, &grid, &[BumpProfile::new(0.5, 0.3, [c(1.0, 0.0), c(0.0, 1.0)])]).unwrap();
        let out = dense_oracle(&g, &fam, &grid, &psi0, 0.0, 0.4).unwrap();
        assert!((grid.norm_sqr(&out[0]) - grid.norm_sqr(&psi0[0])).abs() < 1e-12);
    }

    #[test]
    fn antiperiodic_spectrum_is_half_integer() {
        let d = antiperiodic_derivative(32).unwrap();
        let herm_defect = dense::hermitian_defect(d.as_ref());
        assert!(herm_defect < 1e-12);
        let ev = dense::eigvalsh(d.as_ref()).unwrap();
        for k in -8..=8 {
            let target = k as f64 + 0.5;
            assert!(ev.iter().any(|l| (l - target).abs() < 1e-10), "{target}");
        }
    }

    #[test]
    fn circle_operator_matches_mode_blocks() {
        let g = Geometry::cylinder(1.0, AnalyticFn::Const(1.5), 3).unwrap();
        let spec = BoundaryOperatorSpec::new(g);
        let m = 16;
        let a = circle_boundary_operator(&spec, 1, 0.0, m).unwrap();
        let h = 2.0 * std::f64::consts::PI / m as f64;
        for k in -3..=3 {
            let blk = spec.mode_matrix(k, 1, 0.0);
            let u = [c(0.3, 0.1), c(-0.7, 0.4)];
            let v: Vec<C64> = (0..2 * m)
                .map(|i| u[i / m] * C64::from_polar(1.0, (k as f64 + 0.5) * h * (i % m) as f64))
                .collect();
            let av = crate::discrete::matvec(&a, &v);
            let bu = blk.apply(&u);
            for i in 0..2 * m {
                let expect = bu[i / m] * C64::from_polar(1.0, (k as f64 + 0.5) * h * (i % m) as f64);
                assert!((av[i] - expect).norm() < 1e-12);
            }
        }
    }
}
