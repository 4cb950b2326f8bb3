//! Diagnostics on trajectories: energy, boundary flux, the energy estimate
//! and causal support.

use serde::Serialize;

use crate::boundary::ProjectorFamily;
use crate::discrete::{Field, Grid};
use crate::error::Result;
use crate::evolve::{source_energy, CauchyData, Trajectory};
use crate::geometry::{CausalRegion, Geometry, Interval};
use crate::spinor::norm_sqr;

pub const SUPPORT_TOL: f64 = 1e-8;
pub const FLUX_TOL: f64 = 1e-10;

/// Physical energy `c_E Σ_k ‖ψ̃_k‖²_H`.
pub fn energy(geometry: &Geometry, grid: &Grid, fields: &[Field]) -> f64 {
    geometry.energy_scale() * fields.iter().map(|f| grid.norm_sqr(f)).sum::<f64>()
}

/// Fraction of `Σ_k ‖ψ̃_k‖²_H` carried by nodes with `x ∈ [a, b]`.
pub fn energy_fraction(grid: &Grid, fields: &[Field], a: f64, b: f64) -> f64 {
    let mut inside = 0.0;
    let mut total = 0.0;
    for f in fields {
        for (j, s) in f.iter().enumerate() {
            let e = grid.weight(j) * norm_sqr(s);
            total += e;
            let x = grid.x(j);
            if x >= a - 1e-12 && x <= b + 1e-12 {
                inside += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// `C = 1 + max N` over the window.
pub fn estimate_constant(geometry: &Geometry, window: (f64, f64)) -> f64 {
    1.0 + geometry.lapse.max_on(window.0, window.1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxReport {
    /// `max_t |flux(t)| / ‖ψ̃(t)‖²`.
    pub max_relative: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn check_flux(traj: &Trajectory) -> FluxReport {
    let max_relative = traj
        .steps
        .iter()
        .map(|s| if s.norm_sqr > 0.0 { s.flux.abs() / s.norm_sqr } else { s.flux.abs() })
        .fold(0.0, f64::max);
    FluxReport { max_relative, tolerance: FLUX_TOL, passed: max_relative <= FLUX_TOL }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    pub energy: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyEstimateReport {
    pub constant: f64,
    /// Energy against the bound from the initial slice.
    pub rows: Vec<EnergyRow>,
    /// `max E(t₁) / bound(t₀, t₁)` over all slice pairs in the direction of evolution.
    pub max_ratio: f64,
    /// `1 − max_ratio`.
    pub slack: f64,
    pub passed: bool,
}

/// `E(t₁) ≤ e^{C|t₁−t₀|}(C ∫∫|f|² dvol + E(t₀))` for all pairs of slices.
pub fn check_energy_estimate(traj: &Trajectory, geometry: &Geometry) -> EnergyEstimateReport {
    let window = (traj.times[0], *traj.times.last().unwrap());
    let cst = estimate_constant(geometry, window);
    let n = traj.times.len();
    let e: Vec<f64> = (0..n).map(|i| traj.physical_energy(i)).collect();
    // prefix sums of ∫∫|f|² dvol
    let mut prefix = vec![0.0; n];
    for i in 1..n {
        prefix[i] = prefix[i - 1] + source_energy_interval(traj, i - 1);
    }
    let bound = |i: usize, j: usize| -> f64 {
        let (a, b) = (i.min(j), i.max(j));
        let dt = (traj.times[b] - traj.times[a]).abs();
        (cst * dt).exp() * (cst * (prefix[b] - prefix[a]) + e[i])
    };
    let ratio = |i: usize, j: usize| -> f64 {
        let bnd = bound(i, j);
        if bnd > 0.0 {
            e[j] / bnd
        } else if e[j] > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let init = traj.index_of(traj.meta.t_initial).unwrap_or(0);
    let mut max_ratio: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let same_direction = (i >= init && j >= i) || (i <= init && j <= i);
            if i != j && same_direction {
                max_ratio = max_ratio.max(ratio(i, j));
            }
        }
    }
    let rows = (0..n)
        .map(|j| EnergyRow { t: traj.times[j], energy: e[j], bound: bound(init, j) })
        .collect();
    EnergyEstimateReport { constant: cst, rows, max_ratio, slack: 1.0 - max_ratio, passed: max_ratio <= 1.0 }
}

fn source_energy_interval(traj: &Trajectory, i: usize) -> f64 {
    let r = &traj.intervals[i];
    traj.energy_scale * r.forcing_norm_sqr / r.lapse_mid * (r.t1 - r.t0)
}

/// Physical `∫_{t0}^{t1}∫_Σ |f|² dvol_M`.
pub fn forcing_energy(traj: &Trajectory, t0: f64, t1: f64) -> f64 {
    source_energy(traj, t0, t1)
}

/// Spatial support of a field set: nodes where `|ψ|² > tol · max|ψ|²`.
pub fn field_support(grid: &Grid, fields: &[Field], tol: f64) -> CausalRegion {
    let peak = fields.iter().flat_map(|f| f.iter().map(norm_sqr)).fold(0.0, f64::max);
    if peak == 0.0 {
        return CausalRegion::empty();
    }
    let h = grid.h();
    let iv = (0..grid.nx())
        .filter(|&j| fields.iter().any(|f| norm_sqr(&f[j]) > tol * peak))
        .map(|j| Interval::new(grid.x(j) - 0.5 * h, grid.x(j) + 0.5 * h));
    CausalRegion::from_intervals(iv, grid.length())
}

/// Region where the solution may be nonzero at time `t`: the light cone of
/// the data and source supports, enlarged by the light cone of the boundary
/// slice where that cone first meets `∂Σ` when the condition is nonlocal.
pub fn predicted_support(
    geometry: &Geometry,
    nonlocal: bool,
    data_support: &CausalRegion,
    source_support: Option<(Interval, Interval)>,
    t_initial: f64,
    t: f64,
) -> Result<CausalRegion> {
    let len = geometry.length;
    let future = t >= t_initial;
    let mut seeds: Vec<(CausalRegion, f64)> = Vec::new();
    if !data_support.is_empty() {
        seeds.push((data_support.clone(), t_initial));
    }
    if let Some((ts, xs)) = source_support {
        // earliest source time reachable in the direction of evolution
        let start = if future { ts.lo.max(t_initial) } else { ts.hi.min(t_initial) };
        let reached = if future { start <= t } else { start >= t };
        if reached {
            seeds.push((CausalRegion::from_intervals([xs], len), start));
        }
    }
    let mut region = CausalRegion::empty();
    for (seed, t0) in seeds {
        region = region.union(&geometry.causal_shadow(&seed, t0, t)?, len);
        if nonlocal {
            let d = seed.distance_to_boundary(len);
            let reach = geometry.signed_proper_time(t0, t).abs();
            if reach >= d {
                let t_hit = geometry.hit_time(&seed, t0, future)?;
                let collar = geometry.signed_proper_time(t_hit, t).abs();
                region = region.union(&CausalRegion::boundary_collar(collar.max(0.0), len), len);
            }
        }
    }
    Ok(region)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportRow {
    pub t: f64,
    /// Fraction of `‖ψ̃‖²_H` outside the padded predicted region.
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportReport {
    pub padding: f64,
    pub rows: Vec<SupportRow>,
    pub max_violation: f64,
    pub passed: bool,
}

/// Finite propagation speed on every stored snapshot (padding `2h`).
pub fn check_support(traj: &Trajectory, geometry: &Geometry, family: &ProjectorFamily, data: &CauchyData) -> Result<SupportReport> {
    let grid = &traj.grid;
    let padding = 2.0 * grid.h();
    let data_support = field_support(grid, &data.psi0, 0.0);
    let nonlocal = !family.is_local();
    let mut rows = Vec::with_capacity(traj.snapshots.len());
    for snap in &traj.snapshots {
        let region = predicted_support(geometry, nonlocal, &data_support, data.source.support(), data.t_initial, snap.t)?
            .grow(padding, geometry.length);
        let mut outside = 0.0;
        let mut total = 0.0;
        for f in &snap.fields {
            for (j, s) in f.iter().enumerate() {
                let e = grid.weight(j) * norm_sqr(s);
                total += e;
                if !region.contains(grid.x(j)) {
                    outside += e;
                }
            }
        }
        let violation = if total > 0.0 { outside / total } else { 0.0 };
        rows.push(SupportRow { t: snap.t, violation });
    }
    let max_violation = rows.iter().map(|r| r.violation).fold(0.0, f64::max);
    Ok(SupportReport { padding, rows, max_violation, passed: max_violation <= SUPPORT_TOL })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinor::c;

    #[test]
    fn fraction_of_uniform_field() {
        let grid = Grid::new(101, 1.0).unwrap();
        let f = grid.sample(|_| [c(1.0, 0.0), c(0.0, 0.0)]);
        let frac = energy_fraction(&grid, &[f], 0.0, 0.5);
        assert!((frac - 0.505).abs() < 1e-12, "{frac}");
    }

    #[test]
    fn nonlocal_support_gains_collar() {
        let g = Geometry::strip(1.0).unwrap();
        let seed = CausalRegion::from_intervals([Interval::new(0.25, 0.35)], 1.0);
        let local = predicted_support(&g, false, &seed, None, 0.0, 0.3).unwrap();
        let nonlocal = predicted_support(&g, true, &seed, None, 0.3 - 0.3, 0.3).unwrap();
        assert!(!local.contains(0.95));
        assert!(nonlocal.contains(0.96) && !nonlocal.contains(0.9));
        let early = predicted_support(&g, true, &seed, None, 0.0, 0.2).unwrap();
        assert!(!early.contains(0.9));
        let past = predicted_support(&g, true, &seed, None, 0.0, -0.3).unwrap();
        assert!(past.contains(0.97) && past.contains(0.0));
    }

    #[test]
    fn source_seed_counts_only_once_reached() {
        let g = Geometry::strip(1.0).unwrap();
        let src = Some((Interval::new(0.5, 0.6), Interval::new(0.4, 0.6)));
        let before = predicted_support(&g, true, &CausalRegion::empty(), src, 0.0, 0.4).unwrap();
        assert!(before.is_empty());
        let after = predicted_support(&g, true, &CausalRegion::empty(), src, 0.0, 0.7).unwrap();
        assert!(after.contains(0.75) && !after.contains(0.85));
    }
}
