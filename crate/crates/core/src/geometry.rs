//! Desk spacetimes `I × Σ`, `g = -N(t)² dt² + g_Σ(t)`, with `Σ = [0,L]`
//! (strip) or `[0,L] × S¹_{r(t)}` (cylinder), and causal propagation of
//! supports.

use serde::{Deserialize, Serialize};

use crate::clifford::SpatialDim;
use crate::error::{precondition, Result};
use crate::profile::AnalyticFn;

const WINDOW_SAMPLES: usize = 257;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Slice {
    Strip,
    /// Fourier modes `k = -K..=K` of antiperiodic spinors, angular momentum
    /// `k + 1/2`.
    Cylinder { radius: AnalyticFn, mode_cutoff: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub length: f64,
    #[serde(default)]
    pub lapse: AnalyticFn,
    pub slice: Slice,
    /// Reference time for the conformal weights.
    #[serde(default)]
    pub t_ref: f64,
}

impl Geometry {
    pub fn strip(length: f64) -> Result<Self> {
        let g = Geometry { length, lapse: AnalyticFn::Const(1.0), slice: Slice::Strip, t_ref: 0.0 };
        g.validate_static()?;
        Ok(g)
    }

    pub fn cylinder(length: f64, radius: AnalyticFn, mode_cutoff: usize) -> Result<Self> {
        let g = Geometry {
            length,
            lapse: AnalyticFn::Const(1.0),
            slice: Slice::Cylinder { radius, mode_cutoff },
            t_ref: 0.0,
        };
        g.validate_static()?;
        Ok(g)
    }

    pub fn with_lapse(mut self, lapse: AnalyticFn) -> Result<Self> {
        lapse.validate()?;
        self.lapse = lapse;
        Ok(self)
    }

    pub fn with_reference_time(mut self, t_ref: f64) -> Self {
        self.t_ref = t_ref;
        self
    }

    fn validate_static(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(precondition(format!("slice length must be positive, got {}", self.length)));
        }
        self.lapse.validate()?;
        if let Slice::Cylinder { radius, .. } = &self.slice {
            radius.validate()?;
        }
        Ok(())
    }

    /// Check `N > 0` and `r > 0` on `[t0, t1]` by sampling.
    pub fn validate_window(&self, t0: f64, t1: f64) -> Result<()> {
        self.validate_static()?;
        let (a, b) = (t0.min(t1), t0.max(t1));
        for i in 0..WINDOW_SAMPLES {
            let t = a + (b - a) * i as f64 / (WINDOW_SAMPLES - 1) as f64;
            let n = self.lapse(t);
            if !(n > 0.0) || !n.is_finite() {
                return Err(precondition(format!("lapse N({t}) = {n} is not positive")));
            }
            if let Some(r) = self.radius(t) {
                if !(r > 0.0) || !r.is_finite() {
                    return Err(precondition(format!("radius r({t}) = {r} is not positive")));
                }
            }
        }
        if self.lapse.min_on(a, b) <= 0.0 {
            return Err(precondition("lapse reaches zero inside the window"));
        }
        Ok(())
    }

    pub fn dim(&self) -> SpatialDim {
        match self.slice {
            Slice::Strip => SpatialDim::One,
            Slice::Cylinder { .. } => SpatialDim::Two,
        }
    }

    pub fn lapse(&self, t: f64) -> f64 {
        self.lapse.eval(t)
    }

    pub fn radius(&self, t: f64) -> Option<f64> {
        match &self.slice {
            Slice::Strip => None,
            Slice::Cylinder { radius, .. } => Some(radius.eval(t)),
        }
    }

    pub fn modes(&self) -> Vec<i32> {
        match &self.slice {
            Slice::Strip => vec![0],
            Slice::Cylinder { mode_cutoff, .. } => {
                let k = *mode_cutoff as i32;
                (-k..=k).collect()
            }
        }
    }

    /// Angular eigenvalue `μ_k(t) = (k+½)/r(t)`; zero on the strip.
    pub fn mode_mass(&self, k: i32, t: f64) -> f64 {
        match self.radius(t) {
            None => 0.0,
            Some(r) => (k as f64 + 0.5) / r,
        }
    }

    pub fn is_static(&self) -> bool {
        let radius_static = match &self.slice {
            Slice::Strip => true,
            Slice::Cylinder { radius, .. } => radius.is_constant(),
        };
        radius_static && self.lapse.is_constant()
    }

    pub fn is_ultrastatic(&self) -> bool {
        self.is_static() && self.lapse(0.0) == 1.0
    }

    /// Ratio of volume densities `ρ(t) = (N(t_ref)/N(t))^n · r(t)/r(t_ref)`.
    pub fn volume_distortion(&self, t: f64) -> f64 {
        let n = self.dim().n() as i32;
        let lapse_ratio = (self.lapse(self.t_ref) / self.lapse(t)).powi(n);
        match self.radius(t) {
            None => lapse_ratio,
            Some(r) => lapse_ratio * r / self.radius(self.t_ref).unwrap_or(r),
        }
    }

    /// Multiplier `w(t) = (N^n ρ)^{1/2}` relating the physical spinor to the
    /// one evolving under the Hamiltonian-form equation, `ψ̃ = w ψ`.
    pub fn tilde_weight(&self, t: f64) -> f64 {
        let n = self.dim().n() as i32;
        (self.lapse(t).powi(n) * self.volume_distortion(t)).sqrt()
    }

    /// Constant `c_E` with physical energy `= c_E Σ_k ‖ψ̃_k‖²_{L²(dx)}`.
    pub fn energy_scale(&self) -> f64 {
        let n = self.dim().n() as i32;
        let w2 = self.lapse(self.t_ref).powi(n);
        match self.radius(self.t_ref) {
            None => 1.0 / w2,
            Some(r0) => 2.0 * std::f64::consts::PI * r0 / w2,
        }
    }

    /// `∫_{t0}^{t1} N(τ) dτ`, signed.
    pub fn signed_proper_time(&self, t0: f64, t1: f64) -> f64 {
        if t0 == t1 {
            return 0.0;
        }
        if self.lapse.is_constant() {
            return self.lapse(t0) * (t1 - t0);
        }
        adaptive_simpson(&|t| self.lapse(t), t0, t1, 1e-13)
    }

    /// Proper time `s(t0,t1) = ∫ N` between two slices; requires `t1 >= t0`.
    pub fn proper_time(&self, t0: f64, t1: f64) -> Result<f64> {
        if t1 < t0 {
            return Err(precondition(format!("proper_time needs t1 >= t0, got [{t0}, {t1}]")));
        }
        self.validate_window(t0, t1)?;
        Ok(self.signed_proper_time(t0, t1))
    }

    /// Light cone of a set of points at time `t0`, evaluated at time `t`
    /// (future if `t > t0`, past otherwise). Spatial speed in `x` is `N(t)`.
    pub fn causal_shadow(&self, seed: &CausalRegion, t0: f64, t: f64) -> Result<CausalRegion> {
        self.validate_window(t0, t)?;
        let s = self.signed_proper_time(t0, t).abs();
        Ok(seed.grow(s, self.length))
    }

    pub fn causal_future(&self, seed: &CausalRegion, t0: f64, t: f64) -> Result<CausalRegion> {
        if t < t0 {
            return Err(precondition("causal_future needs t >= t0"));
        }
        self.causal_shadow(seed, t0, t)
    }

    pub fn causal_past(&self, seed: &CausalRegion, t0: f64, t: f64) -> Result<CausalRegion> {
        if t > t0 {
            return Err(precondition("causal_past needs t <= t0"));
        }
        self.causal_shadow(seed, t0, t)
    }

    /// Earliest (future) or latest (past) time at which the light cone of
    /// `seed` at `t0` reaches `∂Σ`. Returns `t0` if the seed already touches
    /// the boundary.
    pub fn hit_time(&self, seed: &CausalRegion, t0: f64, future: bool) -> Result<f64> {
        let d = seed.distance_to_boundary(self.length);
        if d <= 0.0 {
            return Ok(t0);
        }
        let dir = if future { 1.0 } else { -1.0 };
        let reach = |t: f64| self.signed_proper_time(t0, t).abs() - d;
        let mut span = d / self.lapse(t0).max(1e-300);
        let mut guard = 0;
        while reach(t0 + dir * span) < 0.0 {
            span *= 2.0;
            guard += 1;
            if guard > 200 || !span.is_finite() {
                return Err(precondition("light cone never reaches the boundary"));
            }
        }
        let (mut lo, mut hi) = (0.0, span);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if reach(t0 + dir * mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + hi) {
                break;
            }
        }
        let t_hit = t0 + dir * hi;
        self.validate_window(t0, t_hit)?;
        Ok(t_hit)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Closed interval `[lo, hi]` in the slice coordinate `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo: lo.min(hi), hi: lo.max(hi) }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Finite union of closed intervals in `[0, L]` (the angular direction is
/// always fully covered on the cylinder, since supports are tracked per `x`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CausalRegion {
    intervals: Vec<Interval>,
}

impl CausalRegion {
    pub fn empty() -> Self {
        CausalRegion { intervals: Vec::new() }
    }

    pub fn full(length: f64) -> Self {
        CausalRegion { intervals: vec![Interval::new(0.0, length)] }
    }

    pub fn from_intervals(intervals: impl IntoIterator<Item = Interval>, length: f64) -> Self {
        let mut iv: Vec<Interval> = intervals
            .into_iter()
            .map(|i| Interval::new(i.lo.max(0.0), i.hi.min(length)))
            .filter(|i| i.lo <= i.hi)
            .collect();
        iv.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut merged: Vec<Interval> = Vec::with_capacity(iv.len());
        for i in iv {
            match merged.last_mut() {
                Some(last) if i.lo <= last.hi => last.hi = last.hi.max(i.hi),
                _ => merged.push(i),
            }
        }
        CausalRegion { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(x))
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|i| i.hi - i.lo).sum()
    }

    pub fn grow(&self, s: f64, length: f64) -> Self {
        CausalRegion::from_intervals(self.intervals.iter().map(|i| Interval::new(i.lo - s, i.hi + s)), length)
    }

    pub fn union(&self, other: &CausalRegion, length: f64) -> Self {
        CausalRegion::from_intervals(self.intervals.iter().chain(other.intervals.iter()).copied(), length)
    }

    /// Collar `[0, s] ∪ [L-s, L]` of width `s` at both boundary components.
    pub fn boundary_collar(s: f64, length: f64) -> Self {
        if s <= 0.0 {
            return CausalRegion::empty();
        }
        CausalRegion::from_intervals([Interval::new(0.0, s), Interval::new(length - s, length)], length)
    }

    pub fn distance_to_boundary(&self, length: f64) -> f64 {
        match (self.intervals.first(), self.intervals.last()) {
            (Some(first), Some(last)) => first.lo.min(length - last.hi).max(0.0),
            _ => f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn wavy() -> Geometry {
        Geometry::strip(1.0)
            .unwrap()
            .with_lapse(AnalyticFn::SinAffine { offset: 1.0, slope: 0.0, amplitude: 0.3, frequency: 2.0 * PI, phase: 0.0 })
            .unwrap()
    }

    #[test]
    fn proper_time_of_wavy_lapse() {
        let g = wavy();
        let s = g.proper_time(0.0, 0.25).unwrap();
        let exact = 0.25 + 0.3 / (2.0 * PI) * (1.0 - (PI / 2.0).cos());
        assert!((s - exact).abs() < 1e-12);
        assert!((g.proper_time(0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(g.proper_time(1.0, 0.0).is_err());
    }

    #[test]
    fn nonpositive_lapse_rejected() {
        let g = Geometry::strip(1.0)
            .unwrap()
            .with_lapse(AnalyticFn::SinAffine { offset: 0.2, slope: 0.0, amplitude: 0.5, frequency: 1.0, phase: 0.0 })
            .unwrap();
        assert!(g.proper_time(0.0, 6.0).is_err());
    }

    #[test]
    fn future_grows_by_proper_time() {
        let g = Geometry::strip(1.0).unwrap();
        let seed = CausalRegion::from_intervals([Interval::new(0.4, 0.45)], 1.0);
        let f = g.causal_future(&seed, 0.0, 0.1).unwrap();
        assert_eq!(f.intervals().len(), 1);
        assert!((f.intervals()[0].lo - 0.3).abs() < 1e-15);
        assert!((f.intervals()[0].hi - 0.55).abs() < 1e-15);
        let p = g.causal_past(&seed, 0.0, -0.6).unwrap();
        assert_eq!(p, CausalRegion::full(1.0));
    }

    #[test]
    fn hit_time_under_lapse() {
        let g = wavy();
        let seed = CausalRegion::from_intervals([Interval::new(0.3, 0.5)], 1.0);
        let t = g.hit_time(&seed, 0.0, true).unwrap();
        assert!((g.signed_proper_time(0.0, t) - 0.3).abs() < 1e-12);
        let tp = g.hit_time(&seed, 0.0, false).unwrap();
        assert!(tp < 0.0);
        assert!((g.signed_proper_time(tp, 0.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn weights_on_cylinder() {
        let g = Geometry::cylinder(1.0, AnalyticFn::SinAffine { offset: 1.0, slope: 0.5, amplitude: 0.0, frequency: 0.0, phase: 0.0 }, 2)
            .unwrap()
            .with_lapse(AnalyticFn::Const(2.0))
            .unwrap();
        // w² = N0² r/r0
        assert!((g.tilde_weight(1.0).powi(2) - 4.0 * 1.5).abs() < 1e-14);
        assert_eq!(g.modes(), vec![-2, -1, 0, 1, 2]);
        assert!((g.mode_mass(-1, 0.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn region_merging() {
        let r = CausalRegion::from_intervals([Interval::new(0.5, 0.7), Interval::new(-0.1, 0.2), Interval::new(0.15, 0.3)], 1.0);
        assert_eq!(r.intervals(), &[Interval::new(0.0, 0.3), Interval::new(0.5, 0.7)]);
        assert!((r.measure() - 0.5).abs() < 1e-15);
        assert_eq!(r.distance_to_boundary(1.0), 0.0);
    }
}
