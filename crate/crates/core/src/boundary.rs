//! Boundary operators, spectral projectors and time-dependent families of
//! boundary projectors acting on the trace space.
//!
//! Per mode the trace space is `ℂ² ⊕ ℂ²` (trace at `x=0`, trace at `x=L`);
//! projectors are stored as 4×4 blocks in that order.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::clifford::{CliffordModel, Covector, SpatialDim};
use crate::dense;
use crate::error::{precondition, Error, Result};
use crate::geometry::{Geometry, Slice};
use crate::profile::AnalyticFn;
use crate::spinor::{c, Mat2, Spinor};
use crate::C64;

pub const PROJECTOR_TOL: f64 = 1e-10;
const KERNEL_TOL: f64 = 1e-12;
const FREDHOLM_FLOOR: f64 = 1e-8;

pub type Block = Mat<C64>;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryOperatorSpec {
    pub model: CliffordModel,
    pub geometry: Geometry,
}

impl BoundaryOperatorSpec {
    pub fn new(geometry: Geometry) -> Self {
        BoundaryOperatorSpec { model: CliffordModel::new(geometry.dim()), geometry }
    }

    /// Involution `S_c = i σ(η_c)⁻¹ σ(ϑ)` with `A_{k,c}(t) = μ_k(t) S_c`.
    pub fn involution(&self, comp: usize) -> Option<Mat2> {
        if self.model.dim() == SpatialDim::One {
            return None;
        }
        let ang = self.model.spatial_symbol(Covector::ANGULAR).ok()?;
        Some((self.model.boundary_symbol().inverse(comp) * ang).scale(c(0.0, 1.0)))
    }

    pub fn mode_matrix(&self, k: i32, comp: usize, t: f64) -> Mat2 {
        match self.involution(comp) {
            None => Mat2::zero(),
            Some(s) => s.scale_re(self.geometry.mode_mass(k, t)),
        }
    }

    /// `Σ_η = diag(σ(η_0), σ(η_1))`.
    pub fn sigma_block(&self) -> Block {
        let b = self.model.boundary_symbol();
        block_diag(&b.sigma_eta[0], &b.sigma_eta[1])
    }

    /// Per-mode `χ^±(A)` as a 4×4 block; `positive` selects `χ⁺`.
    fn spectral_block(&self, k: i32, t: f64, positive: bool) -> Result<Block> {
        let mut halves = [Mat2::zero(); 2];
        for (comp, half) in halves.iter_mut().enumerate() {
            let a = self.mode_matrix(k, comp, t);
            let (vals, vecs) = a.hermitian_eigen();
            for (lam, v) in vals.iter().zip(vecs.iter()) {
                if lam.abs() <= KERNEL_TOL {
                    return Err(Error::SpectralFlowUnsupported { t, mode: k, eigenvalue: *lam });
                }
                if (*lam > 0.0) == positive {
                    *half = *half + outer(v, v);
                }
            }
        }
        Ok(block_diag(&halves[0], &halves[1]))
    }

    pub fn chi_plus(&self, k: i32, t: f64) -> Result<Block> {
        self.spectral_block(k, t, true)
    }

    pub fn chi_minus(&self, k: i32, t: f64) -> Result<Block> {
        self.spectral_block(k, t, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub mode: i32,
    pub component: usize,
    pub eigenvalues: [f64; 2],
}

/// Eigenvalues of the boundary operator per mode and component, ascending.
/// With `require_trivial_kernel` a zero eigenvalue is an error.
pub fn boundary_spectrum(spec: &BoundaryOperatorSpec, t: f64, require_trivial_kernel: bool) -> Result<Vec<ModeSpectrum>> {
    if let Some(r) = spec.geometry.radius(t) {
        if !(r > 0.0) {
            return Err(precondition(format!("radius r({t}) = {r} is not positive")));
        }
    }
    let mut out = Vec::new();
    for k in spec.geometry.modes() {
        for comp in 0..2 {
            let (vals, _) = spec.mode_matrix(k, comp, t).hermitian_eigen();
            if require_trivial_kernel {
                if let Some(v) = vals.iter().find(|v| v.abs() <= KERNEL_TOL) {
                    return Err(Error::SpectralFlowUnsupported { t, mode: k, eigenvalue: *v });
                }
            }
            out.push(ModeSpectrum { mode: k, component: comp, eigenvalues: vals });
        }
    }
    Ok(out)
}

fn outer(u: &Spinor, v: &Spinor) -> Mat2 {
    Mat2::new(u[0] * v[0].conj(), u[0] * v[1].conj(), u[1] * v[0].conj(), u[1] * v[1].conj())
}

pub fn block_diag(a: &Mat2, b: &Mat2) -> Block {
    Mat::from_fn(4, 4, |i, j| match (i / 2, j / 2) {
        (0, 0) => a.get(i, j),
        (1, 1) => b.get(i - 2, j - 2),
        _ => c(0.0, 0.0),
    })
}

/// Family description as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum FamilyConfig {
    Transmission,
    Chirality,
    Aps,
    /// One 4×4 block per mode (or a single block for all modes), row-major
    /// `[re, im]` pairs.
    Custom { blocks: Vec<Vec<[f64; 2]>> },
    Rotated { base: Box<FamilyConfig>, phi: AnalyticFn },
}

#[derive(Clone, Debug)]
enum Kind {
    Transmission,
    Chirality,
    Aps,
    Custom(Vec<Block>),
    Rotated { base: Box<ProjectorFamily>, phi: AnalyticFn },
}

/// `t ↦ P(t)`, block diagonal over modes.
#[derive(Clone, Debug)]
pub struct ProjectorFamily {
    spec: BoundaryOperatorSpec,
    kind: Kind,
}

#[derive(Clone, Debug)]
pub struct ProjectorSample {
    pub t: f64,
    pub modes: Vec<i32>,
    pub blocks: Vec<Block>,
}

impl ProjectorFamily {
    pub fn from_config(spec: &BoundaryOperatorSpec, cfg: &FamilyConfig) -> Result<Self> {
        match cfg {
            FamilyConfig::Transmission => Self::transmission(spec),
            FamilyConfig::Chirality => Self::chirality(spec),
            FamilyConfig::Aps => Self::aps(spec),
            FamilyConfig::Custom { blocks } => {
                let parsed = blocks
                    .iter()
                    .map(|b| {
                        if b.len() != 16 {
                            return Err(Error::InvalidData(format!("custom block has {} entries, expected 16", b.len())));
                        }
                        Ok(Mat::from_fn(4, 4, |i, j| c(b[4 * i + j][0], b[4 * i + j][1])))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::custom(spec, parsed)
            }
            FamilyConfig::Rotated { base, phi } => Self::rotated(Self::from_config(spec, base)?, phi.clone()),
        }
    }

    /// `P = ½[[I,I],[I,I]]`: the two boundary points are glued.
    pub fn transmission(spec: &BoundaryOperatorSpec) -> Result<Self> {
        if spec.geometry.slice != Slice::Strip {
            return Err(precondition("transmission conditions are only offered on the strip"));
        }
        Ok(ProjectorFamily { spec: spec.clone(), kind: Kind::Transmission })
    }

    /// `P = ½(1 + χ_c)` at each component with `χ_c = γ(ν)σ(η_c)`.
    pub fn chirality(spec: &BoundaryOperatorSpec) -> Result<Self> {
        let m = &spec.model;
        for comp in 0..2 {
            let chi = m.chirality(comp);
            let s = m.boundary_symbol().sigma_eta[comp];
            let mut defect = chi.hermitian_defect()
                .max((chi * chi).distance(&Mat2::identity()))
                .max(chi.anticommutator(&s).max_abs());
            if let Some(inv) = spec.involution(comp) {
                defect = defect.max(chi.anticommutator(&inv).max_abs());
            }
            if defect > 1e-12 {
                return Err(Error::Convention(format!("no boundary chirality in this representation (defect {defect:e})")));
            }
        }
        Ok(ProjectorFamily { spec: spec.clone(), kind: Kind::Chirality })
    }

    /// `P = χ⁻(A)`; needs a boundary operator with trivial kernel, so the
    /// cylinder only.
    pub fn aps(spec: &BoundaryOperatorSpec) -> Result<Self> {
        if spec.geometry.dim() == SpatialDim::One {
            return Err(Error::SpectralFlowUnsupported { t: spec.geometry.t_ref, mode: 0, eigenvalue: 0.0 });
        }
        Ok(ProjectorFamily { spec: spec.clone(), kind: Kind::Aps })
    }

    pub fn custom(spec: &BoundaryOperatorSpec, blocks: Vec<Block>) -> Result<Self> {
        let n_modes = spec.geometry.modes().len();
        if blocks.is_empty() || (blocks.len() != 1 && blocks.len() != n_modes) {
            return Err(Error::InvalidData(format!(
                "custom family needs 1 or {n_modes} blocks, got {}",
                blocks.len()
            )));
        }
        if blocks.iter().any(|b| b.nrows() != 4 || b.ncols() != 4) {
            return Err(Error::InvalidData("custom blocks must be 4×4".into()));
        }
        Ok(ProjectorFamily { spec: spec.clone(), kind: Kind::Custom(blocks) })
    }

    /// `P(t) = R(φ(t)) P_base(t) R(φ(t))*`, `R(φ) = exp(iφ·diag(iσ(η_0), iσ(η_1)))`.
    pub fn rotated(base: ProjectorFamily, phi: AnalyticFn) -> Result<Self> {
        phi.validate()?;
        let spec = base.spec.clone();
        let r = rotation(&spec, 0.7);
        let sigma = spec.sigma_block();
        let comm = &r * &sigma - &sigma * &r;
        let defect = dense::max_abs(comm.as_ref());
        if defect > 1e-12 {
            return Err(Error::Convention(format!("rotation does not commute with the boundary symbol ({defect:e})")));
        }
        Ok(ProjectorFamily { spec, kind: Kind::Rotated { base: Box::new(base), phi } })
    }

    pub fn spec(&self) -> &BoundaryOperatorSpec {
        &self.spec
    }

    pub fn name(&self) -> String {
        match &self.kind {
            Kind::Transmission => "transmission".into(),
            Kind::Chirality => "chirality".into(),
            Kind::Aps => "aps".into(),
            Kind::Custom(_) => "custom".into(),
            Kind::Rotated { base, .. } => format!("rotated({})", base.name()),
        }
    }

    /// Transmission couples the two boundary components; every other
    /// built-in family acts pointwise on each component.
    pub fn is_local(&self) -> bool {
        match &self.kind {
            Kind::Transmission => false,
            Kind::Rotated { base, .. } => base.is_local(),
            Kind::Custom(blocks) => blocks.iter().all(|b| {
                (0..2).all(|i| (2..4).all(|j| b[(i, j)].norm() < 1e-14 && b[(j, i)].norm() < 1e-14))
            }),
            _ => true,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        match &self.kind {
            Kind::Rotated { base, phi } => !phi.is_constant() || base.is_time_dependent(),
            // eigenvectors of μ_k(t)S do not move with t
            _ => false,
        }
    }

    /// Lipschitz constant of `φ ↦ R(φ)PR(φ)*` in operator norm.
    pub fn rotation_lipschitz(&self) -> Option<f64> {
        match &self.kind {
            Kind::Rotated { .. } => Some(2.0),
            _ => None,
        }
    }

    pub fn block(&self, k: i32, t: f64) -> Result<Block> {
        let half = c(0.5, 0.0);
        match &self.kind {
            Kind::Transmission => Ok(Mat::from_fn(4, 4, |i, j| if i % 2 == j % 2 { half } else { c(0.0, 0.0) })),
            Kind::Chirality => {
                let m = &self.spec.model;
                let p = |comp| (Mat2::identity() + m.chirality(comp)).scale(half);
                Ok(block_diag(&p(0), &p(1)))
            }
            Kind::Aps => {
                if let Some(r) = self.spec.geometry.radius(t) {
                    if !(r > 0.0) {
                        return Err(precondition(format!("radius r({t}) = {r} is not positive")));
                    }
                }
                self.spec.chi_minus(k, t)
            }
            Kind::Custom(blocks) => {
                let idx = if blocks.len() == 1 {
                    0
                } else {
                    self.spec
                        .geometry
                        .modes()
                        .iter()
                        .position(|&m| m == k)
                        .ok_or_else(|| precondition(format!("mode {k} outside the cutoff")))?
                };
                Ok(blocks[idx].clone())
            }
            Kind::Rotated { base, phi } => {
                let r = rotation(&self.spec, phi.eval(t));
                let p = base.block(k, t)?;
                Ok(&r * &p * r.adjoint())
            }
        }
    }

    pub fn sample(&self, t: f64) -> Result<ProjectorSample> {
        let modes = self.spec.geometry.modes();
        let blocks = modes.iter().map(|&k| self.block(k, t)).collect::<Result<Vec<_>>>()?;
        Ok(ProjectorSample { t, modes, blocks })
    }
}

fn rotation(spec: &BoundaryOperatorSpec, phi: f64) -> Block {
    let b = spec.model.boundary_symbol();
    let i = c(0.0, 1.0);
    // J_c = iσ(η_c) is a Hermitian involution, so exp(iφJ) = cos φ + i sin φ J
    let rot = |comp: usize| {
        let j = b.sigma_eta[comp].scale(i);
        Mat2::identity().scale_re(phi.cos()) + j.scale(i * phi.sin())
    };
    block_diag(&rot(0), &rot(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub t: f64,
    pub idempotence: f64,
    pub selfadjointness: f64,
    pub complementarity: f64,
    pub rank_defect: usize,
    /// Smallest singular value of `P − χ⁺(A)` over modes; absent when the
    /// boundary operator vanishes (finite-dimensional trace space, so the
    /// Fredholm condition is automatic).
    pub fredholm_min_sv: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub family: String,
    pub tolerance: f64,
    pub samples: Vec<SampleReport>,
    /// `‖P(t_{i+1}) − P(t_i)‖` (max over modes, operator norm).
    pub continuity: Vec<f64>,
    pub max_defect: f64,
    pub min_fredholm_sv: Option<f64>,
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Sample the Grassmannian axioms and the Fredholm surrogate on `[t0, t1]`.
pub fn check_admissible(family: &ProjectorFamily, window: (f64, f64), samples: usize) -> Result<AdmissibilityReport> {
    if samples < 2 {
        return Err(precondition("check_admissible needs at least 2 samples"));
    }
    let spec = family.spec();
    let sigma = spec.sigma_block();
    let id = dense::identity(4);
    let has_operator = spec.geometry.dim() == SpatialDim::Two;
    let mut reports = Vec::with_capacity(samples);
    let mut continuity = Vec::with_capacity(samples - 1);
    let mut prev: Option<ProjectorSample> = None;
    let mut notes = vec![
        "lapse and volume weights depend on t only, so the weighted boundary spaces coincide with ran P(t)".to_string(),
    ];
    if !has_operator {
        notes.push("boundary operator vanishes on the strip; Fredholm condition holds trivially".into());
    }
    for i in 0..samples {
        let t = window.0 + (window.1 - window.0) * i as f64 / (samples - 1) as f64;
        let s = family.sample(t)?;
        let mut idem: f64 = 0.0;
        let mut sa: f64 = 0.0;
        let mut comp: f64 = 0.0;
        let mut rank_defect = 0;
        let mut fred: Option<f64> = None;
        for (k, p) in s.modes.iter().zip(s.blocks.iter()) {
            idem = idem.max(dense::max_abs((p * p - p).as_ref()));
            sa = sa.max(dense::max_abs((p.adjoint() - p).as_ref()));
            let rhs = &id + &sigma * p * &sigma;
            comp = comp.max(dense::max_abs((p - &rhs).as_ref()));
            let trace: f64 = (0..4).map(|j| p[(j, j)].re).sum();
            if (trace - 2.0).abs() > 1e-8 {
                rank_defect += 1;
            }
            if has_operator {
                let chi = spec.chi_plus(*k, t)?;
                let diff = p - &chi;
                let sv = dense::singular_values(diff.as_ref())?;
                let m = sv.last().copied().unwrap_or(0.0);
                fred = Some(fred.map_or(m, |f: f64| f.min(m)));
            }
        }
        if let Some(pr) = &prev {
            let mut d: f64 = 0.0;
            for (a, b) in pr.blocks.iter().zip(s.blocks.iter()) {
                d = d.max(dense::op_norm((b - a).as_ref())?);
            }
            continuity.push(d);
        }
        reports.push(SampleReport {
            t,
            idempotence: idem,
            selfadjointness: sa,
            complementarity: comp,
            rank_defect,
            fredholm_min_sv: fred,
        });
        prev = Some(s);
    }
    let max_defect = reports
        .iter()
        .map(|r| r.idempotence.max(r.selfadjointness).max(r.complementarity))
        .fold(0.0, f64::max);
    let min_fred = reports.iter().filter_map(|r| r.fredholm_min_sv).reduce(f64::min);
    let rank_ok = reports.iter().all(|r| r.rank_defect == 0);
    let fred_ok = min_fred.is_none_or(|f| f > FREDHOLM_FLOOR);
    if !rank_ok {
        notes.push("projector rank differs from half the trace dimension".into());
    }
    Ok(AdmissibilityReport {
        family: family.name(),
        tolerance: PROJECTOR_TOL,
        samples: reports,
        continuity,
        max_defect,
        min_fredholm_sv: min_fred,
        passed: max_defect < PROJECTOR_TOL && rank_ok && fred_ok,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyl(r: AnalyticFn) -> BoundaryOperatorSpec {
        BoundaryOperatorSpec::new(Geometry::cylinder(1.0, r, 3).unwrap())
    }

    fn strip() -> BoundaryOperatorSpec {
        BoundaryOperatorSpec::new(Geometry::strip(1.0).unwrap())
    }

    #[test]
    fn spectrum_of_modes() {
        let s = cyl(AnalyticFn::Const(2.0));
        let sp = boundary_spectrum(&s, 0.0, true).unwrap();
        let k3 = sp.iter().find(|m| m.mode == 3 && m.component == 1).unwrap();
        assert!((k3.eigenvalues[1] - 1.75).abs() < 1e-15);
        assert!((k3.eigenvalues[0] + 1.75).abs() < 1e-15);
        assert!(boundary_spectrum(&strip(), 0.0, true).is_err());
    }

    #[test]
    fn operator_anticommutes_with_symbol() {
        let s = cyl(AnalyticFn::Const(1.0));
        let b = s.model.boundary_symbol();
        for comp in 0..2 {
            let a = s.mode_matrix(1, comp, 0.0);
            assert!(a.hermitian_defect() < 1e-15);
            assert!(a.anticommutator(&b.sigma_eta[comp]).max_abs() < 1e-15);
        }
    }

    #[test]
    fn aps_splits_spectrum() {
        let s = cyl(AnalyticFn::Const(1.0));
        for k in -3..=3 {
            let p = s.chi_plus(k, 0.0).unwrap();
            let m = s.chi_minus(k, 0.0).unwrap();
            assert!(dense::max_abs((&p + &m - dense::identity(4)).as_ref()) < 1e-15);
            assert!(dense::max_abs((&p * &m).as_ref()) < 1e-15);
        }
    }

    #[test]
    fn aps_constant_under_breathing_radius() {
        let s = cyl(AnalyticFn::SinAffine { offset: 1.0, slope: 0.0, amplitude: 0.1, frequency: 1.0, phase: 0.0 });
        let fam = ProjectorFamily::aps(&s).unwrap();
        let a = fam.sample(0.0).unwrap();
        let b = fam.sample(1.3).unwrap();
        for (x, y) in a.blocks.iter().zip(b.blocks.iter()) {
            assert!(dense::max_abs((x - y).as_ref()) == 0.0);
        }
        let rep = check_admissible(&fam, (0.0, 2.0), 9).unwrap();
        assert!(rep.passed);
        assert!(rep.max_defect < 1e-12);
        assert!((rep.min_fredholm_sv.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transmission_and_chirality_pass() {
        for fam in [ProjectorFamily::transmission(&strip()).unwrap(), ProjectorFamily::chirality(&strip()).unwrap()] {
            let rep = check_admissible(&fam, (0.0, 1.0), 3).unwrap();
            assert!(rep.passed, "{}", fam.name());
            assert!(rep.max_defect < 1e-14);
        }
        assert!(ProjectorFamily::transmission(&cyl(AnalyticFn::Const(1.0))).is_err());
        assert!(ProjectorFamily::aps(&strip()).is_err());
    }

    #[test]
    fn chirality_on_cylinder_is_fredholm() {
        let fam = ProjectorFamily::chirality(&cyl(AnalyticFn::Const(1.0))).unwrap();
        let rep = check_admissible(&fam, (0.0, 1.0), 2).unwrap();
        assert!(rep.passed);
        assert!((rep.min_fredholm_sv.unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn broken_projector_is_caught() {
        let spec = strip();
        let mut p = ProjectorFamily::transmission(&spec).unwrap().block(0, 0.0).unwrap();
        p[(0, 1)] += c(1e-3, 0.0);
        let fam = ProjectorFamily::custom(&spec, vec![p]).unwrap();
        let rep = check_admissible(&fam, (0.0, 1.0), 2).unwrap();
        assert!(!rep.passed);
        assert!((rep.samples[0].selfadjointness - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn rotation_is_lipschitz() {
        let base = ProjectorFamily::chirality(&strip()).unwrap();
        let fam = ProjectorFamily::rotated(base, AnalyticFn::SinAffine { offset: 0.0, slope: 1.0, amplitude: 0.0, frequency: 0.0, phase: 0.0 }).unwrap();
        let rep = check_admissible(&fam, (0.0, 0.5), 11).unwrap();
        assert!(rep.passed);
        let l = fam.rotation_lipschitz().unwrap();
        for d in &rep.continuity {
            assert!(*d <= l * 0.05 + 1e-14);
            assert!(*d > 0.0);
        }
    }
}
