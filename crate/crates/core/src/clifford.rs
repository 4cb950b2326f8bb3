//! Clifford representation on the rank-2 spinor bundle and the symbols
//! derived from it.
//!
//! With `γ(ν)=σ_z`, `γ(e_x)=iσ_y`, `γ(e_θ)=-iσ_x` the Clifford relations
//! `{γ(a),γ(b)} = -2g(a,b)` hold for the mostly-plus Lorentzian metric, `γ(ν)`
//! is Hermitian and the spatial generators are anti-Hermitian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spinor::{c, dot, Mat2, Spinor};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialDim {
    One,
    Two,
}

impl SpatialDim {
    pub fn n(self) -> usize {
        match self {
            SpatialDim::One => 1,
            SpatialDim::Two => 2,
        }
    }
}

/// Spatial covector in the orthonormal coframe `(dx, r dθ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covector {
    pub x: f64,
    pub theta: f64,
}

impl Covector {
    pub const DX: Covector = Covector { x: 1.0, theta: 0.0 };
    pub const ANGULAR: Covector = Covector { x: 0.0, theta: 1.0 };

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.theta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliffordModel {
    dim: SpatialDim,
    gamma_nu: Mat2,
    gamma_x: Mat2,
    gamma_theta: Mat2,
}

impl CliffordModel {
    pub fn new(dim: SpatialDim) -> Self {
        let i = c(0.0, 1.0);
        CliffordModel {
            dim,
            gamma_nu: Mat2::pauli_z(),
            gamma_x: Mat2::pauli_y().scale(i),
            gamma_theta: Mat2::pauli_x().scale(-i),
        }
    }

    /// Build a model from explicit generators; the Clifford relations and
    /// Hermiticity requirements are checked.
    pub fn from_generators(dim: SpatialDim, gamma_nu: Mat2, gamma_x: Mat2, gamma_theta: Mat2) -> Result<Self> {
        let m = CliffordModel { dim, gamma_nu, gamma_x, gamma_theta };
        m.validate(1e-12)?;
        Ok(m)
    }

    pub fn dim(&self) -> SpatialDim {
        self.dim
    }

    pub fn gamma_nu(&self) -> Mat2 {
        self.gamma_nu
    }

    pub fn gamma_x(&self) -> Mat2 {
        self.gamma_x
    }

    pub fn gamma_theta(&self) -> Option<Mat2> {
        (self.dim == SpatialDim::Two).then_some(self.gamma_theta)
    }

    fn gamma(&self, xi: Covector) -> Result<Mat2> {
        if self.dim == SpatialDim::One && xi.theta != 0.0 {
            return Err(Error::Convention("angular covector on a one-dimensional slice".into()));
        }
        Ok(self.gamma_x.scale_re(xi.x) + self.gamma_theta.scale_re(xi.theta))
    }

    /// Max deviation from the Clifford relations, Hermiticity of `γ(ν)` and
    /// anti-Hermiticity of the spatial generators.
    pub fn defect(&self) -> f64 {
        let id = Mat2::identity();
        let mut gens = vec![(self.gamma_nu, 1.0), (self.gamma_x, -1.0)];
        if self.dim == SpatialDim::Two {
            gens.push((self.gamma_theta, -1.0));
        }
        let mut worst: f64 = 0.0;
        for (a, (ga, sa)) in gens.iter().enumerate() {
            for (b, (gb, _)) in gens.iter().enumerate() {
                // {γ(a),γ(b)} = -2 g(a,b), g(ν,ν) = -1, g(e,e) = 1
                let target = if a == b { id.scale_re(2.0 * sa) } else { Mat2::zero() };
                worst = worst.max(ga.anticommutator(gb).distance(&target));
            }
        }
        worst = worst.max(self.gamma_nu.hermitian_defect());
        for (g, _) in gens.iter().skip(1) {
            worst = worst.max(g.distance(&(-g.adjoint())));
        }
        worst
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let d = self.defect();
        if d > tol {
            return Err(Error::Convention(format!("Clifford relations violated by {d:e}")));
        }
        Ok(())
    }

    /// Gram matrix `J` of the spin-invariant form: `⟨u,v⟩_SM = u* J v`.
    pub fn sm_gram(&self) -> Mat2 {
        self.gamma_nu
    }

    pub fn inner_sm(&self, u: &Spinor, v: &Spinor) -> C64 {
        dot(u, &self.sm_gram().apply(v))
    }

    /// Positive definite product `⟨γ(ν)u, v⟩_SM`.
    pub fn inner0(&self, u: &Spinor, v: &Spinor) -> C64 {
        self.inner_sm(&self.gamma_nu.apply(u), v)
    }

    /// Principal symbol of the spatial Dirac operator, `-i γ(ν) γ(ξ)`.
    pub fn spatial_symbol(&self, xi: Covector) -> Result<Mat2> {
        Ok((self.gamma_nu * self.gamma(xi)?).scale(c(0.0, -1.0)))
    }

    /// Hermitian generator `γ(ν)γ(ξ) = i σ(ξ)`.
    pub fn hamiltonian_generator(&self, xi: Covector) -> Result<Mat2> {
        Ok(self.gamma_nu * self.gamma(xi)?)
    }

    pub fn boundary_symbol(&self) -> BoundarySymbol {
        let s = self.spatial_symbol(Covector::DX).expect("dx is always admissible");
        BoundarySymbol { sigma_eta: [s, -s] }
    }

    /// Chirality at boundary component `comp`: `χ = γ(ν)σ(η)`. It is
    /// Hermitian, squares to one and anticommutes with `σ(η)` and with the
    /// boundary operator symbol `σ(η)⁻¹σ(ϑ)`.
    pub fn chirality(&self, comp: usize) -> Mat2 {
        self.gamma_nu * self.boundary_symbol().sigma_eta[comp]
    }
}

/// `σ(η)` at the two boundary components, `η` the inward unit conormal
/// (`+dx` at `x=0`, `-dx` at `x=L`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySymbol {
    pub sigma_eta: [Mat2; 2],
}

impl BoundarySymbol {
    /// `σ(η)⁻¹ = -σ(η)` for a unit conormal.
    pub fn inverse(&self, comp: usize) -> Mat2 {
        -self.sigma_eta[comp]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations_hold() {
        for d in [SpatialDim::One, SpatialDim::Two] {
            assert!(CliffordModel::new(d).defect() < 1e-15);
        }
    }

    #[test]
    fn symbols_match_hamiltonian_form() {
        let m = CliffordModel::new(SpatialDim::Two);
        let i = c(0.0, 1.0);
        assert_eq!(m.spatial_symbol(Covector::DX).unwrap(), Mat2::pauli_x().scale(-i));
        assert_eq!(m.spatial_symbol(Covector::ANGULAR).unwrap(), Mat2::pauli_y().scale(-i));
        assert_eq!(m.hamiltonian_generator(Covector::DX).unwrap(), Mat2::pauli_x());
        let b = m.boundary_symbol();
        assert_eq!(b.sigma_eta[0] * b.inverse(0), Mat2::identity());
    }

    #[test]
    fn chirality_properties() {
        let m = CliffordModel::new(SpatialDim::Two);
        let ang = m.spatial_symbol(Covector::ANGULAR).unwrap();
        for comp in 0..2 {
            let chi = m.chirality(comp);
            assert!(chi.hermitian_defect() < 1e-15);
            assert_eq!(chi * chi, Mat2::identity());
            assert!(chi.anticommutator(&m.boundary_symbol().sigma_eta[comp]).max_abs() < 1e-15);
            let a = m.boundary_symbol().inverse(comp) * ang;
            assert!(chi.anticommutator(&a).max_abs() < 1e-15);
        }
        assert_eq!(m.chirality(0), -m.chirality(1));
    }

    #[test]
    fn broken_generators_rejected() {
        let bad = CliffordModel::from_generators(
            SpatialDim::One,
            Mat2::pauli_z(),
            Mat2::pauli_x(),
            Mat2::zero(),
        );
        assert!(matches!(bad, Err(Error::Convention(_))));
    }

    #[test]
    fn angular_covector_rejected_in_1d() {
        let m = CliffordModel::new(SpatialDim::One);
        assert!(m.spatial_symbol(Covector::ANGULAR).is_err());
    }

    #[test]
    fn inner0_is_standard_product() {
        let m = CliffordModel::new(SpatialDim::One);
        let u = [c(1.0, 2.0), c(-0.5, 0.25)];
        let v = [c(0.3, -1.0), c(2.0, 1.0)];
        assert!((m.inner0(&u, &v) - dot(&u, &v)).norm() < 1e-15);
    }
}
