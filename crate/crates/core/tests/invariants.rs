//! Randomized structural invariants.

use dirac_ibvp::boundary::{BoundaryOperatorSpec, ProjectorFamily};
use dirac_ibvp::clifford::{CliffordModel, Covector, SpatialDim};
use dirac_ibvp::dense;
use dirac_ibvp::discrete::{constrained_operator, constraint_subspace, DiscreteOperator, Grid};
use dirac_ibvp::evolve::{solve_cauchy, tilde_inverse, tilde_transform, CauchyData, SolveOptions, StorePolicy};
use dirac_ibvp::geometry::Geometry;
use dirac_ibvp::oracle::{initial_fields, BumpProfile};
use dirac_ibvp::profile::AnalyticFn;
use dirac_ibvp::spinor::{c, Mat2};
use faer::Mat;
use proptest::prelude::*;

fn breathing_cylinder() -> Geometry {
    let radius = AnalyticFn::SinAffine { offset: 1.0, slope: 0.0, amplitude: 0.3, frequency: 1.3, phase: 0.2 };
    Geometry::cylinder(1.0, radius, 3).unwrap()
}

fn rotated_aps() -> ProjectorFamily {
    let spec = BoundaryOperatorSpec::new(breathing_cylinder());
    let phi = AnalyticFn::SinAffine { offset: 0.1, slope: 0.0, amplitude: 0.7, frequency: 2.0, phase: 0.0 };
    ProjectorFamily::rotated(ProjectorFamily::aps(&spec).unwrap(), phi).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn symbol_squares_to_covector_norm(x in -3.0..3.0f64, theta in -3.0..3.0f64) {
        let model = CliffordModel::new(SpatialDim::Two);
        let xi = Covector { x, theta };
        let h = model.hamiltonian_generator(xi).unwrap();
        prop_assert!(h.hermitian_defect() < 1e-14);
        let sq = h * h;
        let target = Mat2::identity().scale_re(xi.norm().powi(2));
        prop_assert!(sq.distance(&target) < 1e-12);
    }

    #[test]
    fn rotated_family_is_an_orthogonal_projector(t in -2.0..2.0f64, k in -3i32..=3) {
        let p = rotated_aps().block(k, t).unwrap();
        let p2: Mat<_> = &p * &p;
        prop_assert!(dense::max_abs((&p2 - &p).as_ref()) < 1e-12);
        prop_assert!(dense::hermitian_defect(p.as_ref()) < 1e-12);
        let trace: f64 = (0..4).map(|i| p[(i, i)].re).sum();
        prop_assert!((trace - 2.0).abs() < 1e-12);
    }

    #[test]
    fn compressed_operator_is_selfadjoint(t in -1.0..1.0f64, k in -3i32..=3) {
        let g = breathing_cylinder();
        let model = CliffordModel::new(g.dim());
        let grid = Grid::new(32, g.length).unwrap();
        let op = DiscreteOperator::build(&g, &model, &grid, k, t).unwrap();
        let space = constraint_subspace(&op, &rotated_aps().block(k, t).unwrap(), 1).unwrap();
        let a = constrained_operator(&op, &space).unwrap();
        prop_assert!(a.hermitian_defect() < 1e-12);
    }

    #[test]
    fn tilde_transform_roundtrips(t in -2.0..2.0f64, re in -1.0..1.0f64, im in -1.0..1.0f64) {
        let g = breathing_cylinder().with_lapse(AnalyticFn::SinAffine { offset: 1.0, slope: 0.0, amplitude: 0.4, frequency: 1.0, phase: 0.0 }).unwrap();
        let grid = Grid::new(20, g.length).unwrap();
        let f = grid.sample(|x| [c(re * x, im), c(x * x, -re)]);
        let back = tilde_inverse(&g, &tilde_transform(&g, &f, t), t);
        for (u, v) in back.iter().zip(&f) {
            prop_assert!((u[0] - v[0]).norm() < 1e-13 && (u[1] - v[1]).norm() < 1e-13);
        }
    }

    #[test]
    fn crank_nicolson_conserves_the_norm(center in 0.3..0.7f64, width in 0.1..0.25f64, re in -1.0..1.0f64, im in -1.0..1.0f64) {
        let g = Geometry::strip(1.0).unwrap();
        let spec = BoundaryOperatorSpec::new(g.clone());
        let family = ProjectorFamily::transmission(&spec).unwrap();
        let grid = Grid::new(64, 1.0).unwrap();
        let bump = BumpProfile::new(center, width, [c(re, im), c(1.0, 0.0)]);
        let data = CauchyData::homogeneous(initial_fields(&g, &grid, &[bump]).unwrap(), (0.0, 0.5));
        let traj = solve_cauchy(&data, &g, &family, &grid, &SolveOptions::new(grid.h()).store(StorePolicy::Endpoints)).unwrap();
        let n0 = traj.steps[0].norm_sqr;
        for s in &traj.steps {
            prop_assert!((s.norm_sqr - n0).abs() <= 1e-12 * n0);
        }
    }
}
