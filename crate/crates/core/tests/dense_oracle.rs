//! Crank–Nicolson against the exact exponential of the compressed operator.

use dirac_ibvp::boundary::{BoundaryOperatorSpec, ProjectorFamily};
use dirac_ibvp::discrete::{Field, Grid};
use dirac_ibvp::evolve::{solve_cauchy, tilde_inverse, CauchyData, SolveOptions, StorePolicy};
use dirac_ibvp::geometry::Geometry;
use dirac_ibvp::oracle::{dense_oracle, initial_fields, BumpProfile};
use dirac_ibvp::profile::AnalyticFn;
use dirac_ibvp::spinor::c;

fn rel_error(grid: &Grid, a: &[Field], b: &[Field]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (u, v) in a.iter().zip(b) {
        let d: Field = u.iter().zip(v).map(|(x, y)| [x[0] - y[0], x[1] - y[1]]).collect();
        num += grid.norm_sqr(&d);
        den += grid.norm_sqr(v);
    }
    (num / den).sqrt()
}

fn cn_error(geometry: &Geometry, family: &ProjectorFamily, nx: usize, dt: f64) -> f64 {
    let grid = Grid::new(nx, geometry.length).unwrap();
    let bumps: Vec<BumpProfile> = geometry
        .modes()
        .into_iter()
        .map(|k| BumpProfile { mode: k, ..BumpProfile::new(0.5, 0.4, [c(1.0, 0.0), c(0.3, -0.2)]) })
        .collect();
    let psi0 = initial_fields(geometry, &grid, &bumps).unwrap();
    let t1 = 0.5;
    let exact = dense_oracle(geometry, family, &grid, &psi0, 0.0, t1).unwrap();
    let data = CauchyData::homogeneous(psi0, (0.0, t1));
    let traj = solve_cauchy(&data, geometry, family, &grid, &SolveOptions::new(dt).store(StorePolicy::Endpoints)).unwrap();
    let last = traj.snapshots.last().unwrap();
    assert!((last.t - t1).abs() < 1e-14);
    let physical: Vec<Field> = last.fields.iter().map(|f| tilde_inverse(geometry, f, t1)).collect();
    rel_error(&grid, &physical, &exact)
}

#[test]
fn crank_nicolson_is_second_order_in_time() {
    let cases = [
        (Geometry::strip(1.0).unwrap(), "transmission"),
        (Geometry::strip(1.0).unwrap(), "chirality"),
        (Geometry::cylinder(1.0, AnalyticFn::Const(0.8), 2).unwrap(), "aps"),
    ];
    for (g, name) in cases {
        let spec = BoundaryOperatorSpec::new(g.clone());
        let family = match name {
            "transmission" => ProjectorFamily::transmission(&spec),
            "chirality" => ProjectorFamily::chirality(&spec),
            _ => ProjectorFamily::aps(&spec),
        }
        .unwrap();
        let coarse = cn_error(&g, &family, 48, 1.0 / 200.0);
        let fine = cn_error(&g, &family, 48, 1.0 / 400.0);
        assert!(coarse < 1e-2, "{name}: {coarse}");
        let order = (coarse / fine).log2();
        assert!((1.8..2.2).contains(&order), "{name}: order {order} ({coarse:.3e} -> {fine:.3e})");
    }
}
