//! Summation-by-parts discretization of the per-mode spatial operator
//! `D̃ = a(t)(σ(dx)∂_x + μ_k(t)·iσ(ϑ))`, boundary-constraint subspaces and the
//! compressed (constrained) operator.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};

use crate::boundary::{Block, ProjectorFamily};
use crate::bordered::{BorderedLu, BorderedMatrix};
use crate::clifford::{CliffordModel, Covector, SpatialDim};
use crate::dense;
use crate::error::{precondition, Error, Result};
use crate::geometry::Geometry;
use crate::spinor::{c, dot, norm_sqr, Mat2, Spinor, ZERO_SPINOR};
use crate::C64;

pub const MIN_NX: usize = 16;
const HERMITIAN_FAIL: f64 = 1e-8;
const RANK_ZERO: f64 = 1e-12;
const RANK_FULL: f64 = 1e-8;

pub type Field = Vec<Spinor>;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    nx: usize,
    length: f64,
    h: f64,
}

impl Grid {
    pub fn new(nx: usize, length: f64) -> Result<Self> {
        if nx < MIN_NX {
            return Err(Error::GridTooCoarse { nx, min: MIN_NX });
        }
        if !(length > 0.0) {
            return Err(precondition("grid length must be positive"));
        }
        Ok(Grid { nx, length, h: length / (nx - 1) as f64 })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn x(&self, j: usize) -> f64 {
        if j + 1 == self.nx {
            self.length
        } else {
            j as f64 * self.h
        }
    }

    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.nx {
            0.5 * self.h
        } else {
            self.h
        }
    }

    pub fn zeros(&self) -> Field {
        vec![ZERO_SPINOR; self.nx]
    }

    pub fn sample(&self, f: impl Fn(f64) -> Spinor) -> Field {
        (0..self.nx).map(|j| f(self.x(j))).collect()
    }

    pub fn inner(&self, u: &[Spinor], v: &[Spinor]) -> C64 {
        u.iter().zip(v).enumerate().map(|(j, (a, b))| dot(a, b) * self.weight(j)).sum()
    }

    pub fn norm_sqr(&self, u: &[Spinor]) -> f64 {
        u.iter().enumerate().map(|(j, a)| norm_sqr(a) * self.weight(j)).sum()
    }
}

/// One mode of the SBP operator at a fixed time.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    grid: Grid,
    mode: i32,
    t: f64,
    a: f64,
    mu: f64,
    sym: Mat2,
    mass: Mat2,
    sigma_eta: [Mat2; 2],
}

impl DiscreteOperator {
    pub fn build(geometry: &Geometry, model: &CliffordModel, grid: &Grid, mode: i32, t: f64) -> Result<Self> {
        let a = geometry.lapse(t);
        if !(a > 0.0) {
            return Err(precondition(format!("lapse N({t}) = {a} is not positive")));
        }
        if let Some(r) = geometry.radius(t) {
            if !(r > 0.0) {
                return Err(precondition(format!("radius r({t}) = {r} is not positive")));
            }
        }
        let sym = model.spatial_symbol(Covector::DX)?;
        let mass = match model.dim() {
            SpatialDim::One => Mat2::zero(),
            SpatialDim::Two => model.spatial_symbol(Covector::ANGULAR)?.scale(c(0.0, 1.0)),
        };
        Ok(DiscreteOperator {
            grid: grid.clone(),
            mode,
            t,
            a,
            mu: geometry.mode_mass(mode, t),
            sym,
            mass,
            sigma_eta: model.boundary_symbol().sigma_eta,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mode(&self) -> i32 {
        self.mode
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn lapse_weight(&self) -> f64 {
        self.a
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// 2×2 block coupling node `l` into row `j`.
    pub fn block(&self, j: usize, l: usize) -> Mat2 {
        let n = self.grid.nx;
        let h = self.grid.h;
        let s = self.sym.scale_re(self.a);
        let mass = self.mass.scale_re(self.a * self.mu);
        let last = n - 1;
        match (j, l) {
            (0, 0) => s.scale_re(-1.0 / h) + mass,
            (0, 1) => s.scale_re(1.0 / h),
            (j, l) if j == last && l == last => s.scale_re(1.0 / h) + mass,
            (j, l) if j == last && l + 1 == last => s.scale_re(-1.0 / h),
            (j, l) if j == l => mass,
            (j, l) if l == j + 1 => s.scale_re(0.5 / h),
            (j, l) if l + 1 == j => s.scale_re(-0.5 / h),
            _ => Mat2::zero(),
        }
    }

    pub fn apply(&self, u: &[Spinor]) -> Field {
        let n = self.grid.nx;
        (0..n)
            .map(|j| {
                let lo = j.saturating_sub(1);
                let hi = (j + 1).min(n - 1);
                let mut acc = ZERO_SPINOR;
                for l in lo..=hi {
                    let v = self.block(j, l).apply(&u[l]);
                    acc = [acc[0] + v[0], acc[1] + v[1]];
                }
                acc
            })
            .collect()
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let n = self.grid.nx;
        let mut m = Mat::<C64>::zeros(2 * n, 2 * n);
        for j in 0..n {
            for l in j.saturating_sub(1)..=(j + 1).min(n - 1) {
                let b = self.block(j, l);
                for s in 0..2 {
                    for t in 0..2 {
                        m[(2 * j + s, 2 * l + t)] = b.get(s, t);
                    }
                }
            }
        }
        m
    }

    /// Boundary form `B(u,v) = a Σ_c u_c* σ(η_c) v_c` with
    /// `⟨Du,v⟩_H − ⟨u,Dv⟩_H = B(u,v)` for all grid functions.
    pub fn boundary_form(&self, u: &[Spinor], v: &[Spinor]) -> C64 {
        let last = self.grid.nx - 1;
        let b0 = dot(&u[0], &self.sigma_eta[0].apply(&v[0]));
        let b1 = dot(&u[last], &self.sigma_eta[1].apply(&v[last]));
        (b0 + b1) * self.a
    }

    /// Net outward flux `a Σ_c Re(i⟨σ(η_c)ψ_c, ψ_c⟩)`; `d‖ψ‖²_H/dt = −flux`
    /// under `∂_t ψ = −iDψ`.
    pub fn boundary_flux(&self, u: &[Spinor]) -> f64 {
        (c(0.0, -1.0) * self.boundary_form(u, u)).re
    }
}

/// The trace layout `(ψ(0), ψ(L)) ∈ ℂ⁴`.
pub fn trace(u: &[Spinor]) -> [C64; 4] {
    let last = u.len() - 1;
    [u[0][0], u[0][1], u[last][0], u[last][1]]
}

#[derive(Clone, Debug)]
enum Basis {
    /// Interior unit vectors plus boundary columns built from an orthonormal
    /// basis `Q` (4×r) of `ran P`.
    Structured { q: Mat<C64> },
    /// Explicit H-orthonormal columns in the node-major layout.
    Dense { basis: Mat<C64> },
}

/// Orthonormal (in `⟨·,·⟩_H`) basis of `V_B`.
#[derive(Clone, Debug)]
pub struct ConstraintSubspace {
    grid: Grid,
    order: usize,
    basis: Basis,
}

impl ConstraintSubspace {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        match &self.basis {
            Basis::Structured { q } => q.ncols() + 2 * (self.grid.nx - 2),
            Basis::Dense { basis } => basis.ncols(),
        }
    }

    pub fn codim(&self) -> usize {
        2 * self.grid.nx - self.dim()
    }

    /// `B c`.
    pub fn lift(&self, coords: &[C64]) -> Field {
        let n = self.grid.nx;
        match &self.basis {
            Basis::Structured { q } => {
                let r = q.ncols();
                let sh = 1.0 / self.grid.h.sqrt();
                let sb = 1.0 / (0.5 * self.grid.h).sqrt();
                let mut out = self.grid.zeros();
                for j in 1..n - 1 {
                    let k = r + 2 * (j - 1);
                    out[j] = [coords[k] * sh, coords[k + 1] * sh];
                }
                for i in 0..r {
                    for s in 0..2 {
                        out[0][s] += q[(s, i)] * coords[i] * sb;
                        out[n - 1][s] += q[(2 + s, i)] * coords[i] * sb;
                    }
                }
                out
            }
            Basis::Dense { basis } => (0..n)
                .map(|j| {
                    let mut v = ZERO_SPINOR;
                    for (col, cv) in coords.iter().enumerate() {
                        v[0] += basis[(2 * j, col)] * cv;
                        v[1] += basis[(2 * j + 1, col)] * cv;
                    }
                    v
                })
                .collect(),
        }
    }

    /// `B* H u`: coordinates of the H-orthogonal projection of `u` onto `V_B`.
    pub fn restrict(&self, u: &[Spinor]) -> Vec<C64> {
        let n = self.grid.nx;
        match &self.basis {
            Basis::Structured { q } => {
                let r = q.ncols();
                let sh = self.grid.h.sqrt();
                let sb = (0.5 * self.grid.h).sqrt();
                let mut out = Vec::with_capacity(self.dim());
                for i in 0..r {
                    let mut acc = c(0.0, 0.0);
                    for s in 0..2 {
                        acc += q[(s, i)].conj() * u[0][s] + q[(2 + s, i)].conj() * u[n - 1][s];
                    }
                    out.push(acc * sb);
                }
                for uj in u.iter().take(n - 1).skip(1) {
                    out.push(uj[0] * sh);
                    out.push(uj[1] * sh);
                }
                out
            }
            Basis::Dense { basis } => (0..basis.ncols())
                .map(|col| {
                    let mut acc = c(0.0, 0.0);
                    for j in 0..n {
                        let w = self.grid.weight(j);
                        acc += (basis[(2 * j, col)].conj() * u[j][0] + basis[(2 * j + 1, col)].conj() * u[j][1]) * w;
                    }
                    acc
                })
                .collect(),
        }
    }

    pub fn project(&self, u: &[Spinor]) -> Field {
        self.lift(&self.restrict(u))
    }

    /// Columns of `B` in the node-major layout (`2Nx × dim`).
    pub fn dense_basis(&self) -> Mat<C64> {
        let n = self.grid.nx;
        let d = self.dim();
        let mut m = Mat::<C64>::zeros(2 * n, d);
        let mut e = vec![c(0.0, 0.0); d];
        for col in 0..d {
            e[col] = c(1.0, 0.0);
            let f = self.lift(&e);
            for j in 0..n {
                m[(2 * j, col)] = f[j][0];
                m[(2 * j + 1, col)] = f[j][1];
            }
            e[col] = c(0.0, 0.0);
        }
        m
    }
}

/// `V_B` for projector block `p` (4×4) and constraint order `m`:
/// `(1−P)·trace(D^l ψ) = 0` for `0 ≤ l < m`.
pub fn constraint_subspace(op: &DiscreteOperator, p: &Block, order: usize) -> Result<ConstraintSubspace> {
    if order == 0 {
        return Err(precondition("constraint order must be at least 1"));
    }
    let grid = op.grid().clone();
    if order == 1 {
        let q = dense::projector_range(p.as_ref())?;
        check_rank_gap(p)?;
        return Ok(ConstraintSubspace { grid, order, basis: Basis::Structured { q } });
    }
    let n = grid.nx;
    let id = dense::identity(4);
    let comp = &id - p;
    let dmat = op.to_dense();
    // rows: (1−P) R D^l, as a (4·order) × 2n matrix
    let mut rows = Mat::<C64>::zeros(4 * order, 2 * n);
    let mut power = dense::identity(2 * n);
    for l in 0..order {
        for i in 0..4 {
            for col in 0..2 * n {
                let mut acc = c(0.0, 0.0);
                for k in 0..4 {
                    let node_row = if k < 2 { k } else { 2 * (n - 1) + (k - 2) };
                    acc += comp[(i, k)] * power[(node_row, col)];
                }
                rows[(4 * l + i, col)] = acc;
            }
        }
        if l + 1 < order {
            power = &dmat * &power;
        }
    }
    // null space in the H inner product: ψ = H^{-1/2} φ
    for col in 0..2 * n {
        let w = 1.0 / grid.weight(col / 2).sqrt();
        for i in 0..4 * order {
            rows[(i, col)] *= w;
        }
    }
    let svd = rows.svd().map_err(|e| Error::Backend(format!("{e:?}")))?;
    let s = svd.S();
    let smax = if s.dim() > 0 { s[0].re } else { 0.0 };
    let mut rank = 0;
    for i in 0..s.dim() {
        let v = s[i].re;
        if v > RANK_FULL * smax {
            rank += 1;
        } else if v > RANK_ZERO * smax {
            return Err(Error::DegenerateConstraints { singular_value: v / smax });
        }
    }
    let v = svd.V();
    let d = 2 * n - rank;
    let basis = Mat::from_fn(2 * n, d, |i, j| v[(i, rank + j)] * (1.0 / grid.weight(i / 2).sqrt()));
    Ok(ConstraintSubspace { grid, order, basis: Basis::Dense { basis } })
}

fn check_rank_gap(p: &Block) -> Result<()> {
    let vals = dense::eigvalsh(p.as_ref())?;
    for v in vals {
        let dist = v.abs().min((1.0 - v).abs());
        if dist > 1e-6 {
            return Err(Error::DegenerateConstraints { singular_value: v });
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
enum Compressed {
    Bordered(BorderedMatrix),
    Dense(Mat<C64>),
}

/// `B* H D B` on `V_B`.
#[derive(Clone, Debug)]
pub struct ConstrainedOperator {
    matrix: Compressed,
    defect: f64,
}

pub fn constrained_operator(op: &DiscreteOperator, v: &ConstraintSubspace) -> Result<ConstrainedOperator> {
    let a = constrained_operator_unchecked(op, v);
    if a.defect > HERMITIAN_FAIL {
        return Err(Error::SelfadjointnessViolation { defect: a.defect });
    }
    Ok(a)
}

/// Compression without the self-adjointness gate (for negative controls).
pub fn constrained_operator_unchecked(op: &DiscreteOperator, v: &ConstraintSubspace) -> ConstrainedOperator {
    let matrix = match &v.basis {
        Basis::Structured { q } => Compressed::Bordered(compress_structured(op, q)),
        Basis::Dense { basis } => {
            let g = &v.grid;
            let d = op.to_dense();
            let hb = Mat::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] * g.weight(i / 2));
            Compressed::Dense(hb.adjoint() * &d * basis)
        }
    };
    let (raw, scale) = match &matrix {
        Compressed::Bordered(b) => (b.hermitian_defect(), b.max_abs()),
        Compressed::Dense(m) => (dense::hermitian_defect(m.as_ref()), dense::max_abs(m.as_ref())),
    };
    ConstrainedOperator { matrix, defect: raw / scale.max(1.0) }
}

fn compress_structured(op: &DiscreteOperator, q: &Mat<C64>) -> BorderedMatrix {
    let n = op.grid().nx;
    let r = q.ncols();
    let m = n - 2;
    let last = n - 1;
    let qcol = |i: usize, end: usize| -> Spinor { [q[(2 * end, i)], q[(2 * end + 1, i)]] };
    let diag = (1..=m).map(|j| op.block(j, j)).collect();
    let lower = (1..=m).map(|j| if j > 1 { op.block(j, j - 1) } else { Mat2::zero() }).collect();
    let upper = (1..=m).map(|j| if j < m { op.block(j, j + 1) } else { Mat2::zero() }).collect();
    let root2 = std::f64::consts::SQRT_2;
    let corner = Mat::from_fn(r, r, |i, k| {
        let (a0, b0) = (qcol(i, 0), qcol(k, 0));
        let (a1, b1) = (qcol(i, 1), qcol(k, 1));
        dot(&a0, &op.block(0, 0).apply(&b0)) + dot(&a1, &op.block(last, last).apply(&b1))
    });
    let top_from = |end: usize, node: usize, inner: usize| {
        let blk = op.block(node, inner);
        Mat::from_fn(r, 2, |i, d| {
            let qi = qcol(i, end);
            (qi[0].conj() * blk.get(0, d) + qi[1].conj() * blk.get(1, d)) / root2
        })
    };
    let left_from = |end: usize, inner: usize, node: usize| {
        let blk = op.block(inner, node);
        Mat::from_fn(2, r, |d, i| {
            let qi = qcol(i, end);
            (blk.get(d, 0) * qi[0] + blk.get(d, 1) * qi[1]) * root2
        })
    };
    BorderedMatrix {
        corner,
        diag,
        lower,
        upper,
        top: [top_from(0, 0, 1), top_from(1, last, last - 1)],
        left: [left_from(0, 1, 0), left_from(1, last - 1, last)],
    }
}

/// Factorization of `αI + βA` for repeated solves.
#[derive(Clone, Debug)]
pub enum ShiftedSolver {
    Bordered(BorderedLu),
    Dense { inverse: Mat<C64> },
}

impl ShiftedSolver {
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        match self {
            ShiftedSolver::Bordered(lu) => lu.solve(b),
            ShiftedSolver::Dense { inverse } => Ok(matvec(inverse, b)),
        }
    }
}

pub(crate) fn matvec(m: &Mat<C64>, x: &[C64]) -> Vec<C64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

pub(crate) fn matvec_adjoint(m: &Mat<C64>, x: &[C64]) -> Vec<C64> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].conj() * x[i]).sum())
        .collect()
}

impl ConstrainedOperator {
    pub fn dim(&self) -> usize {
        match &self.matrix {
            Compressed::Bordered(b) => b.dim(),
            Compressed::Dense(m) => m.nrows(),
        }
    }

    /// Relative Hermitian defect `max|A − A*| / max(1, max|A|)`.
    pub fn hermitian_defect(&self) -> f64 {
        self.defect
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        match &self.matrix {
            Compressed::Bordered(b) => b.apply(x),
            Compressed::Dense(m) => matvec(m, x),
        }
    }

    pub fn to_dense(&self) -> Mat<C64> {
        match &self.matrix {
            Compressed::Bordered(b) => b.to_dense(),
            Compressed::Dense(m) => m.clone(),
        }
    }

    pub fn shifted(&self, alpha: C64, beta: C64) -> Result<ShiftedSolver> {
        match &self.matrix {
            Compressed::Bordered(b) => Ok(ShiftedSolver::Bordered(b.shifted(alpha, beta)?)),
            Compressed::Dense(m) => {
                let n = m.nrows();
                let shifted = Mat::from_fn(n, n, |i, j| beta * m[(i, j)] + if i == j { alpha } else { c(0.0, 0.0) });
                Ok(ShiftedSolver::Dense { inverse: shifted.partial_piv_lu().inverse() })
            }
        }
    }

    /// Eigendecomposition of the Hermitian part (exact for admissible
    /// families, whose compression is Hermitian).
    pub fn eigen(&self) -> Result<SpectralDecomposition> {
        let m = self.to_dense();
        let n = m.nrows();
        let herm = Mat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        let (eigenvalues, vectors) = dense::eigh(herm.as_ref())?;
        Ok(SpectralDecomposition { eigenvalues, vectors })
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigen()?.eigenvalues)
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub vectors: Mat<C64>,
}

impl SpectralDecomposition {
    /// `f(A) x` via the eigenbasis.
    pub fn apply_fn(&self, x: &[C64], f: impl Fn(f64) -> C64) -> Vec<C64> {
        let mut coeffs = matvec_adjoint(&self.vectors, x);
        for (cv, lam) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *cv *= f(*lam);
        }
        matvec(&self.vectors, &coeffs)
    }

    /// Dense matrix of `f(A)`.
    pub fn matrix_fn(&self, f: impl Fn(f64) -> C64) -> Mat<C64> {
        let u = &self.vectors;
        let n = u.nrows();
        let scaled = Mat::from_fn(n, n, |i, j| u[(i, j)] * f(self.eigenvalues[j]));
        scaled * u.adjoint()
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Mollifier multiplier `e^{−ε(1+λ²)}`.
pub fn mollifier_weight(epsilon: f64, lambda: f64) -> f64 {
    (-epsilon * (1.0 + lambda * lambda)).exp()
}

/// `J^(ε) x` in `V_B` coordinates.
pub fn mollify_coords(spec: &SpectralDecomposition, epsilon: f64, x: &[C64]) -> Vec<C64> {
    spec.apply_fn(x, |l| c(mollifier_weight(epsilon, l), 0.0))
}

/// `J^(ε) ψ` for a grid field; `ψ` is first projected onto `V_B`.
pub fn mollifier_apply(spec: &SpectralDecomposition, space: &ConstraintSubspace, epsilon: f64, psi: &[Spinor]) -> Result<Field> {
    if epsilon < 0.0 {
        return Err(precondition("mollifier parameter must be nonnegative"));
    }
    let x = space.restrict(psi);
    Ok(space.lift(&mollify_coords(spec, epsilon, &x)))
}

/// Which norm the continuity probe measures in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeNorm {
    L2,
    /// Discrete `H¹`: `‖u‖²_H + ‖Δ⁺u‖²`.
    H1,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ContinuityRow {
    pub t0: f64,
    pub t1: f64,
    pub difference: f64,
}

/// `‖D̃_{t_{i+1},B}J^(ε) − D̃_{t_i,B}J^(ε)‖` over adjacent samples, as
/// operators on grid functions (max over modes).
pub fn family_continuity_probe(
    geometry: &Geometry,
    family: &ProjectorFamily,
    grid: &Grid,
    window: (f64, f64),
    samples: usize,
    epsilon: f64,
    norm: ProbeNorm,
) -> Result<Vec<ContinuityRow>> {
    if samples < 3 {
        return Err(precondition("continuity probe needs at least 3 samples"));
    }
    let model = CliffordModel::new(geometry.dim());
    let n = grid.nx;
    let ts: Vec<f64> = (0..samples)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / (samples - 1) as f64)
        .collect();
    let gram_factor = match norm {
        ProbeNorm::L2 => None,
        ProbeNorm::H1 => Some(h1_factor(grid)?),
    };
    let mut diffs = vec![0.0f64; samples - 1];
    for k in geometry.modes() {
        let mut prev: Option<Mat<C64>> = None;
        for (i, &t) in ts.iter().enumerate() {
            let op = DiscreteOperator::build(geometry, &model, grid, k, t)?;
            let p = family.block(k, t)?;
            let v = constraint_subspace(&op, &p, 1)?;
            let a = constrained_operator(&op, &v)?;
            let spec = a.eigen()?;
            let inner = spec.matrix_fn(|l| c(l * mollifier_weight(epsilon, l), 0.0));
            let b = v.dense_basis();
            // full-space operator B M B* H, conjugated into the Euclidean frame
            let hb = Mat::from_fn(2 * n, b.ncols(), |r, cidx| b[(r, cidx)] * grid.weight(r / 2));
            let lifted = &b * &inner * hb.adjoint();
            let framed = match &gram_factor {
                None => {
                    let sq = |r: usize| grid.weight(r / 2).sqrt();
                    Mat::from_fn(2 * n, 2 * n, |r, col| lifted[(r, col)] * sq(r) / sq(col))
                }
                Some((rt, rt_inv)) => rt * &lifted * rt_inv,
            };
            if let Some(pm) = &prev {
                let d = dense::op_norm((&framed - pm).as_ref())?;
                diffs[i - 1] = diffs[i - 1].max(d);
            }
            prev = Some(framed);
        }
    }
    Ok(ts.windows(2).zip(diffs).map(|(w, d)| ContinuityRow { t0: w[0], t1: w[1], difference: d }).collect())
}

/// `(R*, R^{-*})` with `G = R R*` the discrete `H¹` Gram matrix.
fn h1_factor(grid: &Grid) -> Result<(Mat<C64>, Mat<C64>)> {
    let n = grid.nx;
    let h = grid.h;
    let mut g = Mat::<C64>::zeros(2 * n, 2 * n);
    for j in 0..n {
        for s in 0..2 {
            g[(2 * j + s, 2 * j + s)] += c(grid.weight(j), 0.0);
        }
    }
    // Σ_j h |(u_{j+1} − u_j)/h|²
    for j in 0..n - 1 {
        let w = 1.0 / h;
        for s in 0..2 {
            let (a, b) = (2 * j + s, 2 * (j + 1) + s);
            g[(a, a)] += c(w, 0.0);
            g[(b, b)] += c(w, 0.0);
            g[(a, b)] -= c(w, 0.0);
            g[(b, a)] -= c(w, 0.0);
        }
    }
    let llt = g.llt(Side::Lower).map_err(|e| Error::Backend(format!("{e:?}")))?;
    let l = llt.L().to_owned();
    let rt = l.adjoint().to_owned();
    let rt_inv = rt.partial_piv_lu().inverse();
    Ok((rt, rt_inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{BoundaryOperatorSpec, ProjectorFamily};
    use crate::profile::AnalyticFn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
        (0..grid.nx())
            .map(|_| [c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)), c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))])
            .collect()
    }

    fn strip_setup(nx: usize) -> (Geometry, CliffordModel, Grid, BoundaryOperatorSpec) {
        let g = Geometry::strip(1.0).unwrap();
        let m = CliffordModel::new(g.dim());
        let grid = Grid::new(nx, 1.0).unwrap();
        let spec = BoundaryOperatorSpec::new(g.clone());
        (g, m, grid, spec)
    }

    #[test]
    fn coarse_grid_rejected() {
        assert!(matches!(Grid::new(15, 1.0), Err(Error::GridTooCoarse { nx: 15, min: 16 })));
        let g = Grid::new(33, 2.0).unwrap();
        let total: f64 = (0..33).map(|j| g.weight(j)).sum();
        assert!((total - 2.0).abs() < 1e-15);
    }

    #[test]
    fn green_identity_for_all_fields() {
        let g = Geometry::cylinder(1.0, AnalyticFn::Const(0.7), 2).unwrap();
        let m = CliffordModel::new(g.dim());
        let grid = Grid::new(40, 1.0).unwrap();
        let op = DiscreteOperator::build(&g, &m, &grid, 1, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let u = random_field(&grid, &mut rng);
            let v = random_field(&grid, &mut rng);
            let lhs = grid.inner(&op.apply(&u), &v) - grid.inner(&u, &op.apply(&v));
            let rhs = op.boundary_form(&u, &v);
            assert!((lhs - rhs).norm() < 1e-13 * (1.0 + rhs.norm()) * 40.0);
        }
    }

    #[test]
    fn plane_wave_dispersion() {
        let (g, m, grid, _) = strip_setup(201);
        let op = DiscreteOperator::build(&g, &m, &grid, 0, 0.0).unwrap();
        let xi = 2.0 * std::f64::consts::PI * 3.0;
        let u = grid.sample(|x| {
            let e = C64::from_polar(1.0, xi * x);
            [e, e]
        });
        let du = op.apply(&u);
        let lam = (xi * grid.h()).sin() / grid.h();
        let mut err: f64 = 0.0;
        for j in 1..grid.nx() - 1 {
            err = err.max((du[j][0] - u[j][0] * lam).norm());
        }
        assert!(err < 1e-12);
        assert!((lam - xi).abs() < xi.powi(3) * grid.h().powi(2) / 6.0 * 1.01);
    }

    #[test]
    fn transmission_spectrum_is_periodic() {
        // odd number of periodic nodes, so no checkerboard zero mode
        let (g, m, grid, spec) = strip_setup(128);
        let op = DiscreteOperator::build(&g, &m, &grid, 0, 0.0).unwrap();
        let p = ProjectorFamily::transmission(&spec).unwrap().block(0, 0.0).unwrap();
        let v = constraint_subspace(&op, &p, 1).unwrap();
        assert_eq!(v.codim(), 2);
        let a = constrained_operator(&op, &v).unwrap();
        assert!(a.hermitian_defect() < 1e-14);
        let ev = a.eigenvalues().unwrap();
        // each ±2πm appears twice (two chiral sectors); central differences
        // also carry high-frequency doublers, so match by nearest eigenvalue
        let two_pi = 2.0 * std::f64::consts::PI;
        for m in -2i32..=2 {
            let exact = two_pi * m as f64;
            let tol = 2.0 * exact.abs().powi(3) * grid.h().powi(2) / 6.0 + 1e-10;
            let hits = ev.iter().filter(|l| (*l - exact).abs() < tol).count();
            assert_eq!(hits, 2, "eigenvalue {exact}");
        }
    }

    #[test]
    fn full_projector_gives_full_space() {
        let (g, m, grid, spec) = strip_setup(20);
        let op = DiscreteOperator::build(&g, &m, &grid, 0, 0.0).unwrap();
        let v = constraint_subspace(&op, &dense::identity(4), 1).unwrap();
        assert_eq!(v.dim(), 40);
        let p = ProjectorFamily::transmission(&spec).unwrap().block(0, 0.0).unwrap();
        let v2 = constraint_subspace(&op, &p, 2).unwrap();
        assert!(v2.codim() <= 4 && v2.codim() >= 2);
        let bb = v2.dense_basis();
        let gram = Mat::from_fn(bb.ncols(), bb.ncols(), |i, j| {
            (0..40).map(|r| bb[(r, i)].conj() * bb[(r, j)] * grid.weight(r / 2)).sum::<C64>()
        });
        assert!(dense::max_abs((gram - dense::identity(bb.ncols())).as_ref()) < 1e-12);
    }

    #[test]
    fn chirality_spectrum_symmetric() {
        let (g, m, grid, spec) = strip_setup(64);
        let op = DiscreteOperator::build(&g, &m, &grid, 0, 0.0).unwrap();
        let p = ProjectorFamily::chirality(&spec).unwrap().block(0, 0.0).unwrap();
        let v = constraint_subspace(&op, &p, 1).unwrap();
        let ev = constrained_operator(&op, &v).unwrap().eigenvalues().unwrap();
        let n = ev.len();
        for i in 0..n {
            assert!((ev[i] + ev[n - 1 - i]).abs() < 1e-10);
        }
    }

    #[test]
    fn non_admissible_projector_is_not_selfadjoint() {
        let (g, m, grid, _) = strip_setup(32);
        let op = DiscreteOperator::build(&g, &m, &grid, 0, 0.0).unwrap();
        let h = c(0.5, 0.0);
        let p = crate::boundary::block_diag(&Mat2::new(h, h, h, h), &Mat2::new(h, h, h, h));
        let v = constraint_subspace(&op, &p, 1).unwrap();
        assert!(matches!(constrained_operator(&op, &v), Err(Error::SelfadjointnessViolation { .. })));
    }

    #[test]
    fn structured_matches_dense_compression() {
        let g = Geometry::cylinder(1.0, AnalyticFn::Const(0.8), 1).unwrap();
        let m = CliffordModel::new(g.dim());
        let grid = Grid::new(24, 1.0).unwrap();
        let spec = BoundaryOperatorSpec::new(g.clone());
        let op = DiscreteOperator::build(&g, &m, &grid, -1, 0.0).unwrap();
        let p = ProjectorFamily::aps(&spec).unwrap().block(-1, 0.0).unwrap();
        let v = constraint_subspace(&op, &p, 1).unwrap();
        let a = constrained_operator(&op, &v).unwrap().to_dense();
        let b = v.dense_basis();
        let hb = Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * grid.weight(i / 2));
        let reference = hb.adjoint() * op.to_dense() * &b;
        assert!(dense::max_abs((a - reference).as_ref()) < 1e-12);
    }

    #[test]
    fn mollifier_contracts() {
        let (g, m, grid, spec) = strip_setup(48);
        let op = DiscreteOperator::build(&g, &m, &grid, 0, 0.0).unwrap();
        let p = ProjectorFamily::transmission(&spec).unwrap().block(0, 0.0).unwrap();
        let v = constraint_subspace(&op, &p, 1).unwrap();
        let sd = constrained_operator(&op, &v).unwrap().eigen().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = v.project(&random_field(&grid, &mut rng));
        let same = mollifier_apply(&sd, &v, 0.0, &psi).unwrap();
        let diff: Vec<Spinor> = same.iter().zip(&psi).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
        assert!(grid.norm_sqr(&diff).sqrt() < 1e-12);
        for eps in [0.01, 0.1, 1.0] {
            let out = mollifier_apply(&sd, &v, eps, &psi).unwrap();
            assert!(grid.norm_sqr(&out).sqrt() <= (-eps as f64).exp() * grid.norm_sqr(&psi).sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn constant_family_probe_is_flat() {
        let (g, _, grid, spec) = strip_setup(16);
        let fam = ProjectorFamily::transmission(&spec).unwrap();
        let rows = family_continuity_probe(&g, &fam, &grid, (0.0, 1.0), 3, 0.1, ProbeNorm::L2).unwrap();
        assert!(rows.iter().all(|r| r.difference < 1e-12));
        let rows = family_continuity_probe(&g, &fam, &grid, (0.0, 1.0), 3, 0.1, ProbeNorm::H1).unwrap();
        assert!(rows.iter().all(|r| r.difference < 1e-10));
    }
}
