//! Block-tridiagonal matrices with a dense border, as produced by compressing
//! a local stencil onto a subspace that couples the two boundary nodes.
//!
//! Coordinates are ordered `[border (r); interior node 0 (2); node 1 (2); …]`.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;

use crate::error::{Error, Result};
use crate::spinor::{c, Mat2};
use crate::C64;

const SOLVE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct BorderedMatrix {
    pub(crate) corner: Mat<C64>,
    pub(crate) diag: Vec<Mat2>,
    /// `lower[i]` couples node `i` to node `i-1` (`lower[0]` unused).
    pub(crate) lower: Vec<Mat2>,
    /// `upper[i]` couples node `i` to node `i+1` (last entry unused).
    pub(crate) upper: Vec<Mat2>,
    /// Border rows against the first / last interior node, `r × 2`.
    pub(crate) top: [Mat<C64>; 2],
    /// First / last interior node rows against the border, `2 × r`.
    pub(crate) left: [Mat<C64>; 2],
}

impl BorderedMatrix {
    pub fn border(&self) -> usize {
        self.corner.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.border() + 2 * self.nodes()
    }

    fn node_slot(&self, which: usize) -> usize {
        if which == 0 {
            0
        } else {
            self.nodes() - 1
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let r = self.border();
        let m = self.nodes();
        let mut y = vec![c(0.0, 0.0); self.dim()];
        let xi = |i: usize| [x[r + 2 * i], x[r + 2 * i + 1]];
        for i in 0..r {
            let mut s = c(0.0, 0.0);
            for j in 0..r {
                s += self.corner[(i, j)] * x[j];
            }
            for w in 0..2 {
                let node = xi(self.node_slot(w));
                s += self.top[w][(i, 0)] * node[0] + self.top[w][(i, 1)] * node[1];
            }
            y[i] = s;
        }
        for i in 0..m {
            let mut v = self.diag[i].apply(&xi(i));
            if i > 0 {
                let l = self.lower[i].apply(&xi(i - 1));
                v = [v[0] + l[0], v[1] + l[1]];
            }
            if i + 1 < m {
                let u = self.upper[i].apply(&xi(i + 1));
                v = [v[0] + u[0], v[1] + u[1]];
            }
            y[r + 2 * i] = v[0];
            y[r + 2 * i + 1] = v[1];
        }
        for w in 0..2 {
            let i = self.node_slot(w);
            for s in 0..2 {
                let mut acc = c(0.0, 0.0);
                for j in 0..r {
                    acc += self.left[w][(s, j)] * x[j];
                }
                y[r + 2 * i + s] += acc;
            }
        }
        y
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let n = self.dim();
        let mut out = Mat::<C64>::zeros(n, n);
        let mut e = vec![c(0.0, 0.0); n];
        for j in 0..n {
            e[j] = c(1.0, 0.0);
            let col = self.apply(&e);
            for i in 0..n {
                out[(i, j)] = col[i];
            }
            e[j] = c(0.0, 0.0);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = crate::dense::max_abs(self.corner.as_ref());
        for b in self.diag.iter().chain(&self.lower).chain(&self.upper) {
            m = m.max(b.max_abs());
        }
        for w in 0..2 {
            m = m.max(crate::dense::max_abs(self.top[w].as_ref()));
            m = m.max(crate::dense::max_abs(self.left[w].as_ref()));
        }
        m
    }

    /// `max |M - M*|`, without densifying.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d = crate::dense::hermitian_defect(self.corner.as_ref());
        let m = self.nodes();
        for i in 0..m {
            d = d.max(self.diag[i].hermitian_defect());
            if i + 1 < m {
                d = d.max(self.upper[i].distance(&self.lower[i + 1].adjoint()));
            }
        }
        let r = self.border();
        if m == 1 {
            let sum_top = &self.top[0] + &self.top[1];
            let sum_left = &self.left[0] + &self.left[1];
            for i in 0..r {
                for s in 0..2 {
                    d = d.max((sum_top[(i, s)] - sum_left[(s, i)].conj()).norm());
                }
            }
        } else {
            for w in 0..2 {
                for i in 0..r {
                    for s in 0..2 {
                        d = d.max((self.top[w][(i, s)] - self.left[w][(s, i)].conj()).norm());
                    }
                }
            }
        }
        d
    }

    /// Factor `α I + β M`.
    pub fn shifted(&self, alpha: C64, beta: C64) -> Result<BorderedLu> {
        let r = self.border();
        let m = self.nodes();
        let id = Mat2::identity();
        let mut ginv = Vec::with_capacity(m);
        let mut lower = Vec::with_capacity(m);
        let mut upper = Vec::with_capacity(m);
        for i in 0..m {
            let l = self.lower[i].scale(beta);
            let u = self.upper[i].scale(beta);
            let mut g = id.scale(alpha) + self.diag[i].scale(beta);
            if i > 0 {
                let prev: &Mat2 = &ginv[i - 1];
                let prev_u: &Mat2 = &upper[i - 1];
                g = g - l * *prev * *prev_u;
            }
            let gi = g.inverse().ok_or(Error::NonConvergedLinearSolve { residual: f64::INFINITY })?;
            ginv.push(gi);
            lower.push(l);
            upper.push(u);
        }
        let mut lu = BorderedLu {
            alpha,
            beta,
            matrix: self.clone(),
            ginv,
            lower,
            upper,
            x: Mat::zeros(2 * m, r),
            schur_inv: Mat::zeros(r, r),
        };
        if r > 0 {
            // X = T⁻¹ (β Left), S = αI + βC − (β Top) X
            let mut x = Mat::<C64>::zeros(2 * m, r);
            for j in 0..r {
                let mut rhs = vec![c(0.0, 0.0); 2 * m];
                for w in 0..2 {
                    let i = self.node_slot(w);
                    for s in 0..2 {
                        rhs[2 * i + s] += beta * self.left[w][(s, j)];
                    }
                }
                let col = lu.band_solve(&rhs);
                for i in 0..2 * m {
                    x[(i, j)] = col[i];
                }
            }
            let mut s = Mat::<C64>::from_fn(r, r, |i, j| {
                beta * self.corner[(i, j)] + if i == j { alpha } else { c(0.0, 0.0) }
            });
            for i in 0..r {
                for j in 0..r {
                    let mut acc = c(0.0, 0.0);
                    for w in 0..2 {
                        let node = self.node_slot(w);
                        for t in 0..2 {
                            acc += beta * self.top[w][(i, t)] * x[(2 * node + t, j)];
                        }
                    }
                    s[(i, j)] -= acc;
                }
            }
            lu.schur_inv = s.partial_piv_lu().inverse();
            lu.x = x;
        }
        Ok(lu)
    }
}

#[derive(Clone, Debug)]
pub struct BorderedLu {
    alpha: C64,
    beta: C64,
    matrix: BorderedMatrix,
    ginv: Vec<Mat2>,
    lower: Vec<Mat2>,
    upper: Vec<Mat2>,
    x: Mat<C64>,
    schur_inv: Mat<C64>,
}

impl BorderedLu {
    fn band_solve(&self, b: &[C64]) -> Vec<C64> {
        let m = self.ginv.len();
        let mut z: Vec<[C64; 2]> = Vec::with_capacity(m);
        for i in 0..m {
            let mut zi = [b[2 * i], b[2 * i + 1]];
            if i > 0 {
                let t = (self.lower[i] * self.ginv[i - 1]).apply(&z[i - 1]);
                zi = [zi[0] - t[0], zi[1] - t[1]];
            }
            z.push(zi);
        }
        let mut y = vec![[c(0.0, 0.0); 2]; m];
        for i in (0..m).rev() {
            let mut rhs = z[i];
            if i + 1 < m {
                let t = self.upper[i].apply(&y[i + 1]);
                rhs = [rhs[0] - t[0], rhs[1] - t[1]];
            }
            y[i] = self.ginv[i].apply(&rhs);
        }
        y.into_iter().flatten().collect()
    }

    /// Solve `(αI + βM) x = b`, checking the residual.
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        let r = self.matrix.border();
        let m = self.matrix.nodes();
        let y = self.band_solve(&b[r..]);
        let mut rhs_b: Vec<C64> = b[..r].to_vec();
        for (i, rb) in rhs_b.iter_mut().enumerate() {
            for w in 0..2 {
                let node = self.matrix.node_slot(w);
                for t in 0..2 {
                    *rb -= self.beta * self.matrix.top[w][(i, t)] * y[2 * node + t];
                }
            }
        }
        let mut xb = vec![c(0.0, 0.0); r];
        for (i, xv) in xb.iter_mut().enumerate() {
            for (j, rv) in rhs_b.iter().enumerate() {
                *xv += self.schur_inv[(i, j)] * rv;
            }
        }
        let mut out = xb.clone();
        out.reserve(2 * m);
        for i in 0..2 * m {
            let mut v = y[i];
            for (j, xv) in xb.iter().enumerate() {
                v -= self.x[(i, j)] * xv;
            }
            out.push(v);
        }
        let res = relative_residual(&self.matrix, self.alpha, self.beta, &out, b);
        if res > SOLVE_TOL {
            return Err(Error::NonConvergedLinearSolve { residual: res });
        }
        Ok(out)
    }
}

fn relative_residual(mat: &BorderedMatrix, alpha: C64, beta: C64, x: &[C64], b: &[C64]) -> f64 {
    let mx = mat.apply(x);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        num += (alpha * x[i] + beta * mx[i] - b[i]).norm_sqr();
        den += b[i].norm_sqr();
    }
    if den == 0.0 {
        return num.sqrt();
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat2(rng: &mut ChaCha8Rng) -> Mat2 {
        let mut z = || c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Mat2::new(z(), z(), z(), z())
    }

    fn random(r: usize, m: usize, seed: u64) -> BorderedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diag = (0..m).map(|_| random_mat2(&mut rng)).collect();
        let lower = (0..m).map(|_| random_mat2(&mut rng)).collect();
        let upper = (0..m).map(|_| random_mat2(&mut rng)).collect();
        let mut rnd = |rows, cols| Mat::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let corner = rnd(r, r);
        let top = [rnd(r, 2), rnd(r, 2)];
        let left = [rnd(2, r), rnd(2, r)];
        BorderedMatrix { corner, diag, lower, upper, top, left }
    }

    #[test]
    fn solve_matches_dense() {
        for r in [0usize, 2, 4] {
            let mat = random(r, 20, 7 + r as u64);
            let alpha = c(8.0, 0.0);
            let beta = c(0.0, 0.7);
            let lu = mat.shifted(alpha, beta).unwrap();
            let b: Vec<C64> = (0..mat.dim()).map(|i| c((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
            let x = lu.solve(&b).unwrap();
            let dense = mat.to_dense();
            let n = mat.dim();
            for i in 0..n {
                let mut acc = alpha * x[i];
                for j in 0..n {
                    acc += beta * dense[(i, j)] * x[j];
                }
                assert!((acc - b[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_matches_dense() {
        let mat = random(2, 6, 3);
        let d = mat.to_dense();
        let x: Vec<C64> = (0..mat.dim()).map(|i| c(i as f64, 1.0)).collect();
        let y = mat.apply(&x);
        for i in 0..mat.dim() {
            let mut acc = c(0.0, 0.0);
            for j in 0..mat.dim() {
                acc += d[(i, j)] * x[j];
            }
            assert!((acc - y[i]).norm() < 1e-12);
        }
    }
}
