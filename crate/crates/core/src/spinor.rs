//! Two-component spinors and 2×2 complex matrices.

use std::ops::{Add, Mul, Neg, Sub};

use crate::C64;

pub type Spinor = [C64; 2];

pub const ZERO_SPINOR: Spinor = [C64 { re: 0.0, im: 0.0 }, C64 { re: 0.0, im: 0.0 }];

pub const fn c(re: f64, im: f64) -> C64 {
    C64 { re, im }
}

/// Standard Hermitian product, conjugate-linear in the first slot.
pub fn dot(u: &Spinor, v: &Spinor) -> C64 {
    u[0].conj() * v[0] + u[1].conj() * v[1]
}

pub fn norm_sqr(u: &Spinor) -> f64 {
    u[0].norm_sqr() + u[1].norm_sqr()
}

pub fn scale(s: C64, u: &Spinor) -> Spinor {
    [s * u[0], s * u[1]]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[C64; 2]; 2]);

impl Mat2 {
    pub const fn new(a: C64, b: C64, c_: C64, d: C64) -> Self {
        Mat2([[a, b], [c_, d]])
    }

    pub const fn identity() -> Self {
        Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0))
    }

    pub const fn zero() -> Self {
        Mat2::new(c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0))
    }

    pub const fn pauli_x() -> Self {
        Mat2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
    }

    pub const fn pauli_y() -> Self {
        Mat2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0))
    }

    pub const fn pauli_z() -> Self {
        Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[i][j]
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Mat2::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    pub fn scale(&self, s: C64) -> Self {
        let m = &self.0;
        Mat2::new(s * m[0][0], s * m[0][1], s * m[1][0], s * m[1][1])
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(c(s, 0.0))
    }

    pub fn apply(&self, u: &Spinor) -> Spinor {
        let m = &self.0;
        [m[0][0] * u[0] + m[0][1] * u[1], m[1][0] * u[0] + m[1][1] * u[1]]
    }

    pub fn det(&self) -> C64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.norm() == 0.0 {
            return None;
        }
        let m = &self.0;
        let inv = d.inv();
        Some(Mat2::new(m[1][1] * inv, -m[0][1] * inv, -m[1][0] * inv, m[0][0] * inv))
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &Mat2) -> f64 {
        (*self - *other).max_abs()
    }

    pub fn anticommutator(&self, other: &Mat2) -> Mat2 {
        *self * *other + *other * *self
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.distance(&self.adjoint())
    }

    /// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian
    /// matrix, in closed form.
    pub fn hermitian_eigen(&self) -> ([f64; 2], [Spinor; 2]) {
        let a = self.0[0][0].re;
        let d = self.0[1][1].re;
        let b = self.0[0][1];
        let mean = 0.5 * (a + d);
        let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        let lo = mean - half_gap;
        let hi = mean + half_gap;
        if b.norm() <= 1e-300 {
            let e0 = [c(1.0, 0.0), c(0.0, 0.0)];
            let e1 = [c(0.0, 0.0), c(1.0, 0.0)];
            return if a <= d { ([a, d], [e0, e1]) } else { ([d, a], [e1, e0]) };
        }
        // (A - λ) v = 0 with v = (b, λ - a)
        let vec_for = |lam: f64| {
            let v = [b, c(lam - a, 0.0)];
            let n = norm_sqr(&v).sqrt();
            scale(c(1.0 / n, 0.0), &v)
        };
        ([lo, hi], [vec_for(lo), vec_for(hi)])
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2::new(a[0][0] + b[0][0], a[0][1] + b[0][1], a[1][0] + b[1][0], a[1][1] + b[1][1])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + (-o)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale_re(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}
