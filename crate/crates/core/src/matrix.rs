use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::dot2;

/// Real 2x2 matrix, row-major.
///
/// Products and the determinant evaluate each two-term dot product with a
/// fused multiply-add correction, which keeps the sandwich product accurate
/// when the arms are badly unbalanced and the inverse bread has large
/// cancelling entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Matrix2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Matrix2 {
    pub const ZERO: Matrix2 = Matrix2::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Matrix2 = Matrix2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn symmetric(a11: f64, off: f64, a22: f64) -> Self {
        Self::new(a11, off, off, a22)
    }

    /// Outer product `v v'`.
    pub fn outer(v: [f64; 2]) -> Self {
        Self::new(v[0] * v[0], v[0] * v[1], v[1] * v[0], v[1] * v[1])
    }

    pub fn det(&self) -> f64 {
        dot2(self.a11, self.a22, -self.a12, self.a21)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn is_symmetric(&self) -> bool {
        self.a12 == self.a21
    }

    pub fn matmul(&self, rhs: &Matrix2) -> Matrix2 {
        Matrix2::new(
            dot2(self.a11, rhs.a11, self.a12, rhs.a21),
            dot2(self.a11, rhs.a12, self.a12, rhs.a22),
            dot2(self.a21, rhs.a11, self.a22, rhs.a21),
            dot2(self.a21, rhs.a12, self.a22, rhs.a22),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.a11
            .abs()
            .max(self.a12.abs())
            .max(self.a21.abs())
            .max(self.a22.abs())
    }
}

impl std::ops::Add for Matrix2 {
    type Output = Matrix2;
    fn add(self, rhs: Matrix2) -> Matrix2 {
        Matrix2::new(
            self.a11 + rhs.a11,
            self.a12 + rhs.a12,
            self.a21 + rhs.a21,
            self.a22 + rhs.a22,
        )
    }
}

impl std::ops::AddAssign for Matrix2 {
    fn add_assign(&mut self, rhs: Matrix2) {
        *self = *self + rhs;
    }
}

impl std::ops::Mul for Matrix2 {
    type Output = Matrix2;
    fn mul(self, rhs: Matrix2) -> Matrix2 {
        self.matmul(&rhs)
    }
}

/// Adjugate-over-determinant inverse.
pub fn invert2(m: &Matrix2) -> Result<Matrix2> {
    let det = m.det();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::SingularMatrix);
    }
    Ok(Matrix2::new(
        m.a22 / det,
        -m.a12 / det,
        -m.a21 / det,
        m.a11 / det,
    ))
}
