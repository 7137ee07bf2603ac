//! Second-order tensors in 3D and the kinematic maps used by the material model.
//!
//! Storage is always 3×3; plane-strain problems embed the in-plane deformation
//! with unit out-of-plane stretch.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::Real;

/// Relative tolerance for symmetry and trace checks.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
}

/// A 3×3 tensor, row-major: `t[i][j]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2<S = f64>(pub [[S; 3]; 3]);

impl<S: Real> Tensor2<S> {
    pub fn zero() -> Self {
        Self([[S::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            t.0[i][i] = S::one();
        }
        t
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = f(i, j);
            }
        }
        t
    }

    pub fn from_f64(t: &Tensor2<f64>) -> Self {
        Self::from_fn(|i, j| S::cst(t.0[i][j]))
    }

    pub fn diag(a: S, b: S, c: S) -> Self {
        let mut t = Self::zero();
        t.0[0][0] = a;
        t.0[1][1] = b;
        t.0[2][2] = c;
        t
    }

    /// Dyadic product `a ⊗ b`.
    pub fn outer(a: &Vec3, b: &Vec3) -> Self {
        Self::from_fn(|i, j| S::cst(a[i] * b[j]))
    }

    pub fn value(&self) -> Tensor2<f64> {
        Tensor2::from_fn(|i, j| self.0[i][j].value())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i])
    }

    pub fn trace(&self) -> S {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Double contraction `A : B = A_ij B_ij`.
    pub fn ddot(&self, other: &Self) -> S {
        let mut s = S::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * other.0[i][j];
            }
        }
        s
    }

    /// Contraction with a constant tensor.
    pub fn ddot_f64(&self, other: &Tensor2<f64>) -> S {
        let mut s = S::zero();
        for i in 0..3 {
            for j in 0..3 {
                if other.0[i][j] != 0.0 {
                    s += self.0[i][j] * other.0[i][j];
                }
            }
        }
        s
    }

    pub fn dev(&self) -> Self {
        let m = self.trace() / 3.0;
        let mut t = *self;
        for i in 0..3 {
            t.0[i][i] -= m;
        }
        t
    }

    pub fn scale(&self, s: S) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn scale_f64(&self, s: f64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn det(&self) -> S {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    pub fn inverse(&self) -> Self {
        let a = &self.0;
        let det = self.det();
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        Self::from_fn(|i, j| adj[i][j] / det)
    }

    /// Product with a constant tensor on the right.
    pub fn mul_f64(&self, rhs: &Tensor2<f64>) -> Self {
        Self::from_fn(|i, j| {
            let mut s = S::zero();
            for k in 0..3 {
                if rhs.0[k][j] != 0.0 {
                    s += self.0[i][k] * rhs.0[k][j];
                }
            }
            s
        })
    }

    /// Product with a constant tensor on the left.
    pub fn pre_mul_f64(&self, lhs: &Tensor2<f64>) -> Self {
        Self::from_fn(|i, j| {
            let mut s = S::zero();
            for k in 0..3 {
                if lhs.0[i][k] != 0.0 {
                    s += self.0[k][j] * lhs.0[i][k];
                }
            }
            s
        })
    }
}

impl Tensor2<f64> {
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `|A − Aᵀ| / max(|A|, tiny)`.
    pub fn asymmetry(&self) -> f64 {
        let skew = *self - self.transpose();
        skew.norm() / self.norm().max(f64::MIN_POSITIVE)
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry() <= SYMMETRY_TOL
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        let mut r = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i] += self.0[i][j] * v[j];
            }
        }
        r
    }

    /// Row-major flattening `[A11, A12, A13, A21, ...]`.
    pub fn to_array(&self) -> [f64; 9] {
        let mut a = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                a[3 * i + j] = self.0[i][j];
            }
        }
        a
    }

    pub fn from_array(a: &[f64; 9]) -> Self {
        Self::from_fn(|i, j| a[3 * i + j])
    }
}

impl<S: Real> Default for Tensor2<S> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<S> Index<(usize, usize)> for Tensor2<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.0[i][j]
    }
}

impl<S> IndexMut<(usize, usize)> for Tensor2<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.0[i][j]
    }
}

impl<S: Real> Add for Tensor2<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl<S: Real> Sub for Tensor2<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl<S: Real> AddAssign for Tensor2<S> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<S: Real> SubAssign for Tensor2<S> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<S: Real> Neg for Tensor2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::from_fn(|i, j| -self.0[i][j])
    }
}

impl<S: Real> Mul for Tensor2<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][0] * rhs.0[0][j] + self.0[i][1] * rhs.0[1][j] + self.0[i][2] * rhs.0[2][j])
    }
}

/// Positive and negative parts `⟨x⟩± = (x ± |x|)/2`.
pub fn macaulay(x: f64) -> (f64, f64) {
    (0.5 * (x + x.abs()), 0.5 * (x - x.abs()))
}

pub(crate) fn macaulay_pos<S: Real>(x: S) -> S {
    (x + x.abs()) * 0.5
}

pub(crate) fn macaulay_neg<S: Real>(x: S) -> S {
    (x - x.abs()) * 0.5
}

/// Green-Lagrange strain `(Ce − I)/2` of a symmetric right Cauchy-Green tensor.
pub fn green_lagrange(ce: &Tensor2) -> Result<Tensor2, TensorError> {
    let asym = ce.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(TensorError::NotSymmetric(asym));
    }
    Ok(green_lagrange_unchecked(ce))
}

pub(crate) fn green_lagrange_unchecked<S: Real>(ce: &Tensor2<S>) -> Tensor2<S> {
    (*ce - Tensor2::identity()).scale_f64(0.5)
}

/// Mandel stress `Ce·Se`.
pub fn mandel_stress<S: Real>(ce: &Tensor2<S>, se: &Tensor2<S>) -> Tensor2<S> {
    *ce * *se
}

/// Volumetric/deviatoric decomposition of a symmetric tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolDevDecomposition {
    pub trace_part: f64,
    pub deviatoric_part: Tensor2,
}

impl VolDevDecomposition {
    pub fn recompose(&self) -> Tensor2 {
        self.deviatoric_part + Tensor2::identity().scale(self.trace_part / 3.0)
    }
}

pub fn vol_dev_split(a: &Tensor2) -> VolDevDecomposition {
    VolDevDecomposition {
        trace_part: a.trace(),
        deviatoric_part: a.dev(),
    }
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalized(a: &Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym_from(v: [f64; 6]) -> Tensor2 {
        Tensor2([[v[0], v[3], v[4]], [v[3], v[1], v[5]], [v[4], v[5], v[2]]])
    }

    #[test]
    fn macaulay_cases() {
        assert_eq!(macaulay(3.0), (3.0, 0.0));
        assert_eq!(macaulay(-3.0), (0.0, -3.0));
        assert_eq!(macaulay(0.0), (0.0, 0.0));
    }

    #[test]
    fn green_lagrange_cases() {
        assert_eq!(green_lagrange(&Tensor2::identity()).unwrap(), Tensor2::zero());
        let e = green_lagrange(&Tensor2::diag(1.21, 1.0, 1.0)).unwrap();
        assert!((e - Tensor2::diag(0.105, 0.0, 0.0)).max_abs() < 1e-15);
        let e = green_lagrange(&Tensor2::identity().scale(4.0)).unwrap();
        assert!((e - Tensor2::identity().scale(1.5)).max_abs() < 1e-15);
    }

    #[test]
    fn green_lagrange_rejects_asymmetric() {
        let mut c = Tensor2::identity();
        c[(0, 1)] = 0.1;
        assert!(matches!(green_lagrange(&c), Err(TensorError::NotSymmetric(_))));
    }

    #[test]
    fn green_lagrange_of_rotation_is_zero() {
        let (s, c) = (0.3_f64.sin(), 0.3_f64.cos());
        let r = Tensor2([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
        let ce = r.transpose() * r;
        // symmetric up to roundoff; symmetrize before the strict check
        let ce = (ce + ce.transpose()).scale(0.5);
        assert!(green_lagrange(&ce).unwrap().max_abs() < 1e-15);
        assert_eq!(green_lagrange(&Tensor2::identity()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mandel_cases() {
        let s = sym_from([1.0, 2.0, 3.0, 0.5, -0.2, 0.7]);
        assert_eq!(mandel_stress(&Tensor2::identity(), &s), s);
        let two = Tensor2::identity().scale(2.0);
        assert_eq!(mandel_stress(&two, &Tensor2::identity()), two);

        let ce = sym_from([1.1, 0.9, 1.05, 0.02, -0.03, 0.01]);
        let m = mandel_stress(&ce, &s);
        // naive triple loop
        let mut oracle = [[0.0; 3]; 3];
        for (i, row) in oracle.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                for k in 0..3 {
                    *out += ce.0[i][k] * s.0[k][j];
                }
            }
        }
        assert!((m - Tensor2(oracle)).max_abs() < 1e-15);
    }

    #[test]
    fn vol_dev_cases() {
        let s = vol_dev_split(&Tensor2::identity());
        assert_eq!(s.trace_part, 3.0);
        assert!(s.deviatoric_part.max_abs() < 1e-15);
        let s = vol_dev_split(&Tensor2::diag(1.0, 2.0, 3.0));
        assert_eq!(s.trace_part, 6.0);
        assert!((s.deviatoric_part - Tensor2::diag(-1.0, 0.0, 1.0)).max_abs() < 1e-15);
        let b = sym_from([1.0, -2.0, 0.3, 0.4, 0.5, 0.6]).dev();
        let s = vol_dev_split(&b);
        assert!(s.trace_part.abs() < 1e-15);
        assert!((s.deviatoric_part - b).max_abs() < 1e-15);
    }

    #[test]
    fn inverse_and_det() {
        let a = Tensor2([[2.0, 0.1, 0.0], [0.3, 1.5, -0.2], [0.0, 0.4, 1.1]]);
        let i = a * a.inverse();
        assert!((i - Tensor2::identity()).max_abs() < 1e-14);
        assert!((a.det() - (2.0 * (1.5 * 1.1 + 0.08) - 0.1 * (0.33))).abs() < 1e-14);
    }

    #[test]
    fn macaulay_random_scalars() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let x: f64 = rng.random_range(-1e6..1e6);
            let (p, n) = macaulay(x);
            assert!(p >= 0.0 && n <= 0.0);
            assert_eq!(p + n, x);
        }
    }

    proptest! {
        #[test]
        fn vol_dev_recomposes(v in proptest::array::uniform6(-1e3f64..1e3)) {
            let a = sym_from(v);
            let s = vol_dev_split(&a);
            let scale = a.norm().max(1.0);
            prop_assert!(s.deviatoric_part.trace().abs() <= 1e-12 * scale);
            prop_assert!((s.recompose() - a).norm() <= 1e-12 * scale);
        }
    }
}
