//! Dense complex square matrices with dimension metadata.
//!
//! `Operator` is the workhorse value for density matrices, Hamiltonians and
//! the per-detector blocks of the factored state. Everything is double
//! precision, dense and immutable after construction; dimensions are capped
//! at [`MAX_DIM`] so a misconfigured tensor product fails fast instead of
//! allocating gigabytes.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hard cap on matrix dimension for every construction that grows sizes.
pub const MAX_DIM: usize = 4096;

/// Tolerance used when validating operators tagged Hermitian at construction.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense complex square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    mat: Array2<Complex64>,
}

impl Operator {
    /// Wraps a square `ndarray` matrix, enforcing the dimension cap.
    pub fn from_matrix(mat: Array2<Complex64>) -> Result<Self> {
        let (r, c) = mat.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square, got {r}x{c}"
            )));
        }
        if r == 0 || r > MAX_DIM {
            return Err(Error::DimensionTooLarge(r));
        }
        Ok(Self { mat })
    }

    /// Builds an operator entry by entry.
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> Complex64) -> Result<Self> {
        Self::from_matrix(Array2::from_shape_fn((dim, dim), |(i, j)| f(i, j)))
    }

    /// Validates self-adjointness to [`HERMITIAN_TOL`], for operators the
    /// caller tags as Hermitian.
    pub fn hermitian(self) -> Result<Self> {
        let residual = self.hermiticity_residual();
        if residual > HERMITIAN_TOL {
            return Err(Error::NotHermitian {
                residual,
                tol: HERMITIAN_TOL,
            });
        }
        Ok(self)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag_fn(dim, |_| Complex64::new(1.0, 0.0))
    }

    pub fn from_diag(diag: &[Complex64]) -> Self {
        let mut mat = Array2::zeros((diag.len(), diag.len()));
        for (i, v) in diag.iter().enumerate() {
            mat[(i, i)] = *v;
        }
        Self { mat }
    }

    pub fn from_diag_fn(dim: usize, f: impl Fn(usize) -> Complex64) -> Self {
        let mut mat = Array2::zeros((dim, dim));
        for i in 0..dim {
            mat[(i, i)] = f(i);
        }
        Self { mat }
    }

    /// Rank-one operator |a⟩⟨b|.
    pub fn outer(a: &Array1<Complex64>, b: &Array1<Complex64>) -> Self {
        let n = a.len();
        let mat = Array2::from_shape_fn((n, n), |(i, j)| a[i] * b[j].conj());
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.mat
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.mat[(i, j)]
    }

    /// Kronecker (tensor) product; errors if the result exceeds [`MAX_DIM`].
    pub fn kron(&self, other: &Operator) -> Result<Operator> {
        let dim = self
            .dim()
            .checked_mul(other.dim())
            .ok_or(Error::DimensionTooLarge(usize::MAX))?;
        if dim > MAX_DIM {
            return Err(Error::DimensionTooLarge(dim));
        }
        let (n, m) = (self.dim(), other.dim());
        let mut mat = Array2::zeros((dim, dim));
        for i in 0..n {
            for j in 0..n {
                let a = self.mat[(i, j)];
                if a == Complex64::ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        mat[(i * m + k, j * m + l)] = a * other.mat[(k, l)];
                    }
                }
            }
        }
        Ok(Operator { mat })
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Operator {
        let n = self.dim();
        let mat = Array2::from_shape_fn((n, n), |(i, j)| self.mat[(j, i)].conj());
        Operator { mat }
    }

    pub fn trace(&self) -> Complex64 {
        self.mat.diag().sum()
    }

    /// max_ij |A_ij − conj(A_ji)|
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.mat[(i, j)] - self.mat[(j, i)].conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim(), other.dim(), "max_abs_diff on mismatched dims");
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.mat.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn matmul(&self, other: &Operator) -> Operator {
        assert_eq!(self.dim(), other.dim(), "matmul on mismatched dims");
        Operator {
            mat: self.mat.dot(&other.mat),
        }
    }

    pub fn scale(&self, s: Complex64) -> Operator {
        Operator {
            mat: self.mat.mapv(|z| z * s),
        }
    }

    pub fn scale_re(&self, s: f64) -> Operator {
        self.scale(Complex64::new(s, 0.0))
    }

    pub fn add(&self, other: &Operator) -> Operator {
        assert_eq!(self.dim(), other.dim(), "add on mismatched dims");
        Operator {
            mat: &self.mat + &other.mat,
        }
    }

    pub fn sub(&self, other: &Operator) -> Operator {
        assert_eq!(self.dim(), other.dim(), "sub on mismatched dims");
        Operator {
            mat: &self.mat - &other.mat,
        }
    }

    /// In-place `self += s * other`; the accumulation primitive the
    /// integrators are built from.
    pub fn axpy(&mut self, s: Complex64, other: &Operator) {
        assert_eq!(self.dim(), other.dim(), "axpy on mismatched dims");
        self.mat.zip_mut_with(&other.mat, |a, &b| *a += s * b);
    }

    /// AB − BA
    pub fn commutator(a: &Operator, b: &Operator) -> Operator {
        a.matmul(b).sub(&b.matmul(a))
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &Array1<Complex64>) -> Array1<Complex64> {
        self.mat.dot(v)
    }

    /// ⟨v|A|v⟩ for a (not necessarily normalized) vector.
    pub fn expectation(&self, v: &Array1<Complex64>) -> Complex64 {
        let av = self.apply(v);
        v.iter().zip(av.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// trace(AB) without forming the product.
    pub fn trace_product(a: &Operator, b: &Operator) -> Complex64 {
        assert_eq!(a.dim(), b.dim(), "trace_product on mismatched dims");
        let n = a.dim();
        let mut acc = Complex64::ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += a.mat[(i, k)] * b.mat[(k, i)];
            }
        }
        acc
    }

    /// Attempts a Cholesky factorization of `self + tol·I`; success certifies
    /// that every eigenvalue is ≥ −tol. Intended for Hermitian inputs.
    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        let n = self.dim();
        let mut a = self.mat.clone();
        for i in 0..n {
            a[(i, i)] += Complex64::new(tol, 0.0);
        }
        // complex LL^† decomposition, aborting on a non-positive pivot
        let mut l = Array2::<Complex64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) {
                return false;
            }
            let dj = d.sqrt();
            l[(j, j)] = Complex64::new(dj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / dj;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_op(dim: usize, seed: u64) -> Operator {
        // tiny deterministic LCG so the property tests don't need a full rng
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        Operator::from_fn(dim, |_, _| c(next(), next())).unwrap()
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i2 = Operator::identity(2);
        let i4 = Operator::identity(4);
        assert_eq!(i2.kron(&i2).unwrap(), i4);
    }

    #[test]
    fn kron_matches_direct_expansion() {
        let a = Operator::from_diag(&[c(1.0, 0.0), c(-1.0, 0.0)]);
        let b = Operator::identity(2);
        let expected = Operator::from_diag(&[
            c(1.0, 0.0),
            c(1.0, 0.0),
            c(-1.0, 0.0),
            c(-1.0, 0.0),
        ]);
        assert_eq!(a.kron(&b).unwrap(), expected);
    }

    #[test]
    fn kron_trace_is_multiplicative() {
        for seed in 0..8 {
            let a = random_op(2, seed);
            let b = random_op(2, seed + 100);
            let lhs = a.kron(&b).unwrap().trace();
            let rhs = a.trace() * b.trace();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn kron_rejects_oversized_results() {
        let a = Operator::zeros(100);
        let b = Operator::zeros(100);
        match a.kron(&b) {
            Err(Error::DimensionTooLarge(10000)) => {}
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn kron_indexing_follows_row_major_blocks() {
        let a = random_op(2, 3);
        let b = random_op(3, 4);
        let k = a.kron(&b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for r in 0..3 {
                    for s in 0..3 {
                        let got = k.entry(i * 3 + r, j * 3 + s);
                        let want = a.entry(i, j) * b.entry(r, s);
                        assert!((got - want).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn hermitian_tag_rejects_skew_input() {
        let bad = Operator::from_fn(2, |i, j| {
            if i == 0 && j == 1 {
                c(1.0, 0.0)
            } else {
                Complex64::ZERO
            }
        })
        .unwrap();
        assert!(bad.hermitian().is_err());
    }

    #[test]
    fn cholesky_psd_check() {
        let rho = Operator::from_diag(&[c(0.7, 0.0), c(0.3, 0.0)]);
        assert!(rho.is_positive_semidefinite(1e-12));
        let neg = Operator::from_diag(&[c(1.1, 0.0), c(-0.1, 0.0)]);
        assert!(!neg.is_positive_semidefinite(1e-8));
        assert!(neg.is_positive_semidefinite(0.2));
    }

    proptest! {
        #[test]
        fn kron_is_associative(sa in 0u64..1000, sb in 0u64..1000, sc in 0u64..1000) {
            let a = random_op(2, sa);
            let b = random_op(3, sb);
            let c_ = random_op(2, sc);
            let lhs = a.kron(&b).unwrap().kron(&c_).unwrap();
            let rhs = a.kron(&b.kron(&c_).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }

        #[test]
        fn trace_is_cyclic(sa in 0u64..1000, sb in 0u64..1000, dim in 2usize..6) {
            let a = random_op(dim, sa);
            let b = random_op(dim, sb);
            let ab = a.matmul(&b).trace();
            let ba = b.matmul(&a).trace();
            prop_assert!((ab - ba).norm() <= 1e-12);
        }

        #[test]
        fn trace_product_matches_matmul(sa in 0u64..1000, sb in 0u64..1000) {
            let a = random_op(4, sa);
            let b = random_op(4, sb);
            let direct = Operator::trace_product(&a, &b);
            let full = a.matmul(&b).trace();
            prop_assert!((direct - full).norm() <= 1e-12);
        }
    }
}
