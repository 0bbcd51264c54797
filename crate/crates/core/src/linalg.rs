//! Dense complex helpers shared by every module: norms, diagonal embeddings,
//! the instrumented inversion kernel and unitary basis completion.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};

pub use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Condition-number ceiling for the resolvent inversions inside the
/// iteration. Above this the inverse carries no significant digits worth
/// propagating.
pub const RESOLVENT_CONDITION_CAP: f64 = 1e12;

pub const ZERO: C64 = Complex { re: 0.0, im: 0.0 };
pub const ONE: C64 = Complex { re: 1.0, im: 0.0 };

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Entrywise 2-norm (Frobenius norm).
#[inline]
pub fn norm2(m: &CMatrix) -> f64 {
    m.norm()
}

/// `‖x − y‖₂ / ‖y‖₂`, falling back to the absolute difference when `y = 0`.
pub fn relative_error(x: &CMatrix, y: &CMatrix) -> f64 {
    let diff = (x - y).norm();
    let scale = y.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Vector version of [`relative_error`].
pub fn relative_error_vec(x: &CVector, y: &CVector) -> f64 {
    let diff = (x - y).norm();
    let scale = y.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Largest entrywise modulus of `x − y`.
pub fn max_abs_difference(x: &CMatrix, y: &CMatrix) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
}

pub fn diag_matrix(v: &CVector) -> CMatrix {
    CMatrix::from_diagonal(v)
}

/// `diag(d) · m` without forming the diagonal matrix.
pub fn scale_rows(d: &CVector, m: &CMatrix) -> CMatrix {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

/// `m · diag(d)` without forming the diagonal matrix.
pub fn scale_cols(m: &CMatrix, d: &CVector) -> CMatrix {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// Matrix with only the diagonal of `m` retained.
pub fn diagonal_part(m: &CMatrix) -> CMatrix {
    CMatrix::from_diagonal(&m.diagonal())
}

/// Maximum column sum (induced 1-norm).
pub fn norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Counts invocations of the O(n³) inversion kernel.
///
/// Shared by reference; safe to use from several threads.
#[derive(Debug, Default)]
pub struct InversionCounter {
    calls: AtomicUsize,
}

impl InversionCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    fn record(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }
}

/// Outcome of a failed inversion: the (possibly infinite) 1-norm condition
/// number that tripped the cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    pub condition: f64,
}

/// Inverse of `m` through partial-pivot LU, with the 1-norm condition number.
///
/// Fails when the factorization breaks down or `cond₁(m)` exceeds `cap`.
/// Every call is recorded on `counter`.
pub fn invert(m: &CMatrix, cap: f64, counter: &InversionCounter) -> core::result::Result<(CMatrix, f64), Singular> {
    counter.record();
    let inverse = m.clone().lu().try_inverse().ok_or(Singular {
        condition: f64::INFINITY,
    })?;
    let condition = norm1(m) * norm1(&inverse);
    if !condition.is_finite() || condition > cap {
        return Err(Singular { condition });
    }
    Ok((inverse, condition))
}

/// Extends the orthonormal columns of `thin` (n × r) to an n × n unitary
/// matrix whose first r columns are exactly `thin`.
///
/// The complement is built from standard basis vectors, each time picking
/// the one with the largest remaining component outside the current span,
/// orthogonalized twice.
pub fn complete_unitary(thin: &CMatrix) -> CMatrix {
    let n = thin.nrows();
    let r = thin.ncols();
    let mut basis = CMatrix::zeros(n, n);
    basis.columns_mut(0, r).copy_from(thin);

    // ‖(I − QQ*) e_i‖² for each candidate i, kept in sync as Q grows.
    let mut residual: Vec<f64> = (0..n)
        .map(|i| 1.0 - thin.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .collect();

    for col in r..n {
        let pick = residual
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                },
            )
            .0;
        let mut v = CVector::zeros(n);
        v[pick] = ONE;
        for _ in 0..2 {
            let q = basis.columns(0, col);
            let coeffs = q.ad_mul(&v);
            v -= q * coeffs;
        }
        let len = v.norm();
        v /= c64(len, 0.0);
        for (i, res) in residual.iter_mut().enumerate() {
            *res -= v[i].norm_sqr();
        }
        residual[pick] = f64::NEG_INFINITY;
        basis.set_column(col, &v);
    }
    basis
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    values
}

/// Largest entrywise deviation of `m*m` from the identity.
pub fn unitarity_residual(m: &CMatrix) -> f64 {
    let gram = m.ad_mul(m);
    let n = gram.nrows();
    max_abs_difference(&gram, &CMatrix::identity(n, n))
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    ComplexField::sqrt(x)
}
