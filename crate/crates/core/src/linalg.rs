//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{symmetry_tolerance, Scalar};

pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn max_asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    if !m.is_square() {
        return T::max_value().unwrap_or_else(T::one);
    }
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::one() / (T::one() + T::one());
    (m + m.transpose()) * half
}

/// Checks symmetry within tolerance and returns the symmetrized matrix.
pub fn checked_symmetric<T: Scalar>(m: DMatrix<T>, what: &'static str) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            what,
            expected: (m.nrows(), m.nrows()),
            found: m.shape(),
        });
    }
    ensure_finite(&m, what)?;
    let asym = max_asymmetry(&m);
    if asym > symmetry_tolerance(max_abs(&m)) {
        return Err(Error::NotSymmetric {
            what,
            asymmetry: crate::scalar::to_f64(asym),
        });
    }
    Ok(symmetrize(&m))
}

pub fn ensure_finite<T: Scalar>(m: &DMatrix<T>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

pub fn ensure_shape<T: Scalar>(
    m: &DMatrix<T>,
    expected: (usize, usize),
    what: &'static str,
) -> Result<()> {
    if m.shape() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found: m.shape(),
        })
    }
}

pub fn ensure_len<T: Scalar>(v: &DVector<T>, expected: usize, what: &'static str) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected: (expected, 1),
            found: (v.len(), 1),
        })
    }
}

/// Eigenvalues of a symmetric matrix (symmetrized first), ascending.
pub fn symmetric_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<T> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    symmetric_eigenvalues(m)
        .first()
        .copied()
        .unwrap_or_else(T::zero)
}

pub fn max_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    symmetric_eigenvalues(m)
        .last()
        .copied()
        .unwrap_or_else(T::zero)
}

/// Solves `A X = B` for square `A` by LU; `None` when `A` is numerically singular.
pub fn solve_square<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Option<DMatrix<T>> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// `xᵀ M x`.
pub fn quad_form<T: Scalar>(m: &DMatrix<T>, x: &DVector<T>) -> T {
    (m * x).dot(x)
}

/// Spectral radius of a general real square matrix.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    let eps = T::unit_roundoff();
    match nalgebra::Schur::try_new(m.clone(), eps, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .fold(T::zero(), |acc, z| {
                acc.max((z.re * z.re + z.im * z.im).sqrt())
            }),
        None => power_radius(m),
    }
}

// Fallback when the Schur iteration stalls: growth rate of ‖Mᵏ v‖.
fn power_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    let mut v = DVector::from_element(n, T::one());
    let mut log_growth = T::zero();
    let steps = 2000;
    for _ in 0..steps {
        v = m * v;
        let nv = v.norm();
        if nv == T::zero() {
            return T::zero();
        }
        log_growth += nv.ln();
        v /= nv;
    }
    (log_growth / crate::scalar::lit(steps as f64)).exp()
}
