//! Dense symmetric positive-definite helpers.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-9;

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().fold(0.0_f64, |a, &v| a.max(v.abs())).max(f64::MIN_POSITIVE)
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = scale_of(m);
    for i in 0..m.nrows() {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Matrix(format!("non-finite entry at ({i}, {j})")));
            }
            if (a - b).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Matrix(format!(
                    "matrix not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// Lower Cholesky factor `L` with `L Lᵀ = m`.
///
/// Only the lower triangle of `m` is read once symmetry has been checked. A
/// pivot that is non-positive, or below `1e-14` times the largest diagonal
/// entry, is reported by index.
pub fn chol_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let n = m.nrows();
    let floor = 1e-14 * scale_of(m);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(Error::not_pd(j, d));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solve `(L Lᵀ) x = b` given the lower factor.
pub fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l.solve_lower_triangular(b).expect("non-singular triangular factor");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("non-singular triangular factor")
}

/// Solve `(L Lᵀ) X = B` column by column.
pub fn chol_solve_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l.solve_lower_triangular(b).expect("non-singular triangular factor");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("non-singular triangular factor")
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of the diagonal, rejecting non-positive entries.
pub fn diag_sqrt(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = m.diagonal();
    for (i, &v) in d.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Matrix(format!(
                "diagonal entry {i} must be strictly positive, got {v}"
            )));
        }
    }
    Ok(d.map(f64::sqrt))
}

/// `diag(s)⁻¹ m diag(s)⁻¹`.
pub fn scale_inv_both(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (s[i] * s[j]))
}

/// Relative Frobenius error `|L Lᵀ - m| / |m|`.
pub fn reconstruction_error(l: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    (l * l.transpose() - m).norm() / m.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_diagonal() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(chol_spd(&i3).unwrap(), i3);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let l = chol_spd(&d).unwrap();
        assert_eq!(l, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
    }

    #[test]
    fn hand_factorised_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let l = chol_spd(&m).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        assert!((l - expect).abs().max() < 1e-15);
    }

    #[test]
    fn failing_pivot_is_named() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        match chol_spd(&m) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("unexpected {other:?}"),
        }
        let neg = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(matches!(
            chol_spd(&neg),
            Err(Error::NotPositiveDefinite { pivot: 0, .. })
        ));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(chol_spd(&m), Err(Error::Matrix(_))));
    }

    proptest! {
        #[test]
        fn random_spd_reconstructs(entries in prop::collection::vec(-2.0f64..2.0, 16)) {
            let a = DMatrix::from_vec(4, 4, entries);
            let m = &a * a.transpose() + DMatrix::<f64>::identity(4, 4) * 0.1;
            let l = chol_spd(&m).unwrap();
            prop_assert!(reconstruction_error(&l, &m) < 1e-12);
            let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
            let x = chol_solve(&l, &b);
            prop_assert!((&m * x - b).norm() < 1e-9);
        }
    }
}
