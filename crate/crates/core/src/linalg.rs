//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest magnitude entry are
/// treated as a failed positive-definiteness test.
pub const SPD_TOLERANCE: f64 = 1e-10;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = inf_norm(m);
    let asym = inf_norm(&(m - m.transpose()));
    asym <= SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE)
}

/// Checks symmetry and strict positive definiteness.
pub fn check_spd(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    if !is_symmetric(m) {
        return Err(Error::NotSpd(what));
    }
    let scale = inf_norm(m);
    if scale == 0.0 {
        return Err(Error::NotSpd(what));
    }
    let eig = m.clone().symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= SPD_TOLERANCE * scale {
        return Err(Error::NotSpd(what));
    }
    Ok(())
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factor. The result is re-symmetrised.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_spd(m, what)?;
    let chol = m.clone().cholesky().ok_or(Error::NotSpd(what))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `m x = b` for SPD `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::NotSpd(what))?;
    Ok(chol.solve(b))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `xᵀ P x`
pub fn quad_form(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(p * x))
}

/// Clamps the eigenvalues of a symmetric matrix from below.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&clamped) * q.transpose()))
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky_factor(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_spd(m, what)?;
    Ok(m.clone().cholesky().ok_or(Error::NotSpd(what))?.l())
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_spd(&indefinite, "m").is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.4, 2.0]);
        assert!(check_spd(&asym, "m").is_err());
        assert!(check_spd(&DMatrix::zeros(1, 1), "m").is_err());
    }

    #[test]
    fn inverse_of_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m, "m").unwrap();
        let eye = &m * &inv;
        assert!((eye - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn eigen_floor() {
        let m = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert_eq!(floor_eigenvalues(&m, 1e-8)[(0, 0)], 1e-8);
    }
}
