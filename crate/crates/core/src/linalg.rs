//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry, relative to the largest entry.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose()))
}

/// Unique symmetric positive definite square root.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_spd(m)?;
    Ok(sym_apply(m, f64::sqrt))
}

/// Symmetric inverse square root `m^{-1/2}`.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_spd(m)?;
    Ok(sym_apply(m, |x| 1.0 / x.sqrt()))
}

fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    let lo = min_eigenvalue(m);
    if lo.is_finite() && lo > 0.0 {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(format!("minimum eigenvalue {lo:.3e}")))
    }
}

/// Nearest symmetric matrix with every eigenvalue at least `floor`.
pub fn project_pd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    sym_apply(m, |x| x.max(floor))
}

/// 2-norm condition number of a symmetric positive semidefinite matrix.
pub fn condition_number_sym(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let hi = eig.max();
    let lo = eig.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `coef * gram = cross` for `coef`, i.e. `cross * gram^{-1}`, refusing
/// Gram matrices whose condition number exceeds `cap`.
pub fn right_solve_gram(cross: &DMatrix<f64>, gram: &DMatrix<f64>, cap: f64) -> Result<DMatrix<f64>> {
    let condition = condition_number_sym(gram);
    if !(condition <= cap) {
        return Err(Error::RankDeficient { condition, cap });
    }
    let gram = symmetrize(gram);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { condition, cap })?;
    // gram is symmetric, so (gram^{-1} cross^T)^T = cross gram^{-1}
    Ok(chol.solve(&cross.transpose()).transpose())
}
