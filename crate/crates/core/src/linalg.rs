//! Dense and tridiagonal linear-algebra helpers shared by the models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Cholesky factorization that reports failure as a crate error.
pub fn spd_cholesky<T: Scalar>(m: DMatrix<T>) -> Result<Cholesky<T, Dyn>> {
    let dims = format!("{}x{}", m.nrows(), m.ncols());
    Cholesky::new(m).ok_or(Error::NotPositiveDefinite(dims))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse<T: Scalar>(m: DMatrix<T>) -> Result<DMatrix<T>> {
    Ok(spd_cholesky(m)?.inverse())
}

/// (M + Mᵀ)/2, cleaning up asymmetry introduced by round-trips.
pub fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    let half = real::<T>(0.5);
    let mt = m.transpose();
    (m + mt) * half
}

/// `ln det` from a Cholesky factor.
pub fn chol_log_det<T: Scalar>(chol: &Cholesky<T, Dyn>) -> T {
    chol.l_dirty()
        .diagonal()
        .iter()
        .fold(T::zero(), |acc, x| acc + x.ln())
        * real(2.0)
}

/// Max absolute row sum (the matrix infinity norm).
pub fn matrix_inf_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        let mut row = T::zero();
        for j in 0..m.ncols() {
            row += m[(i, j)].abs();
        }
        worst = worst.max(row);
    }
    worst
}

/// Log density of N(mean, L Lᵀ) at `x`, with `cov_chol` the lower factor L.
pub fn mvn_logpdf_cov_chol<T: Scalar>(
    x: &DVector<T>,
    mean: &DVector<T>,
    cov_chol: &DMatrix<T>,
) -> T {
    let k = x.len();
    let diff = x - mean;
    let z = cov_chol
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has positive diagonal");
    let half_log_det: T = cov_chol
        .diagonal()
        .iter()
        .fold(T::zero(), |acc, l| acc + l.ln());
    let two = real::<T>(2.0);
    -z.dot(&z) / two - half_log_det - real::<T>(k as f64) / two * T::two_pi().ln()
}

/// Draw from N(mean, L Lᵀ) given the lower factor L.
pub fn sample_mvn_cov_chol<T: Scalar, R: Rng + ?Sized>(
    mean: &DVector<T>,
    cov_chol: &DMatrix<T>,
    rng: &mut R,
) -> DVector<T> {
    let z = DVector::from_fn(mean.len(), |_, _| T::std_normal(rng));
    mean + cov_chol * z
}

/// Bidiagonal Cholesky factor of the symmetric tridiagonal Toeplitz matrix
/// with constant diagonal `diag` and off-diagonal `off`. Returns the factor's
/// diagonal `l` and sub-diagonal `s` (`T = L Lᵀ`).
pub fn tridiag_toeplitz_cholesky<T: Scalar>(
    diag: T,
    off: T,
    n: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut l = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n.saturating_sub(1));
    let mut pivot = diag;
    for i in 0..n {
        if pivot <= T::zero() {
            return Err(Error::NotPositiveDefinite(format!(
                "tridiagonal pivot {i} not positive"
            )));
        }
        let li = pivot.sqrt();
        l.push(li);
        if i + 1 < n {
            let si = off / li;
            s.push(si);
            pivot = diag - si * si;
        }
    }
    Ok((l, s))
}

/// `ln det` of the tridiagonal matrix from its bidiagonal Cholesky factor.
pub fn tridiag_chol_log_det<T: Scalar>(l: &[T]) -> T {
    l.iter().fold(T::zero(), |acc, x| acc + x.ln()) * real(2.0)
}

/// Quadratic form `‖Lᵀ v‖²` for a bidiagonal factor; this is `vᵀ T v`.
pub fn tridiag_chol_quad_form<T: Scalar>(l: &[T], s: &[T], v: &DVector<T>) -> T {
    let n = v.len();
    let mut acc = T::zero();
    for i in 0..n {
        let mut y = l[i] * v[i];
        if i + 1 < n {
            y += s[i] * v[i + 1];
        }
        acc += y * y;
    }
    acc
}

/// Draw x ~ N(0, T⁻¹) where `T = L Lᵀ` is tridiagonal: solve `Lᵀ x = z`.
pub fn sample_tridiag_precision<T: Scalar, R: Rng + ?Sized>(
    l: &[T],
    s: &[T],
    rng: &mut R,
) -> DVector<T> {
    let n = l.len();
    let mut x = DVector::from_fn(n, |_, _| T::std_normal(rng));
    for i in (0..n).rev() {
        let carry = if i + 1 < n { s[i] * x[i + 1] } else { T::zero() };
        x[i] = (x[i] - carry) / l[i];
    }
    x
}

/// Solve `T x = b` for tridiagonal `T = L Lᵀ` (forward then back substitution).
pub fn tridiag_chol_solve<T: Scalar>(l: &[T], s: &[T], b: &DVector<T>) -> DVector<T> {
    let n = b.len();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let carry = if i > 0 { s[i - 1] * y[i - 1] } else { T::zero() };
        y[i] = (b[i] - carry) / l[i];
    }
    for i in (0..n).rev() {
        let carry = if i + 1 < n { s[i] * y[i + 1] } else { T::zero() };
        y[i] = (y[i] - carry) / l[i];
    }
    y
}

/// Spectral radius of the Jacobi iteration matrix `D⁻¹(D − Λ)` of a symmetric
/// positive-definite `Λ`, computed through the similar symmetric matrix
/// `D^{-1/2} Λ D^{-1/2}`.
pub fn jacobi_spectral_radius<T: Scalar>(precision: &DMatrix<T>) -> Result<T> {
    let n = precision.nrows();
    let mut d_inv_sqrt = DVector::zeros(n);
    for i in 0..n {
        let d = precision[(i, i)];
        if d <= T::zero() {
            return Err(Error::NotPositiveDefinite("diagonal entry".into()));
        }
        d_inv_sqrt[i] = T::one() / d.sqrt();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| {
        precision[(i, j)] * d_inv_sqrt[i] * d_inv_sqrt[j]
    });
    let eig = scaled.symmetric_eigen();
    Ok(eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, &lam| acc.max((T::one() - lam).abs())))
}

/// Extract the square sub-matrix `m[idx, idx]`.
pub fn sub_square<T: Scalar>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Conditional distribution of `x[block]` given the remaining entries, for a
/// Gaussian with the given mean and precision. Returns the conditional mean
/// and the lower Cholesky factor of the conditional covariance.
pub fn conditional_from_precision<T: Scalar>(
    precision: &DMatrix<T>,
    mean: &DVector<T>,
    x: &DVector<T>,
    block: &[usize],
) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = precision.nrows();
    let in_block = {
        let mut mask = vec![false; n];
        for &i in block {
            mask[i] = true;
        }
        mask
    };
    let prec_bb = sub_square(precision, block);
    // rhs_k = -Σ_{j ∉ block} Λ[b_k, j] (x_j - μ_j)
    let mut rhs = DVector::zeros(block.len());
    for (k, &bi) in block.iter().enumerate() {
        let mut acc = T::zero();
        for j in 0..n {
            if !in_block[j] {
                acc += precision[(bi, j)] * (x[j] - mean[j]);
            }
        }
        rhs[k] = -acc;
    }
    let chol = spd_cholesky(prec_bb).map_err(|_| {
        Error::ConditionalUndefined("conditional precision sub-block not SPD".into())
    })?;
    let mean_b = DVector::from_fn(block.len(), |k, _| mean[block[k]]) + chol.solve(&rhs);
    let cov = symmetrize(chol.inverse());
    let cov_chol = spd_cholesky(cov)?.unpack();
    Ok((mean_b, cov_chol))
}
