//! Dense linear-algebra helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VcmError};

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD `(U, σ, Vᵀ)`.
pub fn svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(VcmError::Numerical("SVD input has non-finite entries".into()));
    }
    let decomposition = m
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| {
            VcmError::Numerical(format!(
                "SVD did not converge for a {}x{} matrix (frobenius norm {:.3e}, max |entry| {:.3e})",
                m.nrows(),
                m.ncols(),
                m.norm(),
                m.amax()
            ))
        })?;
    let u = decomposition.u.expect("requested U");
    let v_t = decomposition.v_t.expect("requested V^T");
    Ok((u, decomposition.singular_values, v_t))
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(VcmError::Numerical("SVD input has non-finite entries".into()));
    }
    m.clone()
        .try_svd(false, false, SVD_EPS, SVD_MAX_ITER)
        .map(|s| s.singular_values)
        .ok_or_else(|| VcmError::Numerical("singular values did not converge".into()))
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.sum())
}

/// Count of singular values above `rel_tol·σ₁`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let top = s.max();
    if top <= 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > rel_tol * top).count())
}

/// Spectral norm by power iteration on MᵀM, falling back to a full SVD when
/// the iteration stalls.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 500;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let gram = m.transpose() * m;
    let mut v = DVector::from_fn(m.ncols(), |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..MAX_ITER {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= TOL * next.abs() {
            return Ok(next.max(0.0).sqrt());
        }
        estimate = next;
    }
    Ok(singular_values(m)?.max())
}
