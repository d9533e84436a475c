//! Dense real-matrix primitives: thin SVD, Gram matrices, row norms and
//! rank truncation.
//!
//! Matrices are `ndarray::Array2<f64>` throughout. Public operations reject
//! non-finite entries; everything downstream may assume finite data.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Thin singular value decomposition `M = U diag(s) Vᵀ` with
/// `k = min(rows, cols)` retained columns.
///
/// `u` is `m×k` and `v` is `n×k`, both with orthonormal columns;
/// `singular_values` is non-negative and sorted non-increasing. The sign
/// convention makes the decomposition unique for simple spectra: in each
/// left singular vector the first entry of largest magnitude is
/// non-negative.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub v: Array2<f64>,
}

impl ThinSvd {
    /// Multiplies the factors back together.
    pub fn reconstruct(&self) -> Array2<f64> {
        let k = self.singular_values.len();
        let mut us = self.u.clone();
        for j in 0..k {
            let s = self.singular_values[j];
            us.column_mut(j).mapv_inplace(|x| x * s);
        }
        us.dot(&self.v.t())
    }

    /// Number of singular values above `rel_tol · σ₁`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s1 = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values.iter().filter(|&&s| s > rel_tol * s1).count()
    }
}

/// Rejects NaN and infinite entries. `name` identifies the offending input
/// in the error message.
pub fn ensure_finite(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "matrix '{name}' contains non-finite entries"
        )))
    }
}

/// Frobenius norm.
pub fn frobenius_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean norm of each row.
pub fn row_norms(m: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(
        m.rows()
            .into_iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt()),
    )
}

pub(crate) fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD with a deterministic sign convention.
///
/// Fails with a decomposition error if the iterative algorithm does not
/// converge within its iteration budget.
pub fn thin_svd(m: &Array2<f64>) -> Result<ThinSvd> {
    ensure_finite("svd input", m)?;
    let (rows, cols) = (m.nrows(), m.ncols());
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(
            "svd input must have at least one row and one column".into(),
        ));
    }
    let k = rows.min(cols);
    let budget = 100 * k + 1000;
    let svd = nalgebra::linalg::SVD::try_new(to_na(m), true, true, f64::EPSILON, budget)
        .ok_or(Error::DecompositionFailure { rows, cols })?;
    let na_u = svd.u.expect("u requested");
    let na_vt = svd.v_t.expect("v_t requested");

    // Sort non-increasing; nalgebra promises this for try_new but the
    // invariant is cheap to enforce.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut u = Array2::zeros((rows, k));
    let mut v = Array2::zeros((cols, k));
    let mut s = Array1::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = svd.singular_values[src];
        for i in 0..rows {
            u[[i, dst]] = na_u[(i, src)];
        }
        for i in 0..cols {
            v[[i, dst]] = na_vt[(src, i)];
        }
    }

    // Sign convention: first entry of largest magnitude in each left
    // singular vector is non-negative.
    for j in 0..k {
        let mut pivot = 0usize;
        let mut best = 0.0f64;
        for i in 0..rows {
            let a = u[[i, j]].abs();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        if u[[pivot, j]] < 0.0 {
            u.column_mut(j).mapv_inplace(|x| -x);
            v.column_mut(j).mapv_inplace(|x| -x);
        }
    }

    let out = ThinSvd { u, singular_values: s, v };
    let m_norm = frobenius_norm(m);
    let recon_err = frobenius_norm(&(m - &out.reconstruct()));
    if recon_err > 1e-8 * m_norm.max(f64::MIN_POSITIVE)
        || orthonormality_defect(&out.u) > 1e-10 * k as f64
        || orthonormality_defect(&out.v) > 1e-10 * k as f64
    {
        return Err(Error::DecompositionFailure { rows, cols });
    }
    Ok(out)
}

/// `‖QᵀQ − I‖_F` for a matrix with nominally orthonormal columns.
pub fn orthonormality_defect(q: &Array2<f64>) -> f64 {
    let k = q.ncols();
    let mut g = q.t().dot(q);
    for i in 0..k {
        g[[i, i]] -= 1.0;
    }
    frobenius_norm(&g)
}

/// Gram matrix `Σ = XᵀX / n` of the design scaled by `1/√n`.
///
/// `n` must equal the row count of `x`; the result is symmetric and
/// positive semidefinite up to round-off.
pub fn gram(x: &Array2<f64>, n: usize) -> Result<Array2<f64>> {
    ensure_finite("gram input", x)?;
    if n == 0 || x.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "gram: sample count {n} does not match the {} rows of x",
            x.nrows()
        )));
    }
    let g = x.t().dot(x) / n as f64;
    // Exact symmetry regardless of the matmul kernel's blocking.
    let gt = g.t().to_owned();
    Ok((&g + &gt) * 0.5)
}

/// Frobenius-nearest matrix of rank at most `r` (Eckart–Young).
pub fn rank_truncate(m: &Array2<f64>, r: usize) -> Result<Array2<f64>> {
    let k = m.nrows().min(m.ncols());
    if r < 1 || r > k {
        return Err(Error::InvalidArgument(format!(
            "rank_truncate: rank {r} outside 1..={k} for a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut svd = thin_svd(m)?;
    for j in r..k {
        svd.singular_values[j] = 0.0;
    }
    Ok(svd.reconstruct())
}

/// Extends `basis` (orthonormal columns, `q×k`) to `q×r` by appending
/// orthonormalized coordinate directions. Deterministic.
pub(crate) fn orthonormal_completion(basis: &Array2<f64>, r: usize) -> Result<Array2<f64>> {
    let q = basis.nrows();
    let k = basis.ncols();
    if r < k || r > q {
        return Err(Error::InvalidArgument(format!(
            "orthonormal completion: cannot extend {q}x{k} basis to {q}x{r}"
        )));
    }
    let mut out = Array2::zeros((q, r));
    out.slice_mut(ndarray::s![.., ..k]).assign(basis);
    let mut have = k;
    for cand in 0..q {
        if have == r {
            break;
        }
        let mut v = Array1::zeros(q);
        v[cand] = 1.0;
        // Two Gram-Schmidt passes keep the defect near machine precision.
        for _ in 0..2 {
            for j in 0..have {
                let col = out.column(j);
                let proj: f64 = col.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for i in 0..q {
                    v[i] -= proj * out[[i, j]];
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for i in 0..q {
                out[[i, have]] = v[i] / norm;
            }
            have += 1;
        }
    }
    if have < r {
        return Err(Error::InvalidArgument(
            "orthonormal completion: basis could not be extended".into(),
        ));
    }
    Ok(out)
}
