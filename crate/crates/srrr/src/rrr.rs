//! Closed-form reduced rank regression, used as the unpenalized baseline
//! and as the solver initializer.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::matrix::{ensure_finite, from_na, thin_svd, to_na};

/// Result of an unpenalized rank-constrained least squares fit.
#[derive(Debug, Clone)]
pub struct RrrFit {
    /// The `p×q` coefficient matrix, rank at most `rank`.
    pub coefficient: Array2<f64>,
    pub rank: usize,
    pub ridge_used: f64,
}

/// Fits `min ‖Y − XC‖²` over matrices of rank at most `r`.
///
/// Solves the (optionally ridge-stabilized) normal equations
/// `(XᵀX + ridge·n·I) C = XᵀY` and projects the fitted responses onto the
/// top-`r` right singular subspace of `X·C`. With `ridge = 0` and `p < n`
/// this is the exact closed-form reduced rank solution.
pub fn fit_rrr(x: &Array2<f64>, y: &Array2<f64>, r: usize, ridge: f64) -> Result<RrrFit> {
    ensure_finite("x", x)?;
    ensure_finite("y", y)?;
    let (n, p) = x.dim();
    let q = y.ncols();
    if y.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "x has {n} rows but y has {}",
            y.nrows()
        )));
    }
    if r < 1 || r > p.min(q) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={} for p={p}, q={q}",
            p.min(q)
        )));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument("ridge must be finite and >= 0".into()));
    }
    if p >= n && ridge == 0.0 {
        return Err(Error::IllConditionedDesign(format!(
            "p={p} >= n={n}; the normal equations are singular, supply ridge > 0"
        )));
    }

    let mut xtx = x.t().dot(x);
    if ridge > 0.0 {
        let shift = ridge * n as f64;
        for i in 0..p {
            xtx[[i, i]] += shift;
        }
    }
    let xty = x.t().dot(y);
    let chol = nalgebra::linalg::Cholesky::new(to_na(&xtx)).ok_or_else(|| {
        Error::IllConditionedDesign(
            "singular normal equations; supply ridge > 0".into(),
        )
    })?;
    let c_ridge = from_na(&chol.solve(&to_na(&xty)));

    let fitted = x.dot(&c_ridge);
    let svd = thin_svd(&fitted)?;
    let v_r = svd.v.slice(s![.., ..r]).to_owned();
    let coefficient = c_ridge.dot(&v_r).dot(&v_r.t());
    Ok(RrrFit { coefficient, rank: r, ridge_used: ridge })
}
