//! Alternating minimization for rank-constrained, row-penalized least
//! squares.
//!
//! The objective is `Q(C) = ‖Y − XC‖² + n·Σ_j λ_j‖C_j‖` over matrices of
//! rank at most `r`, handled through the factorization `C = B·Aᵀ` with `A`
//! orthonormal. Because `‖(BAᵀ)_j‖ = ‖B_j‖`, the penalty only sees `B`:
//! the B-step is a convex group-Lasso subproblem solved by exact block
//! coordinate descent, and the A-step is an orthogonal Procrustes problem
//! solved by a thin SVD.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{
    ensure_finite, frobenius_norm, orthonormal_completion, orthonormality_defect, row_norms,
    thin_svd,
};
use crate::rrr::fit_rrr;
use crate::seeding::mix;

/// Per-predictor penalty parameters `λ_j ∈ [0, +∞]`.
///
/// `+∞` is an admitted sentinel meaning "row forced to zero"; at least one
/// entry must be finite.
#[derive(Debug, Clone)]
pub struct PenaltyWeights {
    lambdas: Vec<f64>,
}

impl PenaltyWeights {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidArgument("penalty weights are empty".into()));
        }
        if lambdas.iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(Error::InvalidArgument(
                "penalty weights must be in [0, +inf]".into(),
            ));
        }
        if !lambdas.iter().any(|l| l.is_finite()) {
            return Err(Error::InvalidArgument(
                "all penalty weights are infinite; the fit would be identically zero".into(),
            ));
        }
        Ok(Self { lambdas })
    }

    /// `p` copies of a single value.
    pub fn uniform(p: usize, lambda: f64) -> Result<Self> {
        Self::new(vec![lambda; p])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// A rank-`r` coefficient matrix stored as `C = B·Aᵀ` with orthonormal `A`.
#[derive(Debug, Clone)]
pub struct FactoredCoefficient {
    b: Array2<f64>,
    a: Array2<f64>,
}

impl FactoredCoefficient {
    /// Validates dimensions and the orthonormality of `a`
    /// (`‖AᵀA − I‖_F ≤ 1e−8`).
    pub fn new(b: Array2<f64>, a: Array2<f64>) -> Result<Self> {
        ensure_finite("b", &b)?;
        ensure_finite("a", &a)?;
        if b.ncols() != a.ncols() || a.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "factor ranks disagree: b is {}x{}, a is {}x{}",
                b.nrows(),
                b.ncols(),
                a.nrows(),
                a.ncols()
            )));
        }
        if orthonormality_defect(&a) > 1e-8 {
            return Err(Error::InvalidArgument(
                "a does not have orthonormal columns".into(),
            ));
        }
        Ok(Self { b, a })
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    /// The full `p×q` coefficient matrix `B·Aᵀ`.
    pub fn to_matrix(&self) -> Array2<f64> {
        self.b.dot(&self.a.t())
    }

    /// Row norms of `B`, equal to the row norms of `B·Aᵀ`.
    pub fn row_norms(&self) -> Array1<f64> {
        row_norms(&self.b)
    }
}

/// Knobs for [`fit_srrr`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative objective decrease below which the outer loop stops.
    pub tol: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Coordinate-descent sweep cap per B-step.
    pub max_inner: usize,
    /// Max row change below which a B-step stops sweeping.
    pub inner_tol: f64,
    /// Number of restarts; the first uses the reduced rank pilot
    /// initialization, the rest perturb its `A` factor.
    pub n_starts: usize,
    /// Seed for the restart perturbations.
    pub seed: u64,
    /// Ridge used by the pilot initializer.
    pub init_ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 500,
            max_inner: 100,
            inner_tol: 1e-9,
            n_starts: 5,
            seed: 0,
            init_ridge: 1e-4,
        }
    }
}

/// Blockwise optimality certificate for the A-fixed convex subproblem.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// Max over zero rows of `max(0, ‖X_jᵀ(YA − XB)‖ − n·λ_j/2)`.
    pub max_zero_violation: f64,
    /// Max over active rows of `‖X_jᵀ(YA − XB) − (n·λ_j/2)·B_j/‖B_j‖‖`.
    pub max_active_residual: f64,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.max_zero_violation.max(self.max_active_residual)
    }
}

/// Output of [`fit_srrr`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficient: FactoredCoefficient,
    /// Predictors with nonzero coefficient rows.
    pub active_set: BTreeSet<usize>,
    /// Objective value per outer iteration of the winning restart,
    /// non-increasing.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when an A-step hit a rank-deficient Procrustes target.
    pub degenerate_a_step: bool,
    pub kkt: KktReport,
    /// Final objective value, `objective_trace.last()`.
    pub objective: f64,
}

/// Proximal map of `t·‖·‖`: scales `v` down by `t` in norm, to zero when
/// `‖v‖ ≤ t`.
pub fn group_soft_threshold(v: ArrayView1<'_, f64>, t: f64) -> Array1<f64> {
    assert!(!t.is_nan() && t >= 0.0, "threshold must be non-negative");
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= t || norm == 0.0 {
        Array1::zeros(v.len())
    } else {
        let scale = 1.0 - t / norm;
        v.mapv(|x| scale * x)
    }
}

/// Evaluates `Q(C) = ‖Y − XBAᵀ‖² + n·Σ_j λ_j‖B_j‖` treating `∞·0 = 0`.
pub fn objective(
    x: &Array2<f64>,
    y: &Array2<f64>,
    c: &FactoredCoefficient,
    w: &PenaltyWeights,
) -> Result<f64> {
    ensure_finite("x", x)?;
    ensure_finite("y", y)?;
    let (n, p) = x.dim();
    if y.nrows() != n || c.b.nrows() != p || c.a.nrows() != y.ncols() || w.len() != p {
        return Err(Error::InvalidArgument(
            "objective: dimensions of x, y, coefficient and weights disagree".into(),
        ));
    }
    let norms = c.row_norms();
    let mut penalty = 0.0;
    for j in 0..p {
        let lj = w.lambdas[j];
        if lj.is_infinite() {
            if norms[j] != 0.0 {
                return Err(Error::InfeasiblePoint(format!(
                    "row {j} has infinite weight but nonzero norm {}",
                    norms[j]
                )));
            }
        } else {
            penalty += lj * norms[j];
        }
    }
    let resid = y - &x.dot(&c.to_matrix());
    Ok(frobenius_norm(&resid).powi(2) + n as f64 * penalty)
}

/// Column squared norms of the design.
fn column_squared_norms(x: &Array2<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| x.column(j).iter().map(|v| v * v).sum())
        .collect()
}

/// Transposed copy in standard layout, so each design column becomes a
/// contiguous row.
fn transposed_copy(x: &Array2<f64>) -> Array2<f64> {
    x.t().as_standard_layout().to_owned()
}

/// Cyclic block coordinate descent on
/// `‖YA − XB‖² + n·Σ_j λ_j‖B_j‖` over the rows of `B`.
///
/// `xt` is the transposed design (`p×n`, rows contiguous), `resid` enters
/// as `YA − XB` for the incoming `B` and leaves consistent with the
/// returned one. Stops when the largest row change in a sweep is at most
/// `tol` or after `max_iter` sweeps.
fn b_step_kernel(
    xt: &Array2<f64>,
    col_sq: &[f64],
    lambdas: &[f64],
    b: &mut Array2<f64>,
    resid: &mut Array2<f64>,
    tol: f64,
    max_iter: usize,
) {
    let (p, n) = xt.dim();
    let r = b.ncols();
    let nf = n as f64;
    let mut g = vec![0.0; r];
    for _ in 0..max_iter {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let lj = lambdas[j];
            if lj.is_infinite() {
                continue;
            }
            let c = col_sq[j];
            let xj = xt.row(j);
            let xj = xj.as_slice().expect("xt row contiguous");
            let rs = resid.as_slice_mut().expect("resid contiguous");
            for k in 0..r {
                g[k] = c * b[[j, k]];
            }
            for (i, &xij) in xj.iter().enumerate() {
                if xij != 0.0 {
                    let base = i * r;
                    for k in 0..r {
                        g[k] += xij * rs[base + k];
                    }
                }
            }
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let threshold = nf * lj / 2.0;
            let scale = if gnorm <= threshold {
                0.0
            } else {
                (1.0 - threshold / gnorm) / c
            };
            let mut change_sq = 0.0;
            for k in 0..r {
                let new = scale * g[k];
                let delta = new - b[[j, k]];
                if delta != 0.0 {
                    for (i, &xij) in xj.iter().enumerate() {
                        rs[i * r + k] -= xij * delta;
                    }
                }
                change_sq += delta * delta;
                b[[j, k]] = new;
            }
            max_change = max_change.max(change_sq.sqrt());
        }
        if max_change <= tol {
            break;
        }
    }
}

/// Solves the A-fixed group-Lasso subproblem
/// `min_B ‖YA − XB‖² + n·Σ_j λ_j‖B_j‖` by exact block coordinate descent.
///
/// Rows of `b_init` whose weight is `+∞` must be zero; they stay pinned.
pub fn solve_b_step(
    x: &Array2<f64>,
    ya: &Array2<f64>,
    w: &PenaltyWeights,
    b_init: &Array2<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Array2<f64>> {
    ensure_finite("x", x)?;
    ensure_finite("ya", ya)?;
    ensure_finite("b_init", b_init)?;
    let (n, p) = x.dim();
    let r = ya.ncols();
    if ya.nrows() != n || b_init.dim() != (p, r) || w.len() != p {
        return Err(Error::InvalidArgument(
            "solve_b_step: dimensions of x, ya, b_init and weights disagree".into(),
        ));
    }
    if !(tol >= 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "solve_b_step: tol must be >= 0 and max_iter >= 1".into(),
        ));
    }
    let col_sq = column_squared_norms(x);
    for j in 0..p {
        let lj = w.lambdas[j];
        if col_sq[j] == 0.0 && lj.is_finite() {
            return Err(Error::DegenerateColumn(format!(
                "predictor {j} is identically zero with finite weight"
            )));
        }
        if lj.is_infinite() && b_init.row(j).iter().any(|v| *v != 0.0) {
            return Err(Error::InfeasiblePoint(format!(
                "b_init row {j} is nonzero but its weight is infinite"
            )));
        }
    }
    let xt = transposed_copy(x);
    let mut b = b_init.clone();
    let mut resid = ya - &x.dot(&b);
    b_step_kernel(&xt, &col_sq, w.lambdas(), &mut b, &mut resid, tol, max_iter);
    Ok(b)
}

/// Output of [`solve_a_step`].
#[derive(Debug, Clone)]
pub struct AStep {
    pub a: Array2<f64>,
    /// Set when the Procrustes target `YᵀXB` had rank below `r` (the null
    /// directions carry an arbitrary orthonormal completion) or when
    /// `B = 0` (the previous `A` is kept).
    pub degenerate: bool,
}

fn polar_factor(m: &Array2<f64>) -> Result<AStep> {
    let r = m.ncols();
    let svd = thin_svd(m)?;
    let a = svd.u.dot(&svd.v.t());
    let s_max = svd.singular_values[0];
    let s_min = svd.singular_values[r - 1];
    let degenerate = s_max <= 0.0 || s_min <= 1e-12 * s_max;
    Ok(AStep { a, degenerate })
}

/// Maximizes `tr(Aᵀ·YᵀXB)` over matrices with orthonormal columns: the
/// orthogonal Procrustes solution `A = U·Vᵀ` from the thin SVD of `YᵀXB`.
///
/// `current_a` is returned unchanged (flagged degenerate) when `B = 0`.
pub fn solve_a_step(
    x: &Array2<f64>,
    y: &Array2<f64>,
    b: &Array2<f64>,
    current_a: &Array2<f64>,
) -> Result<AStep> {
    ensure_finite("x", x)?;
    ensure_finite("y", y)?;
    ensure_finite("b", b)?;
    let (n, p) = x.dim();
    let q = y.ncols();
    let r = b.ncols();
    if y.nrows() != n || b.nrows() != p || current_a.dim() != (q, r) {
        return Err(Error::InvalidArgument(
            "solve_a_step: dimensions of x, y, b and current_a disagree".into(),
        ));
    }
    if r > q {
        return Err(Error::InvalidArgument(format!(
            "solve_a_step: rank {r} exceeds the response dimension {q}"
        )));
    }
    if b.iter().all(|v| *v == 0.0) {
        return Ok(AStep { a: current_a.clone(), degenerate: true });
    }
    let m = y.t().dot(&x.dot(b));
    polar_factor(&m)
}

/// Blockwise optimality report for `B` at a fixed `A` (with `YA` already
/// formed). Zero rows are checked against the subgradient bound, active
/// rows against exact stationarity.
pub fn kkt_violation(
    x: &Array2<f64>,
    ya: &Array2<f64>,
    b: &Array2<f64>,
    w: &PenaltyWeights,
) -> Result<KktReport> {
    let (n, p) = x.dim();
    let r = ya.ncols();
    if ya.nrows() != n || b.dim() != (p, r) || w.len() != p {
        return Err(Error::InvalidArgument(
            "kkt_violation: dimensions disagree".into(),
        ));
    }
    let resid = ya - &x.dot(b);
    let grad = x.t().dot(&resid); // row j = X_jᵀ(YA − XB)
    let nf = n as f64;
    let mut max_zero = 0.0f64;
    let mut max_active = 0.0f64;
    for j in 0..p {
        let lj = w.lambdas()[j];
        let gnorm = grad.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        let bnorm = b.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            if lj.is_finite() {
                max_zero = max_zero.max((gnorm - nf * lj / 2.0).max(0.0));
            }
        } else if lj.is_infinite() {
            max_active = f64::INFINITY;
        } else {
            let scale = nf * lj / 2.0 / bnorm;
            let res_sq: f64 = (0..r)
                .map(|k| {
                    let v = grad[[j, k]] - scale * b[[j, k]];
                    v * v
                })
                .sum();
            max_active = max_active.max(res_sq.sqrt());
        }
    }
    Ok(KktReport { max_zero_violation: max_zero, max_active_residual: max_active })
}

struct StartOutcome {
    b: Array2<f64>,
    a: Array2<f64>,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
    degenerate: bool,
}

/// One run of the outer alternation from a given `(B, A)` start, on the
/// reduced (finite-weight) problem.
fn run_alternation(
    x: &Array2<f64>,
    xt: &Array2<f64>,
    col_sq: &[f64],
    y: &Array2<f64>,
    y_norm_sq: f64,
    lambdas: &[f64],
    mut b: Array2<f64>,
    mut a: Array2<f64>,
    opts: &SolverOptions,
) -> Result<StartOutcome> {
    let n = x.nrows();
    let nf = n as f64;
    let eval = |b: &Array2<f64>, ya: &Array2<f64>, xb: &Array2<f64>| {
        let cross: f64 = xb.iter().zip(ya.iter()).map(|(u, v)| u * v).sum();
        let xb_sq: f64 = xb.iter().map(|v| v * v).sum();
        let penalty: f64 = row_norms(b)
            .iter()
            .zip(lambdas)
            .map(|(norm, lj)| if lj.is_finite() { lj * norm } else { 0.0 })
            .sum();
        y_norm_sq - 2.0 * cross + xb_sq + nf * penalty
    };

    let mut ya = y.dot(&a);
    let mut xb = x.dot(&b);
    let mut trace = vec![eval(&b, &ya, &xb)];
    let mut converged = false;
    let mut iterations = 0;
    let mut degenerate = false;

    for iter in 1..=opts.max_outer {
        let mut resid = &ya - &xb;
        b_step_kernel(xt, col_sq, lambdas, &mut b, &mut resid, opts.inner_tol, opts.max_inner);
        xb = x.dot(&b);
        if b.iter().all(|v| *v == 0.0) {
            degenerate = true;
        } else {
            let step = polar_factor(&y.t().dot(&xb))?;
            a = step.a;
            degenerate |= step.degenerate;
            ya = y.dot(&a);
        }
        let q_now = eval(&b, &ya, &xb);
        let q_prev = *trace.last().unwrap();
        trace.push(q_now);
        iterations = iter;
        let rel = (q_prev - q_now) / q_prev.abs().max(f64::MIN_POSITIVE);
        if rel <= opts.tol {
            converged = true;
            break;
        }
    }

    // Final B polish so the returned pair carries a blockwise optimality
    // certificate for the returned A.
    let mut resid = &ya - &xb;
    b_step_kernel(xt, col_sq, lambdas, &mut b, &mut resid, opts.inner_tol, opts.max_inner);
    xb = x.dot(&b);
    trace.push(eval(&b, &ya, &xb));

    Ok(StartOutcome { b, a, trace, converged, iterations, degenerate })
}

/// Solves `min Q(C)` over `rank(C) ≤ r` by multi-start alternating
/// minimization on `C = B·Aᵀ`.
///
/// Rows with infinite weight are removed from the working design before
/// iteration and restored as exactly-zero rows in the output. The returned
/// trace is non-increasing and the returned `B` satisfies the blockwise
/// optimality conditions for the returned `A`.
pub fn fit_srrr(
    x: &Array2<f64>,
    y: &Array2<f64>,
    r: usize,
    w: &PenaltyWeights,
    opts: &SolverOptions,
) -> Result<FitResult> {
    fit_srrr_with_init(x, y, r, w, opts, None)
}

/// [`fit_srrr`] with an explicit warm start `(B, A)` replacing the reduced
/// rank pilot initialization; used for regularization-path tuning.
pub(crate) fn fit_srrr_with_init(
    x: &Array2<f64>,
    y: &Array2<f64>,
    r: usize,
    w: &PenaltyWeights,
    opts: &SolverOptions,
    init: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Result<FitResult> {
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
    if w.len() != p {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {p} predictors",
            w.len()
        )));
    }
    if r < 1 || r > p.min(q) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={} for p={p}, q={q}",
            p.min(q)
        )));
    }
    if opts.n_starts == 0 || opts.max_outer == 0 || opts.max_inner == 0 {
        return Err(Error::InvalidArgument(
            "solver options need n_starts, max_outer and max_inner >= 1".into(),
        ));
    }
    let col_sq_full = column_squared_norms(x);
    for j in 0..p {
        if col_sq_full[j] == 0.0 && w.lambdas()[j].is_finite() {
            return Err(Error::DegenerateColumn(format!(
                "predictor {j} is identically zero with finite weight"
            )));
        }
    }

    // Reduced problem over the finite-weight predictors.
    let finite_idx: Vec<usize> =
        (0..p).filter(|&j| w.lambdas()[j].is_finite()).collect();
    let p_f = finite_idx.len();
    let mut x_f = Array2::zeros((n, p_f));
    for (dst, &src) in finite_idx.iter().enumerate() {
        x_f.column_mut(dst).assign(&x.column(src));
    }
    let lambdas_f: Vec<f64> = finite_idx.iter().map(|&j| w.lambdas()[j]).collect();
    let col_sq: Vec<f64> = finite_idx.iter().map(|&j| col_sq_full[j]).collect();
    let xt_f = transposed_copy(&x_f);
    let y_norm_sq = frobenius_norm(y).powi(2);

    // Initialization: warm start if given, otherwise a rank-truncated
    // ridge pilot from the closed-form reduced rank fit.
    let (b0, a0) = match init {
        Some((b_full, a_init)) => {
            if b_full.dim() != (p, r) || a_init.dim() != (q, r) {
                return Err(Error::InvalidArgument(
                    "warm start dimensions disagree with the problem".into(),
                ));
            }
            let mut b0 = Array2::zeros((p_f, r));
            for (dst, &src) in finite_idx.iter().enumerate() {
                b0.row_mut(dst).assign(&b_full.row(src));
            }
            (b0, a_init.clone())
        }
        None => {
            let r_init = r.min(p_f);
            let pilot = fit_rrr(&x_f, y, r_init, opts.init_ridge)?;
            let svd = thin_svd(&pilot.coefficient)?;
            let mut b0 = Array2::zeros((p_f, r));
            for k in 0..r_init {
                let s = svd.singular_values[k];
                for i in 0..p_f {
                    b0[[i, k]] = svd.u[[i, k]] * s;
                }
            }
            let v_r = svd.v.slice(ndarray::s![.., ..r_init]).to_owned();
            let a0 = orthonormal_completion(&v_r, r)?;
            (b0, a0)
        }
    };

    let mut best: Option<StartOutcome> = None;
    for start in 0..opts.n_starts {
        let a_start = if start == 0 {
            a0.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(opts.seed, start as u64));
            let noise =
                Array2::from_shape_fn((q, r), |_| 0.5 * rng.sample::<f64, _>(StandardNormal));
            polar_factor(&(&a0 + &noise))?.a
        };
        let outcome = run_alternation(
            &x_f,
            &xt_f,
            &col_sq,
            y,
            y_norm_sq,
            &lambdas_f,
            b0.clone(),
            a_start,
            opts,
        )?;
        let better = match &best {
            None => true,
            Some(cur) => {
                outcome.trace.last().unwrap() < cur.trace.last().unwrap()
            }
        };
        if better {
            best = Some(outcome);
        }
    }
    let winner = best.expect("n_starts >= 1");

    let w_f = PenaltyWeights::new(lambdas_f.clone())?;
    let kkt = kkt_violation(&x_f, &y.dot(&winner.a), &winner.b, &w_f)?;

    let mut b_full = Array2::zeros((p, r));
    let mut active_set = BTreeSet::new();
    for (src, &dst) in finite_idx.iter().enumerate() {
        b_full.row_mut(dst).assign(&winner.b.row(src));
        if winner.b.row(src).iter().any(|v| *v != 0.0) {
            active_set.insert(dst);
        }
    }

    let objective = *winner.trace.last().unwrap();
    Ok(FitResult {
        coefficient: FactoredCoefficient::new(b_full, winner.a)?,
        active_set,
        objective_trace: winner.trace,
        converged: winner.converged,
        iterations: winner.iterations,
        degenerate_a_step: winner.degenerate,
        kkt,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{from_na, to_na};
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    fn random_orthonormal(q: usize, r: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let g = gaussian(q, r, rng);
        polar_factor(&g).unwrap().a
    }

    #[test]
    fn soft_threshold_identities() {
        let v = array![3.0, 4.0];
        assert_eq!(group_soft_threshold(v.view(), 0.0), v);
        assert_eq!(group_soft_threshold(v.view(), 5.0), array![0.0, 0.0]);
        let shrunk = group_soft_threshold(v.view(), 2.5);
        assert_relative_eq!(shrunk[0], 1.5, epsilon = 1e-15);
        assert_relative_eq!(shrunk[1], 2.0, epsilon = 1e-15);
        let zero = array![0.0, 0.0];
        assert_eq!(group_soft_threshold(zero.view(), 1.0), zero);
        assert_eq!(
            group_soft_threshold(v.view(), f64::INFINITY),
            array![0.0, 0.0]
        );
    }

    #[test]
    fn objective_zero_coefficient_is_y_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(6, 3, &mut rng);
        let y = gaussian(6, 2, &mut rng);
        let a = random_orthonormal(2, 1, &mut rng);
        let c = FactoredCoefficient::new(Array2::zeros((3, 1)), a).unwrap();
        let w = PenaltyWeights::uniform(3, 0.7).unwrap();
        let q = objective(&x, &y, &c, &w).unwrap();
        assert_relative_eq!(q, frobenius_norm(&y).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn objective_matches_loop_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, p, q, r) = (4, 2, 2, 1);
        let x = gaussian(n, p, &mut rng);
        let y = gaussian(n, q, &mut rng);
        let b = gaussian(p, r, &mut rng);
        let a = random_orthonormal(q, r, &mut rng);
        let lambdas = vec![0.3, 0.9];
        let c = FactoredCoefficient::new(b.clone(), a.clone()).unwrap();
        let w = PenaltyWeights::new(lambdas.clone()).unwrap();
        let got = objective(&x, &y, &c, &w).unwrap();

        // From-scratch recomputation of both terms by explicit loops.
        let mut rss = 0.0;
        for i in 0..n {
            for k in 0..q {
                let mut fit = 0.0;
                for j in 0..p {
                    for t in 0..r {
                        fit += x[[i, j]] * b[[j, t]] * a[[k, t]];
                    }
                }
                let d = y[[i, k]] - fit;
                rss += d * d;
            }
        }
        let mut pen = 0.0;
        for j in 0..p {
            let mut norm_sq = 0.0;
            for k in 0..q {
                let mut c_jk = 0.0;
                for t in 0..r {
                    c_jk += b[[j, t]] * a[[k, t]];
                }
                norm_sq += c_jk * c_jk;
            }
            pen += lambdas[j] * norm_sq.sqrt();
        }
        let expect = rss + n as f64 * pen;
        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn objective_no_penalty_is_pure_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(5, 3, &mut rng);
        let y = gaussian(5, 2, &mut rng);
        let b = gaussian(3, 2, &mut rng);
        let a = random_orthonormal(2, 2, &mut rng);
        let c = FactoredCoefficient::new(b, a).unwrap();
        let w = PenaltyWeights::uniform(3, 0.0).unwrap();
        let q = objective(&x, &y, &c, &w).unwrap();
        let resid = &y - &x.dot(&c.to_matrix());
        assert_relative_eq!(q, frobenius_norm(&resid).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn objective_rejects_infeasible_infinite_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(5, 2, &mut rng);
        let y = gaussian(5, 2, &mut rng);
        let b = array![[1.0], [0.5]];
        let a = random_orthonormal(2, 1, &mut rng);
        let c = FactoredCoefficient::new(b, a).unwrap();
        let w = PenaltyWeights::new(vec![0.1, f64::INFINITY]).unwrap();
        assert!(matches!(
            objective(&x, &y, &c, &w),
            Err(Error::InfeasiblePoint(_))
        ));
    }

    #[test]
    fn b_step_unpenalized_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(30, 4, &mut rng);
        let ya = gaussian(30, 2, &mut rng);
        let w = PenaltyWeights::uniform(4, 0.0).unwrap();
        let b = solve_b_step(&x, &ya, &w, &Array2::zeros((4, 2)), 1e-12, 2000).unwrap();
        let chol = nalgebra::linalg::Cholesky::new(to_na(&x.t().dot(&x))).unwrap();
        let reference = from_na(&chol.solve(&to_na(&x.t().dot(&ya))));
        assert!(frobenius_norm(&(&b - &reference)) <= 1e-6);
    }

    #[test]
    fn b_step_large_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(25, 3, &mut rng);
        let ya = gaussian(25, 2, &mut rng);
        let n = 25.0;
        let corr = x.t().dot(&ya);
        let max_corr = row_norms(&corr).iter().cloned().fold(0.0f64, f64::max);
        let lambda = 2.0 * max_corr / n;
        let w = PenaltyWeights::uniform(3, lambda).unwrap();
        let b = solve_b_step(&x, &ya, &w, &Array2::zeros((3, 2)), 1e-12, 100).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));
        // Zero is blockwise optimal: the stated correlation condition.
        for j in 0..3 {
            let gnorm = corr.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(gnorm <= n * lambda / 2.0 + 1e-9);
        }
    }

    #[test]
    fn b_step_beats_exhaustive_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, p, r) = (30, 2, 1);
        let x = gaussian(n, p, &mut rng);
        let ya = gaussian(n, r, &mut rng);
        let lambdas = vec![0.3, 0.3];
        let w = PenaltyWeights::new(lambdas.clone()).unwrap();
        let b = solve_b_step(&x, &ya, &w, &Array2::zeros((p, r)), 1e-12, 5000).unwrap();

        let sub_obj = |b1: f64, b2: f64| {
            let mut rss = 0.0;
            for i in 0..n {
                let d = ya[[i, 0]] - x[[i, 0]] * b1 - x[[i, 1]] * b2;
                rss += d * d;
            }
            rss + n as f64 * (lambdas[0] * b1.abs() + lambdas[1] * b2.abs())
        };
        let got = sub_obj(b[[0, 0]], b[[1, 0]]);
        let mut best = f64::INFINITY;
        for i in 0..401 {
            let b1 = -2.0 + 0.01 * i as f64;
            for j in 0..401 {
                let b2 = -2.0 + 0.01 * j as f64;
                best = best.min(sub_obj(b1, b2));
            }
        }
        assert!(got <= best + 1e-4);
    }

    #[test]
    fn b_step_rejects_zero_column_with_finite_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = gaussian(10, 2, &mut rng);
        x.column_mut(1).fill(0.0);
        let ya = gaussian(10, 1, &mut rng);
        let w = PenaltyWeights::uniform(2, 0.1).unwrap();
        assert!(matches!(
            solve_b_step(&x, &ya, &w, &Array2::zeros((2, 1)), 1e-8, 10),
            Err(Error::DegenerateColumn(_))
        ));
    }

    #[test]
    fn a_step_returns_orthonormal_input() {
        // With X = Y = I, the Procrustes target is B itself.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_orthonormal(4, 2, &mut rng);
        let eye = Array2::eye(4);
        let step = solve_a_step(&eye, &eye, &q, &q).unwrap();
        assert!(frobenius_norm(&(&step.a - &q)) <= 1e-10);
        assert!(!step.degenerate);
    }

    #[test]
    fn a_step_polar_factor_of_positive_diagonal_block() {
        let eye = Array2::eye(3);
        let b = array![[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]];
        let current = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let step = solve_a_step(&eye, &eye, &b, &current).unwrap();
        let expect = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert!(frobenius_norm(&(&step.a - &expect)) <= 1e-10);
    }

    #[test]
    fn a_step_keeps_previous_on_zero_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = gaussian(6, 3, &mut rng);
        let y = gaussian(6, 2, &mut rng);
        let prev = random_orthonormal(2, 1, &mut rng);
        let step = solve_a_step(&x, &y, &Array2::zeros((3, 1)), &prev).unwrap();
        assert_eq!(step.a, prev);
        assert!(step.degenerate);
    }

    #[test]
    fn a_step_maximizes_trace_over_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, p, q, r) = (12, 3, 4, 2);
        let x = gaussian(n, p, &mut rng);
        let y = gaussian(n, q, &mut rng);
        let b = gaussian(p, r, &mut rng);
        let current = random_orthonormal(q, r, &mut rng);
        let step = solve_a_step(&x, &y, &b, &current).unwrap();
        let m = y.t().dot(&x.dot(&b));
        let trace_of = |a: &Array2<f64>| (a.t().dot(&m)).diag().sum();
        let best = trace_of(&step.a);
        for _ in 0..10_000 {
            let cand = random_orthonormal(q, r, &mut rng);
            assert!(trace_of(&cand) <= best + 1e-9);
        }
    }

    fn noiseless_instance(
        seed: u64,
        n: usize,
        p: usize,
        q: usize,
        r: usize,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(n, p, &mut rng);
        let b0 = gaussian(p, r, &mut rng);
        let a0 = random_orthonormal(q, r, &mut rng);
        let c0 = b0.dot(&a0.t());
        let y = x.dot(&c0);
        (x, y, c0)
    }

    #[test]
    fn fit_recovers_noiseless_truth_unpenalized() {
        let (x, y, c0) = noiseless_instance(12, 50, 4, 3, 2);
        let w = PenaltyWeights::uniform(4, 0.0).unwrap();
        let fit = fit_srrr(&x, &y, 2, &w, &SolverOptions::default()).unwrap();
        assert!(frobenius_norm(&(&fit.coefficient.to_matrix() - &c0)) <= 1e-5);
    }

    #[test]
    fn infinite_weights_equal_restricted_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, p, q, r, s) = (40, 6, 3, 2, 3);
        let x = gaussian(n, p, &mut rng);
        let y = gaussian(n, q, &mut rng);
        let mut lambdas = vec![0.2; p];
        for lj in lambdas.iter_mut().skip(s) {
            *lj = f64::INFINITY;
        }
        let w = PenaltyWeights::new(lambdas).unwrap();
        let opts = SolverOptions::default();
        let fit = fit_srrr(&x, &y, r, &w, &opts).unwrap();

        let b = fit.coefficient.b();
        for j in s..p {
            assert!(b.row(j).iter().all(|v| *v == 0.0));
        }

        let x1 = x.slice(ndarray::s![.., ..s]).to_owned();
        let w1 = PenaltyWeights::uniform(s, 0.2).unwrap();
        let restricted = fit_srrr(&x1, &y, r, &w1, &opts).unwrap();
        assert_eq!(
            b.slice(ndarray::s![..s, ..]),
            restricted.coefficient.b().slice(ndarray::s![.., ..])
        );
        assert_eq!(fit.coefficient.a(), restricted.coefficient.a());
    }

    #[test]
    fn scaling_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (n, p, q, r) = (30, 4, 3, 2);
        let x = gaussian(n, p, &mut rng);
        let y = gaussian(n, q, &mut rng);
        let c = 3.0;
        let w = PenaltyWeights::uniform(p, 0.15).unwrap();
        let wc = PenaltyWeights::uniform(p, 0.15 * c).unwrap();
        let opts = SolverOptions::default();
        let base = fit_srrr(&x, &y, r, &w, &opts).unwrap();
        let scaled = fit_srrr(&x, &(&y * c), r, &wc, &opts).unwrap();
        let diff = &scaled.coefficient.to_matrix() - &(&base.coefficient.to_matrix() * c);
        assert!(frobenius_norm(&diff) <= 1e-6);
    }

    #[test]
    fn fit_invariants_on_noisy_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (n, p, q, r) = (60, 8, 4, 2);
        let x = gaussian(n, p, &mut rng);
        let b0 = gaussian(p, r, &mut rng);
        let a0 = random_orthonormal(q, r, &mut rng);
        let y = x.dot(&b0.dot(&a0.t())) + &(gaussian(n, q, &mut rng) * 0.5);
        let w = PenaltyWeights::uniform(p, 0.2).unwrap();
        let fit = fit_srrr(&x, &y, r, &w, &SolverOptions::default()).unwrap();

        // Objective trace non-increasing.
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10);
        }
        // Row-norm identity.
        let c_norms = row_norms(&fit.coefficient.to_matrix());
        let b_norms = fit.coefficient.row_norms();
        for j in 0..p {
            assert!((c_norms[j] - b_norms[j]).abs() <= 1e-10);
        }
        // A-orthonormality.
        assert!(orthonormality_defect(fit.coefficient.a()) <= 1e-8);
        // KKT certificate at the returned point.
        assert!(fit.kkt.max_violation() <= 1e-6 * n as f64);
        // Active set excludes nothing it should not.
        for j in &fit.active_set {
            assert!(fit.coefficient.b().row(*j).iter().any(|v| *v != 0.0));
        }
        assert!(fit.converged);
    }

    #[test]
    fn fit_rejects_bad_rank_and_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = gaussian(10, 3, &mut rng);
        let y = gaussian(10, 2, &mut rng);
        let w = PenaltyWeights::uniform(3, 0.1).unwrap();
        let opts = SolverOptions::default();
        assert!(fit_srrr(&x, &y, 0, &w, &opts).is_err());
        assert!(fit_srrr(&x, &y, 3, &w, &opts).is_err());
        let y_bad = gaussian(9, 2, &mut rng);
        assert!(fit_srrr(&x, &y_bad, 1, &w, &opts).is_err());
        let w_bad = PenaltyWeights::uniform(2, 0.1).unwrap();
        assert!(fit_srrr(&x, &y, 1, &w_bad, &opts).is_err());
    }

    #[test]
    fn penalty_weights_validation() {
        assert!(PenaltyWeights::new(vec![]).is_err());
        assert!(PenaltyWeights::new(vec![-0.1, 0.2]).is_err());
        assert!(PenaltyWeights::new(vec![f64::NAN]).is_err());
        assert!(PenaltyWeights::new(vec![f64::INFINITY, f64::INFINITY]).is_err());
        assert!(PenaltyWeights::new(vec![f64::INFINITY, 0.0]).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn soft_threshold_norm_identity(
            v in proptest::collection::vec(-5.0f64..5.0, 1..6),
            t in 0.0f64..4.0,
        ) {
            let arr = Array1::from_vec(v);
            let out = group_soft_threshold(arr.view(), t);
            let in_norm = arr.iter().map(|x| x * x).sum::<f64>().sqrt();
            let out_norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((out_norm - (in_norm - t).max(0.0)).abs() <= 1e-12 * (1.0 + in_norm));
        }

        #[test]
        fn single_row_update_shrinks_with_lambda(
            seed in 0u64..500,
            l1 in 0.0f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            // For a fixed residual, raising λ weakly shrinks the updated row.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = gaussian(15, 1, &mut rng);
            let ya = gaussian(15, 2, &mut rng);
            let l2 = l1 + extra;
            let b0 = Array2::zeros((1, 2));
            let small = solve_b_step(
                &x, &ya, &PenaltyWeights::uniform(1, l1).unwrap(), &b0, 1e-12, 50,
            ).unwrap();
            let large = solve_b_step(
                &x, &ya, &PenaltyWeights::uniform(1, l2).unwrap(), &b0, 1e-12, 50,
            ).unwrap();
            let ns = row_norms(&small)[0];
            let nl = row_norms(&large)[0];
            prop_assert!(nl <= ns + 1e-12);
        }
    }
}
