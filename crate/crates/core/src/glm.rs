//! Linear and logistic regression fitted from scratch, plus the
//! single-parameter logistic fluctuation used by the TMLE update.

use nalgebra::{DMatrix, DVector};

use crate::dgp::expit;
use crate::error::{Error, Result};

/// Bounds applied to logistic predictions handed to callers.
pub const PREDICT_CLAMP: f64 = 1e-12;
/// Fitted probabilities closer than this to 0 or 1 signal separation.
pub const SEPARATION_EPS: f64 = 1e-10;

const IRLS_MAX_ITER: usize = 50;
const IRLS_SCORE_TOL: f64 = 1e-8;
const IRLS_DEVIANCE_TOL: f64 = 1e-10;
/// Score bound accepted when IRLS stops on the deviance criterion.
const IRLS_SCORE_ACCEPT: f64 = 1e-6;

const FLUCT_SCORE_TOL: f64 = 1e-10;
const FLUCT_MAX_ITER: usize = 100;
const FLUCT_BRACKET: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coef: Vec<f64>,
    pub residual_variance: f64,
    pub rank: usize,
    /// Set when the design had fewer than `p` independent columns and the
    /// minimum-norm solution was returned.
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Fitted probabilities reached the separation bounds.
    pub separated: bool,
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::dimension(format!("{} weights for {n} rows", w.len())));
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("weights must be finite and nonnegative"));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::domain("weights are all zero"));
        }
    }
    Ok(())
}

/// Minimum-norm weighted least squares by a complete orthogonal
/// decomposition: column-pivoted Householder QR, then, when the design is
/// rank deficient, a second QR of the leading rows of `R` transposed.
///
/// Pivots with `|r_kk| <= max(n, p) * eps * |r_00|` are treated as zero.
pub(crate) fn solve_least_squares(design: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> (Vec<f64>, usize) {
    let (n, p) = design.shape();
    let mut a = design.clone();
    let mut b = DVector::from_column_slice(y);
    if let Some(w) = weights {
        for i in 0..n {
            let s = w[i].sqrt();
            b[i] *= s;
            for j in 0..p {
                a[(i, j)] *= s;
            }
        }
    }
    let qr = a.col_piv_qr();
    let r = qr.r();
    let k = n.min(p);
    let lead = r[(0, 0)].abs();
    let cutoff = (n.max(p) as f64) * f64::EPSILON * lead;
    let rank = if lead == 0.0 { 0 } else { (0..k).take_while(|&i| r[(i, i)].abs() > cutoff).count() };
    if rank == 0 {
        return (vec![0.0; p], 0);
    }
    let qtb = qr.q().tr_mul(&b);
    let c = qtb.rows(0, rank).into_owned();
    let mut z = if rank == p {
        r.view((0, 0), (p, p)).solve_upper_triangular(&c).expect("nonzero pivots")
    } else {
        // R[..rank, ..] = L Q2^T with L lower triangular; z = Q2 L^-1 c
        let t = r.view((0, 0), (rank, p)).transpose();
        let qr2 = t.qr();
        let l = qr2.r().transpose();
        let w = l.solve_lower_triangular(&c).expect("nonzero pivots");
        qr2.q() * w
    };
    qr.p().inv_permute_rows(&mut z);
    (z.iter().copied().collect(), rank)
}

/// Ordinary (or weighted) least squares.
pub fn fit_linear(design: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::dimension(format!("design has {n} rows, y has {}", y.len())));
    }
    if n < p {
        return Err(Error::dimension(format!("{n} rows cannot identify {p} coefficients")));
    }
    if p == 0 {
        return Err(Error::dimension("design has no columns"));
    }
    check_weights(weights, n)?;
    if design.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite value in design or response"));
    }
    let (coef, rank) = solve_least_squares(design, y, weights);
    let fitted = design * DVector::from_column_slice(&coef);
    let ssr: f64 = (0..n)
        .map(|i| {
            let r = y[i] - fitted[i];
            weights.map_or(1.0, |w| w[i]) * r * r
        })
        .sum();
    let residual_variance = if n > rank { ssr / (n - rank) as f64 } else { 0.0 };
    if rank < p {
        log::debug!("rank-deficient design: rank {rank} < {p} columns");
    }
    Ok(LinearFit { coef, residual_variance, rank, rank_deficient: rank < p })
}

fn check_width(design: &DMatrix<f64>, coef: &[f64]) -> Result<()> {
    if design.ncols() != coef.len() {
        return Err(Error::dimension(format!(
            "design has {} columns, fit has {} coefficients",
            design.ncols(),
            coef.len()
        )));
    }
    Ok(())
}

pub fn predict_linear(fit: &LinearFit, design: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_width(design, &fit.coef)?;
    Ok((design * DVector::from_column_slice(&fit.coef)).iter().copied().collect())
}

/// Fitted probabilities, clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_logistic(fit: &LogisticFit, design: &DMatrix<f64>, offset: Option<&[f64]>) -> Result<Vec<f64>> {
    check_width(design, &fit.coef)?;
    if let Some(o) = offset {
        if o.len() != design.nrows() {
            return Err(Error::dimension("offset length differs from design rows"));
        }
    }
    let eta = linear_predictor(design, &fit.coef, offset);
    Ok(eta.into_iter().map(|e| expit(e).clamp(PREDICT_CLAMP, 1.0 - PREDICT_CLAMP)).collect())
}

fn linear_predictor(design: &DMatrix<f64>, coef: &[f64], offset: Option<&[f64]>) -> Vec<f64> {
    let eta = design * DVector::from_column_slice(coef);
    eta.iter()
        .enumerate()
        .map(|(i, e)| e + offset.map_or(0.0, |o| o[i]))
        .collect()
}

/// Weighted Bernoulli log-likelihood at `coef`.
pub fn logistic_log_likelihood(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    offset: Option<&[f64]>,
    coef: &[f64],
) -> f64 {
    linear_predictor(design, coef, offset)
        .into_iter()
        .enumerate()
        .map(|(i, eta)| {
            // y*eta - log(1 + e^eta), written to avoid overflow
            let log1p_exp = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            weights.map_or(1.0, |w| w[i]) * (y[i] * eta - log1p_exp)
        })
        .sum()
}

/// Gradient of [`logistic_log_likelihood`] with respect to `coef`.
pub fn logistic_score(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    offset: Option<&[f64]>,
    coef: &[f64],
) -> Vec<f64> {
    let eta = linear_predictor(design, coef, offset);
    let resid = DVector::from_iterator(
        eta.len(),
        eta.iter().enumerate().map(|(i, &e)| weights.map_or(1.0, |w| w[i]) * (y[i] - expit(e))),
    );
    (design.transpose() * resid).iter().copied().collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// IRLS maximisation of the Bernoulli log-likelihood with optional prior
/// weights and offset.
///
/// A non-converged fit (iteration cap or separation) is still returned, with
/// `converged = false`.
pub fn fit_logistic(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    offset: Option<&[f64]>,
) -> Result<LogisticFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::dimension(format!("design has {n} rows, y has {}", y.len())));
    }
    if p == 0 {
        return Err(Error::dimension("design has no columns"));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::domain("logistic response must be 0 or 1"));
    }
    if let Some(o) = offset {
        if o.len() != n {
            return Err(Error::dimension("offset length differs from design rows"));
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite offset"));
        }
    }
    check_weights(weights, n)?;
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite value in design"));
    }

    let prior = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut coef = vec![0.0; p];
    let mut loglik = logistic_log_likelihood(design, y, weights, offset, &coef);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=IRLS_MAX_ITER {
        iterations = iter;
        let eta = linear_predictor(design, &coef, offset);
        let mut work_w = Vec::with_capacity(n);
        let mut work_z = Vec::with_capacity(n);
        for i in 0..n {
            let mu = expit(eta[i]).clamp(SEPARATION_EPS, 1.0 - SEPARATION_EPS);
            let var = mu * (1.0 - mu);
            work_w.push(prior(i) * var);
            work_z.push(eta[i] - offset.map_or(0.0, |o| o[i]) + (y[i] - mu) / var);
        }
        let (mut next, _) = solve_least_squares(design, &work_z, Some(&work_w));
        let mut next_ll = logistic_log_likelihood(design, y, weights, offset, &next);
        // step halving if the full IRLS step lowers the likelihood
        let mut halvings = 0;
        while next_ll < loglik - 1e-12 * loglik.abs() && halvings < 30 {
            for (nc, c) in next.iter_mut().zip(&coef) {
                *nc = 0.5 * (*nc + c);
            }
            next_ll = logistic_log_likelihood(design, y, weights, offset, &next);
            halvings += 1;
        }
        let dev_change = 2.0 * (next_ll - loglik).abs() / (2.0 * next_ll.abs() + 0.1);
        coef = next;
        loglik = next_ll;
        let score = max_abs(&logistic_score(design, y, weights, offset, &coef));
        if score < IRLS_SCORE_TOL || (dev_change < IRLS_DEVIANCE_TOL && score < IRLS_SCORE_ACCEPT) {
            converged = true;
            break;
        }
        if dev_change < IRLS_DEVIANCE_TOL * 1e-3 {
            // stalled without a small score: separation or a flat direction
            break;
        }
    }

    let separated = linear_predictor(design, &coef, offset)
        .into_iter()
        .any(|e| {
            let mu = expit(e);
            mu <= SEPARATION_EPS || mu >= 1.0 - SEPARATION_EPS
        });
    if separated {
        log::debug!("logistic fit hit the separation bounds after {iterations} iterations");
    }
    Ok(LogisticFit { coef, converged: converged && !separated, iterations, separated })
}

/// Quasi-logistic score of the fluctuation parameter.
pub fn fluctuation_score(y: &[f64], offset: &[f64], h: &[f64], epsilon: f64) -> f64 {
    y.iter()
        .zip(offset)
        .zip(h)
        .map(|((yi, oi), hi)| hi * (yi - expit(oi + epsilon * hi)))
        .sum()
}

/// Solve `sum h_i (y_i - expit(offset_i + eps h_i)) = 0` for `eps`.
///
/// The score is non-increasing in `eps`, so Newton steps are safeguarded by
/// a bracket on `[-20, 20]`; a step leaving the bracket is replaced by
/// bisection.
pub fn fit_fluctuation(y_scaled: &[f64], offset_logits: &[f64], h: &[f64]) -> Result<f64> {
    let n = y_scaled.len();
    if offset_logits.len() != n || h.len() != n {
        return Err(Error::dimension("fluctuation inputs differ in length"));
    }
    if y_scaled.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::domain("scaled outcome must lie in [0, 1]"));
    }
    if h.iter().chain(offset_logits).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite offset or clever covariate"));
    }
    let score = |e: f64| fluctuation_score(y_scaled, offset_logits, h, e);

    let s0 = score(0.0);
    if s0.abs() < FLUCT_SCORE_TOL {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = if s0 > 0.0 { (0.0, FLUCT_BRACKET) } else { (-FLUCT_BRACKET, 0.0) };
    let far = score(if s0 > 0.0 { hi } else { lo });
    if far.signum() == s0.signum() && far != 0.0 {
        let (hmin, hmax) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        return Err(Error::Bracketing(format!(
            "score keeps sign {} over [-{FLUCT_BRACKET}, {FLUCT_BRACKET}]; score(0)={s0:.3e}, H range [{hmin:.4}, {hmax:.4}]",
            s0.signum()
        )));
    }

    let mut eps = 0.0;
    for _ in 0..FLUCT_MAX_ITER {
        let s = score(eps);
        if s.abs() < FLUCT_SCORE_TOL {
            return Ok(eps);
        }
        if s > 0.0 {
            lo = eps;
        } else {
            hi = eps;
        }
        let slope: f64 = offset_logits
            .iter()
            .zip(h)
            .map(|(o, hi)| {
                let p = expit(o + eps * hi);
                hi * hi * p * (1.0 - p)
            })
            .sum();
        let newton = if slope > 0.0 { eps + s / slope } else { f64::NAN };
        eps = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + eps.abs()) {
            // bracket exhausted at double precision
            return Ok(eps);
        }
    }
    Ok(eps)
}
