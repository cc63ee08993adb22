//! Elastic-net-regularised regression: a multinomial model for similarity
//! ratings and a linear model for chart-entry year, plus column
//! standardisation, hyper-parameter tuning and windowed grouping.
//!
//! Both fits minimise `eta * (nu * ||b||_1 + (1 - nu) * 0.5 * ||b||_2^2)`
//! plus the data term: the negative multinomial log-likelihood for ratings,
//! or half the sum of squared residuals for the year model (the 1/2 makes
//! the pure-ridge solution equal the textbook closed form
//! `(X'X + eta I)^-1 X' y`). Intercepts are never penalised. The solvers are
//! cyclic coordinate descent with soft-thresholding; the multinomial fit
//! wraps it in per-class quadratic approximations with step-halving so the
//! full objective never increases.

use crate::metrics::{PairedSample, Statistic};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty design matrix or target")]
    EmptyData,
    #[error("label {0} outside 1..={1}")]
    LabelOutOfRange(usize, usize),
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("solver did not converge: stationarity residual {residual:.3e} after {iters} iterations")]
    NonConvergence { residual: f64, iters: usize },
    #[error("empty tuning grid")]
    EmptyGrid,
    #[error("could not draw an inner split containing every class after {0} attempts")]
    DegenerateSplit(u32),
    #[error("window_days must be positive, got {0}")]
    BadWindow(i64),
    #[error("model was standardised on non-training statistics")]
    ProvenanceViolation,
}

/// Where standardisation statistics were computed. Experiment pipelines must
/// compute them on training rows only; prediction refuses anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Train,
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleMode {
    /// Divide by the population standard deviation (default).
    Std,
    /// Divide by the variance (the literal wording some sources use).
    Variance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub zero_variance: Vec<bool>,
    pub mode: ScaleMode,
    pub provenance: Provenance,
}

/// Computes per-column centering/scaling statistics. Zero-variance columns
/// get scale 1 and a flag, so they standardise to all zeros.
pub fn standardise_fit(x: &[Vec<f64>], mode: ScaleMode, provenance: Provenance) -> StandardStats {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; p];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; p];
    for row in x {
        for j in 0..p {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    let mut scale = vec![1.0; p];
    let mut zero_variance = vec![false; p];
    for j in 0..p {
        var[j] /= n as f64;
        if var[j] <= 0.0 {
            zero_variance[j] = true;
        } else {
            scale[j] = match mode {
                ScaleMode::Std => var[j].sqrt(),
                ScaleMode::Variance => var[j],
            };
        }
    }
    StandardStats { mean, scale, zero_variance, mode, provenance }
}

pub fn standardise_apply(x: &[Vec<f64>], stats: &StandardStats) -> Vec<Vec<f64>> {
    x.iter().map(|row| standardise_row(row, stats)).collect()
}

pub fn standardise_row(row: &[f64], stats: &StandardStats) -> Vec<f64> {
    row.iter()
        .enumerate()
        .map(|(j, v)| {
            if stats.zero_variance[j] {
                0.0
            } else {
                (v - stats.mean[j]) / stats.scale[j]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultinomialModel {
    /// K rows of P coefficients, in standardised input space.
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub k: usize,
    pub stats: Option<StandardStats>,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub stats: Option<StandardStats>,
    pub clamp: (f64, f64),
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneTrace {
    pub eta_grid: Vec<f64>,
    pub nu: f64,
    pub scores: Vec<f64>,
    pub chosen_eta: f64,
    pub chosen_index: usize,
    /// Inner holdout redraws forced by a class missing from the fold.
    pub resampled_folds: u32,
}

fn soft_threshold(rho: f64, t: f64) -> f64 {
    if rho > t {
        rho - t
    } else if rho < -t {
        rho + t
    } else {
        0.0
    }
}

fn columns_of(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let mut cols = vec![vec![0.0; n]; p];
    for (i, row) in x.iter().enumerate() {
        for j in 0..p {
            cols[j][i] = row[j];
        }
    }
    cols
}

fn penalty(beta: &[f64], eta: f64, nu: f64) -> f64 {
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    eta * (nu * l1 + (1.0 - nu) * 0.5 * l2)
}

/// Smallest `eta` at which the linear elastic-net solution is all-zero.
pub fn eta_max_linear(x: &[Vec<f64>], y: &[f64], nu: f64) -> f64 {
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let cols = columns_of(x);
    let max_corr = cols
        .iter()
        .map(|col| col.iter().zip(y).map(|(xv, yv)| xv * (yv - y_mean)).sum::<f64>().abs())
        .fold(0.0f64, f64::max);
    // headroom so the first path point is all-zero despite rounding
    max_corr / nu.max(1e-3) * (1.0 + 1e-10)
}

/// Smallest `eta` at which the multinomial elastic-net solution is all-zero.
pub fn eta_max_multinomial(x: &[Vec<f64>], y: &[usize], k: usize, nu: f64) -> f64 {
    let n = x.len() as f64;
    let cols = columns_of(x);
    let mut max_corr = 0.0f64;
    for c in 1..=k {
        let rate = y.iter().filter(|&&l| l == c).count() as f64 / n;
        for col in &cols {
            let g: f64 = col
                .iter()
                .zip(y)
                .map(|(xv, &l)| xv * ((l == c) as u8 as f64 - rate))
                .sum();
            max_corr = max_corr.max(g.abs());
        }
    }
    max_corr / nu.max(1e-3) * (1.0 + 1e-10)
}

/// 50 log-spaced values from `eta_max` down to `eta_max * 1e-4`. A
/// non-positive `eta_max` (all-constant design) is floored at a tiny
/// positive value so the grid stays well defined.
pub fn eta_grid(eta_max: f64) -> Vec<f64> {
    let eta_max = eta_max.max(1e-12);
    let n = 50;
    let lo = eta_max * 1e-4;
    (0..n)
        .map(|i| {
            if i == 0 {
                eta_max // exact, so the path really starts all-zero
            } else {
                let t = i as f64 / (n - 1) as f64;
                (eta_max.ln() * (1.0 - t) + lo.ln() * t).exp()
            }
        })
        .collect()
}

const LINEAR_TOL: f64 = 1e-8;
const MULTI_TOL: f64 = 1e-5;

/// Fits `min_theta eta(nu ||theta||_1 + (1-nu) 0.5 ||theta||_2^2) + 0.5 SSR`
/// by cyclic coordinate descent on standardised columns. `warm` seeds the
/// solver, e.g. from the previous point of a regularisation path.
pub fn fit_linear_enr(
    x: &[Vec<f64>],
    y: &[f64],
    eta: f64,
    nu: f64,
    warm: Option<(&[f64], f64)>,
) -> Result<LinearModel, RegressError> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(RegressError::EmptyData);
    }
    let p = x[0].len();
    let cols = columns_of(x);
    let col_sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut theta = warm.map_or(vec![0.0; p], |(t, _)| t.to_vec());
    if theta.len() != p {
        return Err(RegressError::DimensionMismatch { expected: p, got: theta.len() });
    }
    let mut alpha = warm.map_or(y.iter().sum::<f64>() / n as f64, |(_, a)| a);
    let mut residual: Vec<f64> = (0..n)
        .map(|i| y[i] - alpha - cols.iter().zip(&theta).map(|(c, t)| c[i] * t).sum::<f64>())
        .collect();
    let objective = |theta: &[f64], residual: &[f64]| -> f64 {
        0.5 * residual.iter().map(|r| r * r).sum::<f64>() + penalty(theta, eta, nu)
    };
    let mut obj = objective(&theta, &residual);
    // stationarity scales with the centred response (gradients are
    // x_j' r), so the tolerance is relative to its mean magnitude
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_scale = y.iter().map(|v| (v - y_mean).abs()).sum::<f64>() / n as f64;
    let tol = LINEAR_TOL * (1.0 + y_scale);
    let max_sweeps = 100_000;
    for sweep in 0..max_sweeps {
        // intercept: unpenalised least-squares step
        let shift = residual.iter().sum::<f64>() / n as f64;
        alpha += shift;
        for r in &mut residual {
            *r -= shift;
        }
        for j in 0..p {
            let denom = col_sq[j] + eta * (1.0 - nu);
            if denom == 0.0 {
                continue;
            }
            let rho: f64 = cols[j]
                .iter()
                .zip(&residual)
                .map(|(xv, r)| xv * r)
                .sum::<f64>()
                + col_sq[j] * theta[j];
            let new = soft_threshold(rho, eta * nu) / denom;
            let delta = new - theta[j];
            if delta != 0.0 {
                for (r, xv) in residual.iter_mut().zip(&cols[j]) {
                    *r -= delta * xv;
                }
                theta[j] = new;
            }
        }
        // collinear designs with p >> n make plain coordinate descent crawl
        // near the solution; periodically solve the subproblem restricted to
        // the active set exactly, keeping the objective non-increasing
        if sweep % 25 == 24 {
            if let Some((new_theta, new_alpha)) =
                active_set_solve(&cols, y, &theta, &residual, eta, nu)
            {
                let cand_residual: Vec<f64> = (0..n)
                    .map(|i| {
                        y[i] - new_alpha
                            - cols.iter().zip(&new_theta).map(|(c, t)| c[i] * t).sum::<f64>()
                    })
                    .collect();
                if objective(&new_theta, &cand_residual) <= obj {
                    theta = new_theta;
                    alpha = new_alpha;
                    residual = cand_residual;
                }
            }
        }
        let new_obj = objective(&theta, &residual);
        debug_assert!(new_obj <= obj + 1e-9 * (1.0 + obj.abs()), "{new_obj} > {obj}");
        obj = new_obj;
        let res = linear_stationarity(&cols, &residual, &theta, eta, nu);
        if res < tol {
            return Ok(LinearModel {
                theta,
                alpha,
                stats: None,
                clamp: (f64::NEG_INFINITY, f64::INFINITY),
                residual: res,
            });
        }
        if sweep == max_sweeps - 1 {
            return Err(RegressError::NonConvergence { residual: res, iters: sweep + 1 });
        }
    }
    unreachable!()
}

/// Solves the elastic-net problem exactly on the active coordinates (current
/// support plus KKT violators) with the L1 term linearised at fixed signs,
/// iteratively dropping coordinates whose solved sign disagrees. Returns
/// `None` when the restricted system is not positive definite or the sign
/// pattern fails to settle; the caller keeps the coordinate-descent iterate.
fn active_set_solve(
    cols: &[Vec<f64>],
    y: &[f64],
    theta: &[f64],
    residual: &[f64],
    eta: f64,
    nu: f64,
) -> Option<(Vec<f64>, f64)> {
    use nalgebra::{DMatrix, DVector};
    let n = y.len();
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let corr: f64 = col.iter().zip(residual).map(|(x, r)| x * r).sum();
        if theta[j] != 0.0 {
            active.push(j);
            signs.push(theta[j].signum());
        } else if corr.abs() > eta * nu {
            active.push(j);
            signs.push(corr.signum());
        }
    }
    if active.len() > 4000 {
        return None;
    }
    for _ in 0..40 {
        if active.is_empty() {
            return Some((vec![0.0; cols.len()], y.iter().sum::<f64>() / n as f64));
        }
        let a = active.len();
        // normal equations over [alpha, theta_A] with the intercept
        // unpenalised and ridge eta(1-nu) on the coefficients
        let mut m = DMatrix::zeros(a + 1, a + 1);
        let mut rhs = DVector::zeros(a + 1);
        m[(0, 0)] = n as f64;
        rhs[0] = y.iter().sum::<f64>();
        for (ai, &j) in active.iter().enumerate() {
            let col_sum: f64 = cols[j].iter().sum();
            m[(0, ai + 1)] = col_sum;
            m[(ai + 1, 0)] = col_sum;
            rhs[ai + 1] =
                cols[j].iter().zip(y).map(|(x, v)| x * v).sum::<f64>() - eta * nu * signs[ai];
            for (bi, &l) in active.iter().enumerate().skip(ai) {
                let dot: f64 = cols[j].iter().zip(&cols[l]).map(|(x, z)| x * z).sum();
                let v = dot + if j == l { eta * (1.0 - nu) } else { 0.0 };
                m[(ai + 1, bi + 1)] = v;
                m[(bi + 1, ai + 1)] = v;
            }
        }
        let sol = m.cholesky()?.solve(&rhs);
        let mut keep_active = Vec::with_capacity(a);
        let mut keep_signs = Vec::with_capacity(a);
        for (ai, &j) in active.iter().enumerate() {
            if sol[ai + 1] * signs[ai] > 0.0 {
                keep_active.push(j);
                keep_signs.push(signs[ai]);
            }
        }
        if keep_active.len() == active.len() {
            let mut out = vec![0.0; cols.len()];
            for (ai, &j) in active.iter().enumerate() {
                out[j] = sol[ai + 1];
            }
            return Some((out, sol[0]));
        }
        active = keep_active;
        signs = keep_signs;
    }
    None
}

/// Worst-coordinate violation of the soft-threshold stationarity conditions.
fn linear_stationarity(cols: &[Vec<f64>], residual: &[f64], theta: &[f64], eta: f64, nu: f64) -> f64 {
    let mut worst = residual.iter().sum::<f64>().abs() / residual.len() as f64;
    for (j, col) in cols.iter().enumerate() {
        let grad: f64 =
            -col.iter().zip(residual).map(|(xv, r)| xv * r).sum::<f64>() + eta * (1.0 - nu) * theta[j];
        let v = if theta[j] != 0.0 {
            (grad + eta * nu * theta[j].signum()).abs()
        } else {
            (grad.abs() - eta * nu).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn softmax_rows(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            exps.iter().map(|e| e / s).collect()
        })
        .collect()
}

fn multinomial_objective(
    x: &[Vec<f64>],
    y: &[usize],
    beta: &[Vec<f64>],
    gamma: &[f64],
    eta: f64,
    nu: f64,
) -> f64 {
    let k = gamma.len();
    let mut neg_ll = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let logits: Vec<f64> = (0..k)
            .map(|c| gamma[c] + beta[c].iter().zip(row).map(|(b, v)| b * v).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        neg_ll += lse - logits[label - 1];
    }
    let mut pen = 0.0;
    for b in beta {
        pen += penalty(b, eta, nu);
    }
    neg_ll + pen
}

/// Fits the multinomial elastic net by per-class quadratic approximation
/// around the current parameters, each solved with weighted coordinate
/// descent; a step-halving line search keeps the exact objective
/// non-increasing.
pub fn fit_multinomial_enr(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    eta: f64,
    nu: f64,
    warm: Option<&MultinomialModel>,
) -> Result<MultinomialModel, RegressError> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(RegressError::EmptyData);
    }
    if n < k {
        return Err(RegressError::TooFewRows { need: k, got: n });
    }
    if let Some(&bad) = y.iter().find(|&&l| l < 1 || l > k) {
        return Err(RegressError::LabelOutOfRange(bad, k));
    }
    let p = x[0].len();
    let cols = columns_of(x);
    let (mut beta, mut gamma) = match warm {
        Some(m) if m.k == k && m.beta[0].len() == p => (m.beta.clone(), m.gamma.clone()),
        _ => {
            let gamma = (1..=k)
                .map(|c| {
                    let rate = y.iter().filter(|&&l| l == c).count() as f64 / n as f64;
                    rate.max(1e-12).ln()
                })
                .collect();
            (vec![vec![0.0; p]; k], gamma)
        }
    };
    let mut logits: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            (0..k)
                .map(|c| gamma[c] + beta[c].iter().zip(row).map(|(b, v)| b * v).sum::<f64>())
                .collect()
        })
        .collect();
    let mut obj = multinomial_objective(x, y, &beta, &gamma, eta, nu);
    let max_outer = 2000;
    let mut residual = f64::INFINITY;
    for outer in 0..max_outer {
        for c in 0..k {
            let probs = softmax_rows(&logits);
            // quadratic approximation of the class-c negative log-likelihood
            let w: Vec<f64> = probs.iter().map(|p| (p[c] * (1.0 - p[c])).max(1e-9)).collect();
            let z: Vec<f64> = (0..n)
                .map(|i| {
                    let t = (y[i] == c + 1) as u8 as f64;
                    logits[i][c] + (t - probs[i][c]) / w[i]
                })
                .collect();
            let old_beta = beta[c].clone();
            let old_gamma = gamma[c];
            weighted_cd(&cols, &z, &w, &mut beta[c], &mut gamma[c], eta, nu);
            // step-halving towards the previous point if the true objective rose
            let mut step = 1.0;
            loop {
                let trial_beta: Vec<f64> = beta[c]
                    .iter()
                    .zip(&old_beta)
                    .map(|(nb, ob)| ob + step * (nb - ob))
                    .collect();
                let trial_gamma = old_gamma + step * (gamma[c] - old_gamma);
                let mut trial_all = beta.clone();
                trial_all[c] = trial_beta.clone();
                let mut trial_gammas = gamma.clone();
                trial_gammas[c] = trial_gamma;
                let trial_obj = multinomial_objective(x, y, &trial_all, &trial_gammas, eta, nu);
                if trial_obj <= obj + 1e-12 * (1.0 + obj.abs()) || step < 1e-10 {
                    beta[c] = trial_beta;
                    gamma[c] = trial_gamma;
                    obj = trial_obj.min(obj);
                    break;
                }
                step *= 0.5;
            }
            for (i, row) in x.iter().enumerate() {
                logits[i][c] =
                    gamma[c] + beta[c].iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
            }
        }
        let probs = softmax_rows(&logits);
        residual = multinomial_stationarity(&cols, y, &probs, &beta, eta, nu);
        if residual < MULTI_TOL {
            return Ok(MultinomialModel { beta, gamma, k, stats: None, residual });
        }
        // the per-class quadratic updates ignore cross-class curvature and
        // can zigzag indefinitely on correlated designs; a joint Newton step
        // over the active coordinates breaks the cycle
        if (outer + 1) % 10 == 0
            && multinomial_newton_refine(x, &cols, y, &mut beta, &mut gamma, &probs, &mut obj, eta, nu)
        {
            for (i, row) in x.iter().enumerate() {
                for c in 0..k {
                    logits[i][c] =
                        gamma[c] + beta[c].iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
                }
            }
            let probs = softmax_rows(&logits);
            residual = multinomial_stationarity(&cols, y, &probs, &beta, eta, nu);
            if residual < MULTI_TOL {
                return Ok(MultinomialModel { beta, gamma, k, stats: None, residual });
            }
        }
    }
    Err(RegressError::NonConvergence { residual, iters: max_outer })
}

/// One damped Newton step on the multinomial objective restricted to the
/// active coordinates (all intercepts, every coefficient in the support or
/// violating its KKT condition at zero), with the L1 term linearised at
/// fixed signs and coordinates that would cross zero projected onto it.
/// Accepts the step only if the exact penalised objective does not increase.
/// Unlike the per-class quadratic updates this uses the full cross-class
/// Hessian, so it converges quadratically near the optimum.
fn multinomial_newton_refine(
    x: &[Vec<f64>],
    cols: &[Vec<f64>],
    y: &[usize],
    beta: &mut [Vec<f64>],
    gamma: &mut [f64],
    probs: &[Vec<f64>],
    obj: &mut f64,
    eta: f64,
    nu: f64,
) -> bool {
    use nalgebra::{DMatrix, DVector};
    let n = y.len();
    let k = gamma.len();
    // (class, column, linearised sign) for every active coefficient
    let mut vars: Vec<(usize, usize, f64)> = Vec::new();
    for (c, beta_c) in beta.iter().enumerate() {
        for (j, col) in cols.iter().enumerate() {
            let err_dot: f64 = col
                .iter()
                .enumerate()
                .map(|(i, xv)| xv * ((y[i] == c + 1) as u8 as f64 - probs[i][c]))
                .sum();
            let grad = -err_dot + eta * (1.0 - nu) * beta_c[j];
            if beta_c[j] != 0.0 {
                vars.push((c, j, beta_c[j].signum()));
            } else if grad.abs() > eta * nu {
                vars.push((c, j, -grad.signum()));
            }
        }
    }
    if k + vars.len() > 4000 {
        return false;
    }
    let dim = k + vars.len();
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for c in 0..k {
        let err_sum: f64 = (0..n).map(|i| (y[i] == c + 1) as u8 as f64 - probs[i][c]).sum();
        g[c] = -err_sum;
    }
    for (u, &(c, j, sign)) in vars.iter().enumerate() {
        let err_dot: f64 = cols[j]
            .iter()
            .enumerate()
            .map(|(i, xv)| xv * ((y[i] == c + 1) as u8 as f64 - probs[i][c]))
            .sum();
        g[k + u] = -err_dot + eta * (1.0 - nu) * beta[c][j] + eta * nu * sign;
    }
    let mut vals = vec![0.0f64; dim];
    let mut classes = vec![0usize; dim];
    for (u, &(c, _, _)) in vars.iter().enumerate() {
        classes[k + u] = c;
    }
    for c in 0..k {
        classes[c] = c;
    }
    for i in 0..n {
        for c in 0..k {
            vals[c] = 1.0;
        }
        for (u, &(_, j, _)) in vars.iter().enumerate() {
            vals[k + u] = cols[j][i];
        }
        let p = &probs[i];
        for u in 0..dim {
            let cu = classes[u];
            let w_uu = p[cu] * (1.0 - p[cu]);
            h[(u, u)] += vals[u] * vals[u] * w_uu;
            for v in (u + 1)..dim {
                let cv = classes[v];
                let w = if cu == cv { p[cu] * (1.0 - p[cu]) } else { -p[cu] * p[cv] };
                let inc = vals[u] * vals[v] * w;
                h[(u, v)] += inc;
                h[(v, u)] += inc;
            }
        }
    }
    // ridge on coefficients; a tiny diagonal on the intercepts pins the
    // softmax gauge direction (a common shift of all intercepts), which the
    // likelihood Hessian leaves singular
    let gauge = 1e-8 * (n as f64).max(1.0);
    for c in 0..k {
        h[(c, c)] += gauge;
    }
    for u in 0..vars.len() {
        h[(k + u, k + u)] += eta * (1.0 - nu);
    }
    let direction = match h.clone().cholesky() {
        Some(ch) => ch.solve(&(-&g)),
        None => {
            let jitter = 1e-8 * h.trace().max(1.0) / dim as f64;
            for u in 0..dim {
                h[(u, u)] += jitter;
            }
            match h.cholesky() {
                Some(ch) => ch.solve(&(-g)),
                None => return false,
            }
        }
    };
    let mut step = 1.0f64;
    for _ in 0..30 {
        let mut trial_beta = beta.to_vec();
        let mut trial_gamma = gamma.to_vec();
        for c in 0..k {
            trial_gamma[c] += step * direction[c];
        }
        for (u, &(c, j, sign)) in vars.iter().enumerate() {
            let moved = beta[c][j] + step * direction[k + u];
            // orthant projection: a coordinate may not cross its sign
            trial_beta[c][j] = if moved * sign < 0.0 { 0.0 } else { moved };
        }
        let trial_obj = multinomial_objective(x, y, &trial_beta, &trial_gamma, eta, nu);
        if trial_obj <= *obj + 1e-12 * (1.0 + obj.abs()) {
            for c in 0..k {
                beta[c] = trial_beta[c].clone();
            }
            gamma.copy_from_slice(&trial_gamma);
            *obj = trial_obj.min(*obj);
            return true;
        }
        step *= 0.5;
    }
    false
}

/// Weighted elastic-net coordinate descent on working response `z`.
fn weighted_cd(
    cols: &[Vec<f64>],
    z: &[f64],
    w: &[f64],
    beta: &mut [f64],
    gamma: &mut f64,
    eta: f64,
    nu: f64,
) {
    let n = z.len();
    let p = cols.len();
    let w_sum: f64 = w.iter().sum();
    let wx_sq: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().zip(w).map(|(xv, wv)| wv * xv * xv).sum())
        .collect();
    let mut residual: Vec<f64> = (0..n)
        .map(|i| z[i] - *gamma - cols.iter().zip(beta.iter()).map(|(c, b)| c[i] * b).sum::<f64>())
        .collect();
    for _ in 0..100 {
        let mut max_delta = 0.0f64;
        let shift: f64 = residual.iter().zip(w).map(|(r, wv)| wv * r).sum::<f64>() / w_sum;
        *gamma += shift;
        for r in &mut residual {
            *r -= shift;
        }
        max_delta = max_delta.max(shift.abs());
        for j in 0..p {
            let denom = wx_sq[j] + eta * (1.0 - nu);
            if denom == 0.0 {
                continue;
            }
            let rho: f64 = cols[j]
                .iter()
                .zip(&residual)
                .zip(w)
                .map(|((xv, r), wv)| wv * xv * r)
                .sum::<f64>()
                + wx_sq[j] * beta[j];
            let new = soft_threshold(rho, eta * nu) / denom;
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, xv) in residual.iter_mut().zip(&cols[j]) {
                    *r -= delta * xv;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < 1e-10 {
            break;
        }
    }
}

fn multinomial_stationarity(
    cols: &[Vec<f64>],
    y: &[usize],
    probs: &[Vec<f64>],
    beta: &[Vec<f64>],
    eta: f64,
    nu: f64,
) -> f64 {
    let n = y.len();
    let k = beta.len();
    let mut worst = 0.0f64;
    for c in 0..k {
        let err: Vec<f64> = (0..n)
            .map(|i| (y[i] == c + 1) as u8 as f64 - probs[i][c])
            .collect();
        worst = worst.max(err.iter().sum::<f64>().abs());
        for (j, col) in cols.iter().enumerate() {
            let grad: f64 = -col.iter().zip(&err).map(|(xv, e)| xv * e).sum::<f64>()
                + eta * (1.0 - nu) * beta[c][j];
            let v = if beta[c][j] != 0.0 {
                (grad + eta * nu * beta[c][j].signum()).abs()
            } else {
                (grad.abs() - eta * nu).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    worst
}

/// Class probabilities of Eq.-style softmax for a standardised input row.
pub fn class_probabilities(m: &MultinomialModel, row: &[f64]) -> Result<Vec<f64>, RegressError> {
    let p = m.beta[0].len();
    if row.len() != p {
        return Err(RegressError::DimensionMismatch { expected: p, got: row.len() });
    }
    let logits: Vec<f64> = (0..m.k)
        .map(|c| m.gamma[c] + m.beta[c].iter().zip(row).map(|(b, v)| b * v).sum::<f64>())
        .collect();
    Ok(softmax_rows(std::slice::from_ref(&logits)).pop().unwrap())
}

/// Most probable rating for a raw distance row; ties break toward the lower
/// class index. If the model carries standardisation statistics they must be
/// training-derived, and are applied before scoring.
pub fn predict_rating(m: &MultinomialModel, row: &[f64]) -> Result<usize, RegressError> {
    let std_row = apply_stats(row, &m.stats)?;
    let probs = class_probabilities(m, &std_row)?;
    let mut best = 0usize;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    Ok(best + 1)
}

/// Linear prediction clamped to the model's year range.
pub fn predict_year(m: &LinearModel, row: &[f64]) -> Result<f64, RegressError> {
    let std_row = apply_stats(row, &m.stats)?;
    if std_row.len() != m.theta.len() {
        return Err(RegressError::DimensionMismatch { expected: m.theta.len(), got: std_row.len() });
    }
    let raw = m.alpha + m.theta.iter().zip(&std_row).map(|(t, v)| t * v).sum::<f64>();
    Ok(raw.clamp(m.clamp.0, m.clamp.1))
}

fn apply_stats(row: &[f64], stats: &Option<StandardStats>) -> Result<Vec<f64>, RegressError> {
    match stats {
        None => Ok(row.to_vec()),
        Some(s) => {
            if s.provenance != Provenance::Train {
                return Err(RegressError::ProvenanceViolation);
            }
            if row.len() != s.mean.len() {
                return Err(RegressError::DimensionMismatch { expected: s.mean.len(), got: row.len() });
            }
            Ok(standardise_row(row, s))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum FitKind {
    Multinomial { k: usize },
    Linear,
}

#[derive(Debug, Clone, Copy)]
pub enum Protocol {
    /// Inner split of the training rows; fraction is the inner-train share.
    Holdout { train_fraction: f64 },
    KFold { folds: usize },
}

#[derive(Debug, Clone, Copy)]
pub enum TuneCriterion {
    /// Maximise a rank/accuracy statistic on the held-out rows.
    Maximise(Statistic),
    /// Minimise held-out mean squared error.
    MinimiseMse,
}

/// Scans `eta_grid` (descending, warm-started) and returns the trace with the
/// best validation score; ties break toward the larger (more regularised)
/// eta, i.e. the earliest grid entry.
pub fn tune(
    kind: FitKind,
    x: &[Vec<f64>],
    y: &[f64],
    nu: f64,
    grid: &[f64],
    protocol: Protocol,
    criterion: TuneCriterion,
    seed: u64,
) -> Result<TuneTrace, RegressError> {
    if grid.is_empty() {
        return Err(RegressError::EmptyGrid);
    }
    let n = x.len();
    if n < 4 {
        return Err(RegressError::TooFewRows { need: 4, got: n });
    }
    let mut resampled = 0u32;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = match protocol {
        Protocol::Holdout { train_fraction } => {
            let mut attempt = 0u32;
            loop {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64)));
                let cut = ((n as f64) * train_fraction).round() as usize;
                let cut = cut.clamp(1, n - 1);
                let (tr, va) = idx.split_at(cut);
                let ok = match kind {
                    FitKind::Multinomial { k } => {
                        (1..=k).all(|c| tr.iter().any(|&i| y[i] as usize == c))
                    }
                    FitKind::Linear => true,
                };
                if ok {
                    break vec![(tr.to_vec(), va.to_vec())];
                }
                attempt += 1;
                resampled += 1;
                if attempt > 100 {
                    return Err(RegressError::DegenerateSplit(attempt));
                }
            }
        }
        Protocol::KFold { folds } => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            (0..folds)
                .map(|f| {
                    let va: Vec<usize> = idx.iter().copied().skip(f).step_by(folds).collect();
                    let tr: Vec<usize> = idx
                        .iter()
                        .copied()
                        .enumerate()
                        .filter(|(pos, _)| pos % folds != f)
                        .map(|(_, i)| i)
                        .collect();
                    (tr, va)
                })
                .collect()
        }
    };
    // eta values where the solver fails to converge (the weakly regularised
    // tail of the path on ill-conditioned designs) are scored as unusable
    // for the whole split; smaller etas only condition worse, so the path
    // scan stops there
    let failed = match criterion {
        TuneCriterion::Maximise(_) => -f64::INFINITY,
        TuneCriterion::MinimiseMse => f64::INFINITY,
    };
    let mut scores = vec![0.0f64; grid.len()];
    for (tr, va) in &splits {
        let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
        let xva: Vec<Vec<f64>> = va.iter().map(|&i| x[i].clone()).collect();
        match kind {
            FitKind::Multinomial { k } => {
                let ytr: Vec<usize> = tr.iter().map(|&i| y[i] as usize).collect();
                let yva: Vec<f64> = va.iter().map(|&i| y[i]).collect();
                let mut warm: Option<MultinomialModel> = None;
                for (g, &eta) in grid.iter().enumerate() {
                    let m = match fit_multinomial_enr(&xtr, &ytr, k, eta, nu, warm.as_ref()) {
                        Ok(m) => m,
                        Err(RegressError::NonConvergence { .. }) => {
                            for s in &mut scores[g..] {
                                *s = failed;
                            }
                            break;
                        }
                        Err(e) => return Err(e),
                    };
                    let preds: Vec<f64> = xva
                        .iter()
                        .map(|row| predict_rating(&m, row).map(|v| v as f64))
                        .collect::<Result<_, _>>()?;
                    scores[g] += score_fold(&preds, &yva, criterion)?;
                    warm = Some(m);
                }
            }
            FitKind::Linear => {
                let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                let yva: Vec<f64> = va.iter().map(|&i| y[i]).collect();
                let mut warm: Option<LinearModel> = None;
                for (g, &eta) in grid.iter().enumerate() {
                    let m = match fit_linear_enr(
                        &xtr,
                        &ytr,
                        eta,
                        nu,
                        warm.as_ref().map(|m| (m.theta.as_slice(), m.alpha)),
                    ) {
                        Ok(m) => m,
                        Err(RegressError::NonConvergence { .. }) => {
                            for s in &mut scores[g..] {
                                *s = failed;
                            }
                            break;
                        }
                        Err(e) => return Err(e),
                    };
                    let preds: Vec<f64> = xva
                        .iter()
                        .map(|row| predict_year(&m, row))
                        .collect::<Result<_, _>>()?;
                    scores[g] += score_fold(&preds, &yva, criterion)?;
                    warm = Some(m);
                }
            }
        }
    }
    for s in &mut scores {
        *s /= splits.len() as f64;
    }
    let mut chosen = 0usize;
    for g in 1..grid.len() {
        let better = match criterion {
            TuneCriterion::Maximise(_) => scores[g] > scores[chosen],
            TuneCriterion::MinimiseMse => scores[g] < scores[chosen],
        };
        if better {
            chosen = g;
        }
    }
    Ok(TuneTrace {
        eta_grid: grid.to_vec(),
        nu,
        scores,
        chosen_eta: grid[chosen],
        chosen_index: chosen,
        resampled_folds: resampled,
    })
}

fn score_fold(preds: &[f64], truth: &[f64], criterion: TuneCriterion) -> Result<f64, RegressError> {
    match criterion {
        TuneCriterion::MinimiseMse => Ok(preds
            .iter()
            .zip(truth)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / preds.len() as f64),
        TuneCriterion::Maximise(stat) => {
            // a statistic undefined on this fold (e.g. rank correlation of
            // constant predictions) scores -2, below every achievable value
            Ok(PairedSample::new(preds.to_vec(), truth.to_vec())
                .ok()
                .and_then(|s| stat.evaluate(&s).ok())
                .unwrap_or(-2.0))
        }
    }
}

/// Averages descriptor rows over non-overlapping chart-date windows of
/// `window_days`; returns the averaged rows with each window's center date
/// (fractional years) as the target. Empty windows are dropped.
pub fn window_group(
    dates: &[f64],
    rows: &[Vec<f64>],
    window_days: i64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), RegressError> {
    if window_days <= 0 {
        return Err(RegressError::BadWindow(window_days));
    }
    if dates.is_empty() || dates.len() != rows.len() {
        return Err(RegressError::EmptyData);
    }
    let width = window_days as f64 / 365.25;
    let start = dates.iter().cloned().fold(f64::INFINITY, f64::min);
    let p = rows[0].len();
    let mut grouped: std::collections::BTreeMap<i64, (Vec<f64>, usize)> =
        std::collections::BTreeMap::new();
    for (d, row) in dates.iter().zip(rows) {
        let z = ((d - start) / width).floor() as i64;
        let entry = grouped.entry(z).or_insert_with(|| (vec![0.0; p], 0));
        for (acc, v) in entry.0.iter_mut().zip(row) {
            *acc += v;
        }
        entry.1 += 1;
    }
    let mut out_rows = Vec::with_capacity(grouped.len());
    let mut centers = Vec::with_capacity(grouped.len());
    for (z, (mut acc, count)) in grouped {
        for v in &mut acc {
            *v /= count as f64;
        }
        out_rows.push(acc);
        centers.push(start + (z as f64 + 0.5) * width);
    }
    Ok((out_rows, centers))
}
