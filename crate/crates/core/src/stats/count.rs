//! Poisson and NB2 regression with log link, fitted by damped Newton-Raphson.
//!
//! The NB2 model is parametrized by `(β, ln α)` so the dispersion stays
//! positive without constraints. For integer `y` the gamma-function ratio in
//! the NB2 density collapses to a finite product,
//!
//! ```text
//! ln Γ(y + 1/α) − ln Γ(1/α) = Σ_{k<y} ln(k + 1/α)
//! ```
//!
//! which gives the per-row log-likelihood
//!
//! ```text
//! ℓ = Σ_{k<y} ln(1 + kα) − ln y! + y·ln μ − (y + 1/α)·ln(1 + αμ)
//! ```
//!
//! This form is exact, has cheap closed-form derivatives and stays accurate
//! as α → 0, where it tends to the Poisson log-likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{AlphaEstimate, CoefRow, CountModel, DesignMatrix, FitResult, IterationTrace, StatsError, Z_95};

/// Below this `αμ` the dispersion derivative terms switch to power series.
const SERIES_CUTOFF: f64 = 0.05;
const SERIES_TERMS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub max_halvings: usize,
    pub rel_ll_tol: f64,
    pub grad_tol: f64,
    /// Dispersion below this is reported as the α = 0 boundary.
    pub alpha_boundary: f64,
    /// Lower bound of the method-of-moments starting value for α.
    pub alpha_start_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            max_halvings: 30,
            rel_ll_tol: 1e-9,
            grad_tol: 1e-6,
            alpha_boundary: 1e-6,
            alpha_start_floor: 0.01,
        }
    }
}

fn ln_factorial(y: f64) -> f64 {
    ln_gamma(y + 1.0)
}

fn linear_predictor(design: &DesignMatrix, beta: &[f64]) -> DVector<f64> {
    design.x() * DVector::from_column_slice(beta)
}

pub fn poisson_loglik(design: &DesignMatrix, beta: &[f64]) -> f64 {
    let eta = linear_predictor(design, beta);
    design
        .y()
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| y * e - e.exp() - ln_factorial(y))
        .sum()
}

/// Gradient and Hessian of the Poisson log-likelihood in `β`.
pub fn poisson_gradient_hessian(design: &DesignMatrix, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let x = design.x();
    let (n, p) = (design.n(), design.p());
    let eta = linear_predictor(design, beta);
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    for i in 0..n {
        let mu = eta[i].exp();
        let r = design.y()[i] - mu;
        for a in 0..p {
            let xa = x[(i, a)];
            grad[a] += r * xa;
            for b in 0..=a {
                hess[(a, b)] -= mu * xa * x[(i, b)];
            }
        }
    }
    symmetrize(&mut hess);
    (grad, hess)
}

fn symmetrize(h: &mut DMatrix<f64>) {
    for a in 0..h.nrows() {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
}

/// `ln(1+u) − u/(1+u)`, which is `O(u²)` near zero.
fn log1p_minus_ratio(u: f64) -> f64 {
    if u < SERIES_CUTOFF {
        // Σ_{k≥2} (−1)^k (k−1)/k · u^k
        let mut term = u * u;
        let mut sum = 0.0;
        for k in 2..2 + SERIES_TERMS {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (k - 1) as f64 / k as f64 * term;
            term *= u;
        }
        sum
    } else {
        u.ln_1p() - u / (1.0 + u)
    }
}

/// `u²/(1+u)² − 2·(ln(1+u) − u/(1+u))`, which is `O(u³)` near zero.
fn second_order_remainder(u: f64) -> f64 {
    if u < SERIES_CUTOFF {
        // Σ_{k≥3} (−1)^k (k−1)(k−2)/k · u^k
        let mut term = u * u * u;
        let mut sum = 0.0;
        for k in 3..3 + SERIES_TERMS {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * ((k - 1) * (k - 2)) as f64 / k as f64 * term;
            term *= u;
        }
        sum
    } else {
        let v = u / (1.0 + u);
        v * v - 2.0 * (u.ln_1p() - v)
    }
}

/// Per-row NB2 log-likelihood at linear predictor `eta` and dispersion `alpha`.
fn negbin_row_loglik(y: f64, eta: f64, alpha: f64) -> f64 {
    let mu = eta.exp();
    let count = y as u64;
    let gamma_ratio: f64 = (0..count).map(|k| (k as f64 * alpha).ln_1p()).sum();
    // (1/α)·ln(1+αμ) computed as μ·ln(1+αμ)/(αμ) to stay finite at tiny α.
    let u = alpha * mu;
    let scaled_log = if u == 0.0 { mu } else { mu * u.ln_1p() / u };
    gamma_ratio - ln_factorial(y) + y * eta - y * u.ln_1p() - scaled_log
}

/// NB2 log-likelihood at `(β, ln α)`.
pub fn negbin_loglik(design: &DesignMatrix, beta: &[f64], ln_alpha: f64) -> f64 {
    let alpha = ln_alpha.exp();
    let eta = linear_predictor(design, beta);
    design
        .y()
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| negbin_row_loglik(y, e, alpha))
        .sum()
}

/// Gradient and Hessian of the NB2 log-likelihood in `(β, ln α)`; the last
/// coordinate is `ln α`.
pub fn negbin_gradient_hessian(design: &DesignMatrix, beta: &[f64], ln_alpha: f64) -> (DVector<f64>, DMatrix<f64>) {
    let x = design.x();
    let (n, p) = (design.n(), design.p());
    let a = ln_alpha.exp();
    let eta = linear_predictor(design, beta);
    let mut grad = DVector::zeros(p + 1);
    let mut hess = DMatrix::zeros(p + 1, p + 1);

    for i in 0..n {
        let y = design.y()[i];
        let m = eta[i].exp();
        let u = a * m;
        let denom = 1.0 + u;

        let g_eta = (y - m) / denom;
        let h_eta = -m * (1.0 + a * y) / (denom * denom);
        let h_eta_phi = -u * (y - m) / (denom * denom);

        // Derivatives in α, then chain rule to φ = ln α.
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 1..y as u64 {
            let k = k as f64;
            let t = k / (1.0 + k * a);
            s1 += t;
            s2 += t * t;
        }
        // g(u)/a² and h(u)/a³ rewritten with m so they stay finite as a → 0.
        let (ga2, ha3) = if u == 0.0 {
            (m * m / 2.0, -2.0 * m * m * m / 3.0)
        } else {
            (
                log1p_minus_ratio(u) * (m / u) * (m / u),
                second_order_remainder(u) * (m / u).powi(3),
            )
        };
        let d_a = s1 + ga2 - y * m / denom;
        let d_aa = -s2 + ha3 + y * m * m / (denom * denom);
        let g_phi = a * d_a;
        let h_phi = a * d_a + a * a * d_aa;

        for r in 0..p {
            let xr = x[(i, r)];
            grad[r] += g_eta * xr;
            hess[(p, r)] += h_eta_phi * xr;
            for c in 0..=r {
                hess[(r, c)] += h_eta * xr * x[(i, c)];
            }
        }
        grad[p] += g_phi;
        hess[(p, p)] += h_phi;
    }
    symmetrize(&mut hess);
    (grad, hess)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `(−H) d = g`, adding a growing ridge if `−H` is not positive definite.
fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> DVector<f64> {
    let neg = -hess;
    if let Some(ch) = neg.clone().cholesky() {
        return ch.solve(grad);
    }
    let scale = (0..neg.nrows()).map(|i| neg[(i, i)].abs()).fold(1e-8, f64::max);
    let mut ridge = 1e-8 * scale;
    loop {
        let mut damped = neg.clone();
        for i in 0..damped.nrows() {
            damped[(i, i)] += ridge;
        }
        if let Some(ch) = damped.cholesky() {
            return ch.solve(grad);
        }
        ridge *= 10.0;
    }
}

struct Optimum {
    theta: DVector<f64>,
    ll: f64,
    hess: DMatrix<f64>,
    grad_max: f64,
    trace: Vec<IterationTrace>,
}

/// Maximizes `ll` from `theta` by Newton steps with step halving.
fn maximize<L, D>(
    model: &'static str,
    mut theta: DVector<f64>,
    ll_fn: L,
    deriv_fn: D,
    opts: &FitOptions,
) -> Result<Optimum, StatsError>
where
    L: Fn(&DVector<f64>) -> f64,
    D: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut ll = ll_fn(&theta);
    let (mut grad, mut hess) = deriv_fn(&theta);
    let mut trace = vec![IterationTrace {
        iteration: 0,
        log_likelihood: ll,
        grad_max: max_abs(&grad),
        step: 0.0,
    }];
    let non_convergence = |iterations, grad_max, trace| StatsError::NonConvergence {
        model,
        iterations,
        grad_max,
        trace,
    };
    if !ll.is_finite() {
        return Err(non_convergence(0, f64::NAN, trace));
    }

    for iter in 1..=opts.max_iter {
        let dir = newton_direction(&grad, &hess);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &theta + &dir * step;
            let cand_ll = ll_fn(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, cand_ll));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_ll)) = accepted else {
            let g = max_abs(&grad);
            if g < opts.grad_tol {
                // Already at the optimum to machine precision.
                return Ok(Optimum {
                    theta,
                    ll,
                    hess,
                    grad_max: g,
                    trace,
                });
            }
            return Err(non_convergence(iter, g, trace));
        };

        let rel_change = (cand_ll - ll).abs() / ll.abs().max(1.0);
        theta = cand;
        ll = cand_ll;
        (grad, hess) = deriv_fn(&theta);
        let g = max_abs(&grad);
        trace.push(IterationTrace {
            iteration: iter,
            log_likelihood: ll,
            grad_max: g,
            step,
        });
        if rel_change < opts.rel_ll_tol && g < opts.grad_tol {
            return Ok(Optimum {
                theta,
                ll,
                hess,
                grad_max: g,
                trace,
            });
        }
    }
    let g = max_abs(&grad);
    Err(non_convergence(opts.max_iter, g, trace))
}

/// Standard errors from the inverse observed information `(−H)⁻¹`.
fn std_errors(hess: &DMatrix<f64>) -> DVector<f64> {
    let info = -hess;
    let cov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| info.try_inverse())
        .unwrap_or_else(|| DMatrix::from_element(hess.nrows(), hess.ncols(), f64::NAN));
    DVector::from_iterator(cov.nrows(), (0..cov.nrows()).map(|i| cov[(i, i)].max(0.0).sqrt()))
}

/// A fitted mean smaller than the gradient tolerance is indistinguishable from
/// zero at convergence, which only happens when the estimates run off to
/// infinity.
fn check_divergence(design: &DesignMatrix, beta: &[f64], grad_tol: f64) -> Result<(), StatsError> {
    let eta = linear_predictor(design, beta);
    let floor = grad_tol.ln();
    if let Some(i) = eta.iter().position(|&e| e < floor) {
        return Err(StatsError::Boundary(format!(
            "fitted rate at row {i} collapsed to exp({:.1}); estimates diverge (separation)",
            eta[i]
        )));
    }
    Ok(())
}

/// Poisson regression by Newton-Raphson (equivalent to IRLS for the log link).
pub fn poisson_fit(design: &DesignMatrix, opts: &FitOptions) -> Result<FitResult, StatsError> {
    design.check_dims()?;
    design.check_counts()?;
    let y = design.y();
    let mean = y.mean();
    if mean == 0.0 {
        return Err(StatsError::Boundary(
            "all responses are zero; the rate diverges to 0".into(),
        ));
    }

    // Start at the intercept-only optimum when there is an intercept.
    let p = design.p();
    let mut start = DVector::zeros(p);
    if design.has_intercept() {
        start[p - 1] = mean.ln();
    }
    let opt = maximize(
        "poisson",
        start,
        |t| poisson_loglik(design, t.as_slice()),
        |t| poisson_gradient_hessian(design, t.as_slice()),
        opts,
    )?;
    check_divergence(design, opt.theta.as_slice(), opts.grad_tol)?;

    let se = std_errors(&opt.hess);
    let rows = design
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| CoefRow::wald(name.clone(), opt.theta[j], se[j]))
        .collect();
    Ok(FitResult {
        model: CountModel::Poisson,
        rows,
        log_likelihood: opt.ll,
        alpha: None,
        n_obs: design.n(),
        iterations: opt.trace.len() - 1,
        grad_max: opt.grad_max,
        trace: opt.trace,
        design_fingerprint: design.fingerprint(),
    })
}

/// Method-of-moments NB2 dispersion from Poisson fitted means.
fn moment_alpha(design: &DesignMatrix, beta: &[f64], floor: f64) -> f64 {
    let eta = linear_predictor(design, beta);
    let dof = (design.n() - design.p()).max(1) as f64;
    let sum: f64 = design
        .y()
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| {
            let mu = e.exp();
            ((y - mu).powi(2) - mu) / (mu * mu)
        })
        .sum();
    (sum / dof).max(floor)
}

/// NB2 regression, warm-started from the Poisson fit.
pub fn negbin_fit(design: &DesignMatrix, opts: &FitOptions) -> Result<FitResult, StatsError> {
    let pois = poisson_fit(design, opts)?;
    negbin_fit_from(design, &pois.coefficients(), opts)
}

/// NB2 regression from a given `β` start; α starts at the moment estimate.
pub fn negbin_fit_from(design: &DesignMatrix, beta_start: &[f64], opts: &FitOptions) -> Result<FitResult, StatsError> {
    design.check_dims()?;
    design.check_counts()?;
    let p = design.p();
    let alpha0 = moment_alpha(design, beta_start, opts.alpha_start_floor);
    let mut start = DVector::zeros(p + 1);
    start.rows_mut(0, p).copy_from_slice(beta_start);
    start[p] = alpha0.ln();

    let opt = maximize(
        "negbin",
        start,
        |t| negbin_loglik(design, &t.as_slice()[..p], t[p]),
        |t| negbin_gradient_hessian(design, &t.as_slice()[..p], t[p]),
        opts,
    )?;
    check_divergence(design, &opt.theta.as_slice()[..p], opts.grad_tol)?;

    let se = std_errors(&opt.hess);
    let rows = design
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| CoefRow::wald(name.clone(), opt.theta[j], se[j]))
        .collect();

    let ln_alpha = opt.theta[p];
    let ln_alpha_se = se[p];
    let ln_alpha_ci = (ln_alpha - Z_95 * ln_alpha_se, ln_alpha + Z_95 * ln_alpha_se);
    let alpha = ln_alpha.exp();
    Ok(FitResult {
        model: CountModel::Negbin,
        rows,
        log_likelihood: opt.ll,
        alpha: Some(AlphaEstimate {
            ln_alpha,
            ln_alpha_se,
            ln_alpha_ci,
            alpha,
            alpha_se: alpha * ln_alpha_se,
            alpha_ci: (ln_alpha_ci.0.exp(), ln_alpha_ci.1.exp()),
            at_boundary: alpha < opts.alpha_boundary,
        }),
        n_obs: design.n(),
        iterations: opt.trace.len() - 1,
        grad_max: opt.grad_max,
        trace: opt.trace,
        design_fingerprint: design.fingerprint(),
    })
}
