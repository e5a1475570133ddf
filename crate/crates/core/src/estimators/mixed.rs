//! Random-intercept logistic mixed model (M3).
//!
//! The marginal likelihood integrates a per-stratum N(0, sigma_u^2)
//! intercept out of the logistic likelihood. Each stratum integral is
//! approximated by Laplace's method around the conditional mode `u_h`,
//! giving the per-stratum contribution
//!
//! ```text
//! log f(y_h | u_h) - u_h^2 / (2 sigma^2) - 0.5 * log(1 + sigma^2 * J_h)
//! ```
//!
//! with `J_h = sum_i p_i (1 - p_i)` at the mode (the 2*pi factors of the
//! Gaussian prior and of the Laplace integral cancel). The outer surface is
//! maximized over `(gamma, theta = log sigma_u)` by BFGS with numerical
//! gradients; conditional coefficients are converted to population-averaged
//! ones by the logistic attenuation factor `sqrt(1 + c^2 sigma_u^2)`,
//! `c = 16 sqrt(3) / (15 pi)`.

use std::collections::BTreeMap;

use super::{irls_solve, CoefficientVector, FitError, IrlsOptions};
use crate::data::{build_design_matrix, DesignMatrix, ModelFormula, SurveySample};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct MixedOptions<F> {
    /// Inner mode-search tolerance on the random-effect step.
    pub inner_tol: F,
    pub inner_max_iterations: usize,
    /// Outer convergence: sup-norm of the numerical gradient.
    pub gradient_tol: F,
    /// Budget of outer gradient evaluations.
    pub max_gradient_evals: usize,
    /// Below this the variance component is reported as exactly zero.
    pub boundary_sigma2: F,
    /// Central-difference step scale for gradients.
    pub gradient_step: F,
    /// Central-difference step scale for the covariance Hessian.
    pub hessian_step: F,
    /// Skip the numerical-Hessian covariance (used by the simulation
    /// harness, which only consumes point estimates).
    pub compute_covariance: bool,
}

impl<F: Scalar> Default for MixedOptions<F> {
    fn default() -> Self {
        Self {
            inner_tol: F::cast(1e-10),
            inner_max_iterations: 100,
            gradient_tol: F::cast(1e-6),
            max_gradient_evals: 200,
            boundary_sigma2: F::cast(1e-10),
            gradient_step: F::cast(1e-5),
            hessian_step: F::cast(1e-4),
            compute_covariance: true,
        }
    }
}

/// Fitted random-intercept model.
#[derive(Debug, Clone)]
pub struct MixedFitResult<F> {
    /// Conditional (stratum-specific) coefficients.
    pub gamma: CoefficientVector<F>,
    /// Variance component of the random intercept.
    pub sigma2_u: F,
    /// Population-averaged coefficients `gamma / sqrt(1 + c^2 sigma2)`.
    pub beta_marginal: CoefficientVector<F>,
    /// Predicted random effects per stratum (conditional modes).
    pub random_effects: BTreeMap<u64, F>,
    /// Covariance of `gamma`; `None` only when explicitly skipped.
    pub covariance_gamma: Option<Matrix<F>>,
    /// Conditional-scale standard errors.
    pub se_gamma: Vec<F>,
    /// Delta-method marginal-scale standard errors (sigma2 treated fixed).
    pub se_marginal: Vec<F>,
    pub iterations: usize,
    pub gradient_evaluations: usize,
    pub converged: bool,
    /// True when the variance component was driven to the zero boundary.
    pub boundary: bool,
    pub log_likelihood: F,
}

/// `c = 16 sqrt(3) / (15 pi)`.
pub fn attenuation_constant<F: Scalar>() -> F {
    F::cast(16.0) * F::cast(3.0).sqrt() / (F::cast(15.0) * F::PI())
}

/// Convert conditional coefficients to population-averaged ones.
pub fn marginalize<F: Scalar>(
    gamma: &CoefficientVector<F>,
    sigma2_u: F,
) -> Result<CoefficientVector<F>, FitError> {
    if sigma2_u < F::zero() {
        return Err(FitError::NegativeVarianceComponent { value: sigma2_u.as_f64() });
    }
    let c = attenuation_constant::<F>();
    let factor = (F::one() + c * c * sigma2_u).sqrt();
    Ok(CoefficientVector::new(
        gamma.labels.clone(),
        gamma.values.iter().map(|&g| g / factor).collect(),
    ))
}

#[inline]
fn logistic<F: Scalar>(eta: F) -> F {
    F::one() / (F::one() + (-eta).exp())
}

#[inline]
fn softplus<F: Scalar>(eta: F) -> F {
    eta.max(F::zero()) + (-eta.abs()).exp().ln_1p()
}

struct LaplaceModel<'a, F> {
    design: &'a DesignMatrix<F>,
    groups: Vec<(u64, Vec<usize>)>,
    inner_tol: F,
    inner_max_iterations: usize,
}

impl<'a, F: Scalar> LaplaceModel<'a, F> {
    fn new(
        design: &'a DesignMatrix<F>,
        strata: &[u64],
        inner_tol: F,
        inner_max_iterations: usize,
    ) -> Self {
        assert_eq!(strata.len(), design.n_rows(), "one stratum id per design row");
        let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (row, &stratum) in strata.iter().enumerate() {
            map.entry(stratum).or_default().push(row);
        }
        Self { design, groups: map.into_iter().collect(), inner_tol, inner_max_iterations }
    }

    fn linear_predictor(&self, gamma: &[F]) -> Vec<F> {
        (0..self.design.n_rows()).map(|i| dot(self.design.row(i), gamma)).collect()
    }

    /// Conditional log-likelihood, score and curvature of one stratum at
    /// random effect `u`.
    fn stratum_terms(&self, rows: &[usize], base: &[F], u: F) -> (F, F, F) {
        let mut ll = F::zero();
        let mut score = F::zero();
        let mut curvature = F::zero();
        for &i in rows {
            let eta = base[i] + u;
            let p = logistic(eta);
            let y = self.design.y()[i];
            ll += y * eta - softplus(eta);
            score += y - p;
            curvature += p * (F::one() - p);
        }
        (ll, score, curvature)
    }

    /// Mode of the per-stratum integrand by safeguarded Newton.
    fn stratum_mode(
        &self,
        stratum: u64,
        rows: &[usize],
        base: &[F],
        sigma2: F,
    ) -> Result<F, FitError> {
        let inv_sigma2 = F::one() / sigma2;
        let mut u = F::zero();
        let mut lower: Option<F> = None;
        let mut upper: Option<F> = None;
        for _ in 0..self.inner_max_iterations {
            let (_, score, curvature) = self.stratum_terms(rows, base, u);
            let grad = score - u * inv_sigma2;
            if grad > F::zero() {
                lower = Some(u);
            } else {
                upper = Some(u);
            }
            let step = grad / (curvature + inv_sigma2);
            let mut next = u + step;
            if let (Some(lo), Some(hi)) = (lower, upper) {
                if next <= lo || next >= hi {
                    next = (lo + hi) * F::cast(0.5);
                }
            }
            if (next - u).abs() < self.inner_tol {
                return Ok(next);
            }
            u = next;
        }
        Err(FitError::InnerModeSearch { stratum, iterations: self.inner_max_iterations })
    }

    /// Laplace log-likelihood and conditional modes at `(gamma, sigma2)`.
    fn log_likelihood(&self, gamma: &[F], sigma2: F) -> Result<(F, Vec<F>), FitError> {
        if sigma2 < F::zero() {
            return Err(FitError::NegativeVarianceComponent { value: sigma2.as_f64() });
        }
        let base = self.linear_predictor(gamma);
        let mut total = F::zero();
        let mut modes = Vec::with_capacity(self.groups.len());
        for (stratum, rows) in &self.groups {
            if sigma2 == F::zero() {
                let (ll, _, _) = self.stratum_terms(rows, &base, F::zero());
                total += ll;
                modes.push(F::zero());
                continue;
            }
            let u = self.stratum_mode(*stratum, rows, &base, sigma2)?;
            let (ll, _, curvature) = self.stratum_terms(rows, &base, u);
            let contribution =
                ll - u * u / (sigma2 + sigma2) - F::cast(0.5) * (sigma2 * curvature).ln_1p();
            total += contribution;
            modes.push(u);
        }
        Ok((total, modes))
    }
}

/// Laplace-approximated log-likelihood at fixed `(gamma, sigma2_u)`.
///
/// `strata[i]` is the stratum of design row `i`. This is the same evaluator
/// the M3 optimizer maximizes.
pub fn laplace_log_likelihood<F: Scalar>(
    design: &DesignMatrix<F>,
    strata: &[u64],
    gamma: &[F],
    sigma2_u: F,
) -> Result<F, FitError> {
    let opts = MixedOptions::<F>::default();
    let model = LaplaceModel::new(design, strata, opts.inner_tol, opts.inner_max_iterations);
    Ok(model.log_likelihood(gamma, sigma2_u)?.0)
}

/// The numerical gradient of the Laplace log-likelihood in the optimizer's
/// parameterization `(gamma, theta = log sigma_u)`, exactly as the outer
/// BFGS consumes it: central differences with per-coordinate step
/// `gradient_step * (1 + |x_j|)`.
pub fn laplace_gradient<F: Scalar>(
    design: &DesignMatrix<F>,
    strata: &[u64],
    gamma: &[F],
    theta: F,
) -> Result<Vec<F>, FitError> {
    let opts = MixedOptions::<F>::default();
    let model = LaplaceModel::new(design, strata, opts.inner_tol, opts.inner_max_iterations);
    let mut x: Vec<F> = gamma.to_vec();
    x.push(theta);
    let objective = |x: &[F]| -> Result<F, FitError> {
        let (gamma, theta) = split_params(x);
        let sigma2 = (theta + theta).exp();
        Ok(model.log_likelihood(gamma, sigma2)?.0)
    };
    central_gradient(&objective, &x, opts.gradient_step)
}

fn split_params<F: Scalar>(x: &[F]) -> (&[F], F) {
    let (theta, gamma) = x.split_last().expect("nonempty parameter vector");
    (gamma, *theta)
}

fn central_gradient<F: Scalar>(
    objective: &dyn Fn(&[F]) -> Result<F, FitError>,
    x: &[F],
    step_scale: F,
) -> Result<Vec<F>, FitError> {
    let mut grad = Vec::with_capacity(x.len());
    let mut point = x.to_vec();
    for j in 0..x.len() {
        let h = step_scale * (F::one() + x[j].abs());
        point[j] = x[j] + h;
        let up = objective(&point)?;
        point[j] = x[j] - h;
        let down = objective(&point)?;
        point[j] = x[j];
        grad.push((up - down) / (h + h));
    }
    Ok(grad)
}

fn sup_norm<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |acc, &x| acc.max(x.abs()))
}

struct BfgsOutcome<F> {
    x: Vec<F>,
    iterations: usize,
    gradient_evaluations: usize,
}

/// Minimize `objective` by BFGS with numerical gradients.
///
/// Once the gradient is small, iterations switch to damped Newton steps on
/// the numerical Hessian: the quasi-Newton model crawls along the nearly
/// flat `theta` direction that appears when the variance component heads
/// for its zero boundary, while true curvature steps walk it down at a
/// constant rate. A Hessian costs as much as `dim` gradients and is
/// budgeted accordingly.
fn bfgs_minimize<F: Scalar>(
    objective: &dyn Fn(&[F]) -> Result<F, FitError>,
    start: Vec<F>,
    opts: &MixedOptions<F>,
) -> Result<BfgsOutcome<F>, FitError> {
    let dim = start.len();
    let mut x = start;
    let mut fx = objective(&x)?;
    let mut grad = central_gradient(objective, &x, opts.gradient_step)?;
    let mut gradient_evaluations = 1;
    let mut inv_hessian = Matrix::zeros(dim, dim);
    for i in 0..dim {
        inv_hessian.set(i, i, F::one());
    }
    let polish_trigger = opts.gradient_tol * F::cast(1e3);

    let mut iterations = 0;
    loop {
        if sup_norm(&grad) <= opts.gradient_tol {
            return Ok(BfgsOutcome { x, iterations, gradient_evaluations });
        }
        if gradient_evaluations >= opts.max_gradient_evals {
            return Err(FitError::OuterNotConverged {
                evaluations: gradient_evaluations,
                target: opts.gradient_tol.as_f64(),
                reached: sup_norm(&grad).as_f64(),
            });
        }
        iterations += 1;

        let mut direction: Vec<F> = Vec::new();
        if sup_norm(&grad) <= polish_trigger {
            if let Some(hessian) = numerical_hessian(objective, &x, opts.hessian_step) {
                gradient_evaluations += dim;
                if let Ok(chol) = hessian.cholesky(F::cast(1e-12)) {
                    let newton: Vec<F> = chol.solve(&grad).iter().map(|&v| -v).collect();
                    if dot(&newton, &grad) < F::zero() {
                        direction = newton;
                    }
                }
            }
        }
        if direction.is_empty() {
            direction = inv_hessian.matvec(&grad).iter().map(|&v| -v).collect();
        }
        let mut slope = dot(&direction, &grad);
        if !(slope < F::zero()) {
            // Curvature information went stale; restart from steepest descent.
            inv_hessian = Matrix::zeros(dim, dim);
            for i in 0..dim {
                inv_hessian.set(i, i, F::one());
            }
            direction = grad.iter().map(|&g| -g).collect();
            slope = dot(&direction, &grad);
        }

        // Backtracking Armijo line search; evaluation failures (overflowed
        // variance proposals, inner search breakdown) just shrink the step.
        let c1 = F::cast(1e-4);
        let mut t = F::one();
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<F> =
                x.iter().zip(&direction).map(|(&xi, &di)| xi + t * di).collect();
            match objective(&candidate) {
                Ok(fc) if fc.is_finite() && fc <= fx + c1 * t * slope => {
                    accepted = Some((candidate, fc));
                    break;
                }
                _ => t *= F::cast(0.5),
            }
        }
        let Some((x_new, f_new)) = accepted else {
            // No acceptable step along this direction; report where we got.
            return Err(FitError::OuterNotConverged {
                evaluations: gradient_evaluations,
                target: opts.gradient_tol.as_f64(),
                reached: sup_norm(&grad).as_f64(),
            });
        };

        let grad_new = central_gradient(objective, &x_new, opts.gradient_step)?;
        gradient_evaluations += 1;

        let s: Vec<F> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<F> = grad_new.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        let curvature_floor = F::cast(1e-12) * sup_norm(&s) * sup_norm(&y);
        if sy > curvature_floor {
            // Inverse BFGS update.
            let by = inv_hessian.matvec(&y);
            let yby = dot(&y, &by);
            let alpha = (sy + yby) / (sy * sy);
            let inv_sy = F::one() / sy;
            for i in 0..dim {
                for j in 0..dim {
                    let update = alpha * s[i] * s[j] - (by[i] * s[j] + s[i] * by[j]) * inv_sy;
                    inv_hessian.add_at(i, j, update);
                }
            }
        }
        x = x_new;
        fx = f_new;
        grad = grad_new;
    }
}

/// Fit the random-intercept model with default options.
pub fn fit_m3<F: Scalar>(
    sample: &SurveySample<F>,
    formula: &ModelFormula,
) -> Result<MixedFitResult<F>, FitError> {
    fit_m3_with(sample, formula, &MixedOptions::default())
}

/// Fit the random-intercept model with explicit options.
pub fn fit_m3_with<F: Scalar>(
    sample: &SurveySample<F>,
    formula: &ModelFormula,
    opts: &MixedOptions<F>,
) -> Result<MixedFitResult<F>, FitError> {
    let n_strata = sample.stratum_index().len();
    if n_strata < 2 {
        return Err(FitError::TooFewStrata { found: n_strata });
    }
    let design: DesignMatrix<F> = build_design_matrix(sample, formula)?;
    let strata = sample.strata();
    let model = LaplaceModel::new(&design, &strata, opts.inner_tol, opts.inner_max_iterations);
    let l = design.n_cols();

    // Conditional coefficients start at the plain MLE when it exists.
    let unit_weights = vec![F::one(); design.n_rows()];
    let start_gamma = irls_solve(&design, &unit_weights, None, &IrlsOptions::default())
        .map(|fit| fit.coefficients)
        .unwrap_or_else(|_| vec![F::zero(); l]);
    let mut start = start_gamma;
    start.push(F::cast(0.5).ln()); // sigma_u = 0.5

    let objective = |x: &[F]| -> Result<F, FitError> {
        let (gamma, theta) = split_params(x);
        let sigma2 = (theta + theta).exp();
        Ok(-model.log_likelihood(gamma, sigma2)?.0)
    };

    let outcome = bfgs_minimize(&objective, start, opts)?;
    let (gamma_hat, theta_hat) = split_params(&outcome.x);
    let gamma_hat = gamma_hat.to_vec();
    let mut sigma2 = (theta_hat + theta_hat).exp();
    let boundary = sigma2 < opts.boundary_sigma2;
    if boundary {
        sigma2 = F::zero();
    }

    let (log_likelihood, modes) = model.log_likelihood(&gamma_hat, sigma2)?;
    let random_effects: BTreeMap<u64, F> =
        model.groups.iter().map(|(stratum, _)| *stratum).zip(modes).collect();

    let covariance_gamma = if opts.compute_covariance {
        Some(gamma_covariance(&model, &design, &gamma_hat, theta_hat, sigma2, boundary, opts)?)
    } else {
        None
    };
    let se_gamma: Vec<F> = covariance_gamma
        .as_ref()
        .map(|cov| cov.diagonal().iter().map(|&v| v.max(F::zero()).sqrt()).collect())
        .unwrap_or_default();

    let gamma = CoefficientVector::new(design.labels().to_vec(), gamma_hat);
    let beta_marginal = marginalize(&gamma, sigma2)?;
    let c = attenuation_constant::<F>();
    let factor = (F::one() + c * c * sigma2).sqrt();
    let se_marginal: Vec<F> = se_gamma.iter().map(|&se| se / factor).collect();

    Ok(MixedFitResult {
        gamma,
        sigma2_u: sigma2,
        beta_marginal,
        random_effects,
        covariance_gamma,
        se_gamma,
        se_marginal,
        iterations: outcome.iterations,
        gradient_evaluations: outcome.gradient_evaluations,
        converged: true,
        boundary,
        log_likelihood,
    })
}

/// Covariance of the conditional coefficients.
///
/// Away from the boundary this inverts the numerical Hessian over the full
/// `(gamma, theta)` parameterization and keeps the gamma block; if that
/// Hessian is not positive definite (a nearly flat theta direction) it falls
/// back to the gamma-only block. At the sigma2 = 0 boundary the model
/// degenerates to the plain logistic fit, whose information matrix is exact.
fn gamma_covariance<F: Scalar>(
    model: &LaplaceModel<'_, F>,
    design: &DesignMatrix<F>,
    gamma: &[F],
    theta: F,
    sigma2: F,
    boundary: bool,
    opts: &MixedOptions<F>,
) -> Result<Matrix<F>, FitError> {
    let l = design.n_cols();
    if boundary {
        let mut info = Matrix::zeros(l, l);
        for i in 0..design.n_rows() {
            let p = logistic(dot(design.row(i), gamma));
            info.add_outer(p * (F::one() - p), design.row(i));
        }
        return Ok(info
            .cholesky(F::cast(1e-12))
            .map_err(|_| FitError::SingularInformation)?
            .inverse());
    }

    let negated = |x: &[F]| -> Result<F, FitError> {
        let (g, th) = split_params(x);
        let s2 = (th + th).exp();
        Ok(-model.log_likelihood(g, s2)?.0)
    };
    let mut x: Vec<F> = gamma.to_vec();
    x.push(theta);
    if let Some(cov) = hessian_block_inverse(&negated, &x, l, opts.hessian_step) {
        return Ok(cov);
    }

    // Gamma-only fallback at fixed theta.
    let fixed = |g: &[F]| -> Result<F, FitError> { Ok(-model.log_likelihood(g, sigma2)?.0) };
    hessian_block_inverse(&fixed, gamma, l, opts.hessian_step).ok_or(FitError::SingularInformation)
}

/// Symmetric numerical Hessian of `f` at `x` by central differences, or
/// `None` when an evaluation fails.
fn numerical_hessian<F: Scalar>(
    f: &dyn Fn(&[F]) -> Result<F, FitError>,
    x: &[F],
    step_scale: F,
) -> Option<Matrix<F>> {
    let dim = x.len();
    let f0 = f(x).ok()?;
    let steps: Vec<F> = x.iter().map(|&xi| step_scale * (F::one() + xi.abs())).collect();
    let mut hessian = Matrix::zeros(dim, dim);
    let mut point = x.to_vec();
    for i in 0..dim {
        point[i] = x[i] + steps[i];
        let up = f(&point).ok()?;
        point[i] = x[i] - steps[i];
        let down = f(&point).ok()?;
        point[i] = x[i];
        hessian.set(i, i, (up - F::cast(2.0) * f0 + down) / (steps[i] * steps[i]));
    }
    for i in 0..dim {
        for j in 0..i {
            let mut corner = |si: F, sj: F| -> Option<F> {
                point[i] = x[i] + si;
                point[j] = x[j] + sj;
                let v = f(&point).ok()?;
                point[i] = x[i];
                point[j] = x[j];
                Some(v)
            };
            let pp = corner(steps[i], steps[j])?;
            let pm = corner(steps[i], -steps[j])?;
            let mp = corner(-steps[i], steps[j])?;
            let mm = corner(-steps[i], -steps[j])?;
            let value = (pp - pm - mp + mm) / (F::cast(4.0) * steps[i] * steps[j]);
            hessian.set(i, j, value);
            hessian.set(j, i, value);
        }
    }
    Some(hessian)
}

/// Invert the numerical Hessian of `f` at `x` and return its leading
/// `block x block` sub-matrix, or `None` if the Hessian is not PD.
fn hessian_block_inverse<F: Scalar>(
    f: &dyn Fn(&[F]) -> Result<F, FitError>,
    x: &[F],
    block: usize,
    step_scale: F,
) -> Option<Matrix<F>> {
    let hessian = numerical_hessian(f, x, step_scale)?;
    let inverse = hessian.cholesky(F::cast(1e-12)).ok()?.inverse();
    let mut out = Matrix::zeros(block, block);
    for i in 0..block {
        for j in 0..block {
            out.set(i, j, inverse.get(i, j));
        }
    }
    out.symmetrize();
    Some(out)
}
