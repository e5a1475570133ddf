//! Iteratively reweighted least squares for weighted logistic likelihoods.
//!
//! Maximizes `sum_i w_i [y_i log p_i + (1 - y_i) log(1 - p_i)]` with
//! `p_i = logistic(x_i' beta)`. Case weights of one give the plain MLE;
//! sampling weights give the pseudo-likelihood maximizer. Each iteration is
//! a Newton step `(X' W X) delta = X' w (y - p)`, which from `beta = 0` is
//! exactly the classic adjusted-response first step.

use super::FitError;
use crate::data::DesignMatrix;
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct IrlsOptions<F> {
    /// Stop when the largest absolute coefficient change falls below this.
    pub coef_tol: F,
    /// ... or when the relative log-likelihood change falls below this.
    pub loglik_rel_tol: F,
    pub max_iterations: usize,
    /// Fitted probabilities within this distance of 0/1 count as saturated.
    pub separation_prob_tol: F,
    /// Coefficient sup-norm beyond which saturation is flagged immediately.
    pub separation_coef_norm: F,
}

impl<F: Scalar> Default for IrlsOptions<F> {
    fn default() -> Self {
        Self {
            coef_tol: F::cast(1e-8),
            loglik_rel_tol: F::cast(1e-10),
            max_iterations: 50,
            separation_prob_tol: F::cast(1e-10),
            separation_coef_norm: F::cast(1e4),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsFit<F> {
    pub coefficients: Vec<F>,
    /// `X' W X` at the solution, `W = diag(w_i p_i (1 - p_i))`.
    pub information: Matrix<F>,
    /// Fitted probabilities at the solution.
    pub fitted: Vec<F>,
    pub iterations: usize,
    pub log_likelihood: F,
}

#[inline]
fn logistic<F: Scalar>(eta: F) -> F {
    F::one() / (F::one() + (-eta).exp())
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus<F: Scalar>(eta: F) -> F {
    eta.max(F::zero()) + (-eta.abs()).exp().ln_1p()
}

struct State<F> {
    fitted: Vec<F>,
    log_likelihood: F,
}

fn evaluate<F: Scalar>(design: &DesignMatrix<F>, weights: &[F], beta: &[F]) -> State<F> {
    let n = design.n_rows();
    let mut fitted = Vec::with_capacity(n);
    let mut ll = F::zero();
    for i in 0..n {
        let e = dot(design.row(i), beta);
        fitted.push(logistic(e));
        ll += weights[i] * (design.y()[i] * e - softplus(e));
    }
    State { fitted, log_likelihood: ll }
}

fn information<F: Scalar>(design: &DesignMatrix<F>, weights: &[F], fitted: &[F]) -> Matrix<F> {
    let l = design.n_cols();
    let mut info = Matrix::zeros(l, l);
    for i in 0..design.n_rows() {
        let w = weights[i] * fitted[i] * (F::one() - fitted[i]);
        info.add_outer(w, design.row(i));
    }
    info
}

fn score<F: Scalar>(design: &DesignMatrix<F>, weights: &[F], fitted: &[F]) -> Vec<F> {
    let l = design.n_cols();
    let mut g = vec![F::zero(); l];
    for i in 0..design.n_rows() {
        let r = weights[i] * (design.y()[i] - fitted[i]);
        for (gj, &xj) in g.iter_mut().zip(design.row(i)) {
            *gj += r * xj;
        }
    }
    g
}

fn saturated<F: Scalar>(fitted: &[F], tol: F) -> bool {
    fitted.iter().any(|&p| p < tol || p > F::one() - tol)
}

fn sup_norm<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |acc, &x| acc.max(x.abs()))
}

/// Solve the weighted logistic likelihood equations.
///
/// Returns the maximizer and the weighted information matrix evaluated
/// there. `start` defaults to the zero vector.
pub fn irls_solve<F: Scalar>(
    design: &DesignMatrix<F>,
    case_weights: &[F],
    start: Option<&[F]>,
    opts: &IrlsOptions<F>,
) -> Result<IrlsFit<F>, FitError> {
    assert_eq!(case_weights.len(), design.n_rows(), "one case weight per row");
    let l = design.n_cols();
    let mut beta: Vec<F> = match start {
        Some(b) => {
            assert_eq!(b.len(), l);
            b.to_vec()
        }
        None => vec![F::zero(); l],
    };
    let mut state = evaluate(design, case_weights, &beta);
    let mut last_change = F::infinity();
    let mut converged_at = None;

    for iteration in 1..=opts.max_iterations {
        if saturated(&state.fitted, opts.separation_prob_tol)
            && sup_norm(&beta) > opts.separation_coef_norm
        {
            return Err(FitError::Separation { coef_norm: sup_norm(&beta).as_f64() });
        }

        let info = information(design, case_weights, &state.fitted);
        let g = score(design, case_weights, &state.fitted);
        let chol = info.cholesky(F::cast(1e-12)).map_err(|cols| FitError::RankDeficient {
            columns: cols.iter().map(|&j| design.labels()[j].to_string()).collect(),
        })?;
        let delta = chol.solve(&g);

        // Step halving guards against early overshoot; near the optimum the
        // full Newton step always passes.
        let mut step = F::one();
        let mut candidate;
        let mut new_state;
        let slack = F::cast(1e-10) * (state.log_likelihood.abs() + F::one());
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&delta).map(|(&b, &d)| b + step * d).collect::<Vec<F>>();
            new_state = evaluate(design, case_weights, &candidate);
            if new_state.log_likelihood >= state.log_likelihood - slack || halvings >= 30 {
                break;
            }
            step *= F::cast(0.5);
            halvings += 1;
        }

        last_change = beta
            .iter()
            .zip(&candidate)
            .fold(F::zero(), |acc, (&old, &new)| acc.max((new - old).abs()));
        let ll_change = (new_state.log_likelihood - state.log_likelihood).abs();
        let ll_scale = new_state.log_likelihood.abs() + F::cast(0.1);
        beta = candidate;
        state = new_state;

        if last_change < opts.coef_tol || ll_change / ll_scale < opts.loglik_rel_tol {
            converged_at = Some(iteration);
            break;
        }
    }

    // Saturated probabilities at exit are the separation signature. Under
    // complete separation the likelihood flattens toward zero (tripping the
    // relative-change rule) while the iterates drift by O(1) per step, so a
    // coefficient-norm guard alone cannot fire within the iteration budget.
    if saturated(&state.fitted, opts.separation_prob_tol) {
        return Err(FitError::Separation { coef_norm: sup_norm(&beta).as_f64() });
    }
    match converged_at {
        Some(iteration) => {
            let info = information(design, case_weights, &state.fitted);
            Ok(IrlsFit {
                coefficients: beta,
                information: info,
                fitted: state.fitted,
                iterations: iteration,
                log_likelihood: state.log_likelihood,
            })
        }
        None => Err(FitError::NotConverged {
            iterations: opts.max_iterations,
            last_change: last_change.as_f64(),
            last_coefficients: beta.iter().map(|&b| b.as_f64()).collect(),
        }),
    }
}
