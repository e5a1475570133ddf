//! Taylor-linearization (sandwich) variance for the pseudo-likelihood fit.
//!
//! `H^-1 V H^-1` with `H = sum_i w_i p_i (1-p_i) x_i x_i'` and `V` the
//! stratified estimate of the variance of the weighted score: per stratum,
//! `n_h/(n_h - 1) * (1 - n_h/N_h) * sum_i (z_i - zbar_h)(z_i - zbar_h)'`
//! with score residuals `z_i = w_i (y_i - p_i) x_i`. The finite-population
//! correction factor applies only when stratum sizes are supplied.

use std::collections::BTreeMap;

use super::FitError;
use crate::data::{DataError, DesignMatrix, SurveySample};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

pub fn linearized_variance<F: Scalar>(
    sample: &SurveySample<F>,
    design: &DesignMatrix<F>,
    beta: &[F],
    population_sizes: Option<&BTreeMap<u64, u64>>,
) -> Result<Matrix<F>, FitError> {
    let n = design.n_rows();
    assert_eq!(n, sample.size(), "design must come from this sample");
    let l = design.n_cols();
    let weights = sample.weights();

    // Fitted probabilities, H and per-unit score residuals at beta.
    let mut h = Matrix::zeros(l, l);
    let mut residuals: Vec<Vec<F>> = Vec::with_capacity(n);
    for i in 0..n {
        let eta = dot(design.row(i), beta);
        let p = F::one() / (F::one() + (-eta).exp());
        h.add_outer(weights[i] * p * (F::one() - p), design.row(i));
        let r = weights[i] * (design.y()[i] - p);
        residuals.push(design.row(i).iter().map(|&x| r * x).collect());
    }

    let mut v = Matrix::zeros(l, l);
    for (&stratum, positions) in sample.stratum_index() {
        let n_h = positions.len();
        if n_h < 2 {
            return Err(FitError::SingletonStratum { stratum });
        }
        let mut zbar = vec![F::zero(); l];
        for &pos in positions {
            for (acc, &z) in zbar.iter_mut().zip(&residuals[pos]) {
                *acc += z;
            }
        }
        let inv_n = F::one() / F::count(n_h);
        for acc in &mut zbar {
            *acc *= inv_n;
        }

        let fpc = match population_sizes {
            Some(sizes) => {
                let &cap = sizes
                    .get(&stratum)
                    .ok_or(FitError::Data(DataError::UnknownStratum { stratum }))?;
                F::one() - F::count(n_h) / F::count(cap as usize)
            }
            None => F::one(),
        };
        let factor = fpc * F::count(n_h) / F::count(n_h - 1);
        if factor == F::zero() {
            continue;
        }
        let mut centered = vec![F::zero(); l];
        for &pos in positions {
            for ((c, &z), &m) in centered.iter_mut().zip(&residuals[pos]).zip(&zbar) {
                *c = z - m;
            }
            v.add_outer(factor, &centered);
        }
    }

    let h_inv = h.cholesky(F::cast(1e-12)).map_err(|_| FitError::SingularInformation)?.inverse();
    let mut covariance = h_inv.matmul(&v).matmul(&h_inv);
    covariance.symmetrize();
    Ok(covariance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::{simple_schema, unit};
    use crate::data::{build_design_matrix, ModelFormula, SurveySample, UnitRecord};
    use crate::estimators::{irls_solve, IrlsOptions};

    fn sample_from(units: Vec<UnitRecord>, weights: Vec<f64>) -> SurveySample<f64> {
        SurveySample::new(simple_schema(2), units, weights).unwrap()
    }

    fn intercept_fit(sample: &SurveySample<f64>) -> (DesignMatrix<f64>, Vec<f64>) {
        let formula = ModelFormula::parse("y ~ 1", sample.schema()).unwrap();
        let design = build_design_matrix(sample, &formula).unwrap();
        let fit = irls_solve(&design, sample.weights(), None, &IrlsOptions::default()).unwrap();
        (design, fit.coefficients)
    }

    #[test]
    fn census_stratum_contributes_zero() {
        // stratum 1 is a census (n_h = N_h = 2): with only that stratum the
        // whole V collapses, so the covariance is exactly zero.
        let units = vec![unit(1, 1, 1, 0), unit(2, 1, 0, 1)];
        let sample = sample_from(units, vec![1.0, 1.0]);
        let (design, beta) = intercept_fit(&sample);
        let sizes: BTreeMap<u64, u64> = [(1, 2)].into();
        let cov = linearized_variance(&sample, &design, &beta, Some(&sizes)).unwrap();
        assert_eq!(cov.get(0, 0), 0.0);
    }

    #[test]
    fn identical_scores_within_strata_give_zero_variance() {
        // two strata, two units each, same (y, x, w) inside a stratum
        let units = vec![unit(1, 1, 1, 0), unit(2, 1, 1, 0), unit(3, 2, 0, 0), unit(4, 2, 0, 0)];
        let sample = sample_from(units, vec![2.0, 2.0, 3.0, 3.0]);
        let (design, beta) = intercept_fit(&sample);
        let cov = linearized_variance(&sample, &design, &beta, None).unwrap();
        assert!(cov.get(0, 0).abs() < 1e-24);
    }

    #[test]
    fn singleton_stratum_is_an_error() {
        let units = vec![unit(1, 1, 1, 0), unit(2, 1, 0, 1), unit(3, 2, 1, 0)];
        let sample = sample_from(units, vec![1.0, 1.0, 1.0]);
        let (design, beta) = intercept_fit(&sample);
        let err = linearized_variance(&sample, &design, &beta, None).unwrap_err();
        assert!(matches!(err, FitError::SingletonStratum { stratum: 2 }));
    }

    #[test]
    fn covariance_is_symmetric() {
        let units: Vec<_> = (0..30)
            .map(|i| unit(i + 1, 1 + (i % 3), ((i * 7) % 9 < 4) as u8, (i % 2) as u32))
            .collect();
        let weights: Vec<f64> = (0..30).map(|i| 1.0 + (i % 5) as f64).collect();
        let sample = SurveySample::new(simple_schema(2), units, weights).unwrap();
        let formula = ModelFormula::parse("y ~ x1", sample.schema()).unwrap();
        let design = build_design_matrix(&sample, &formula).unwrap();
        let fit = irls_solve(&design, sample.weights(), None, &IrlsOptions::default()).unwrap();
        let cov = linearized_variance(&sample, &design, &fit.coefficients, None).unwrap();
        assert!(cov.max_asymmetry() < 1e-10);
    }
}
