//! Coefficient estimation for complex survey logistic regression.
//!
//! Three sample-based methods are implemented against a finite-population
//! truth fit:
//!
//! * `fit_m1` - unweighted maximum likelihood,
//! * `fit_m2` - design-weighted pseudo-likelihood with Taylor-linearized
//!   (sandwich) variance,
//! * `fit_m3` - unweighted random-intercept mixed model via Laplace
//!   approximation, with population-averaged coefficients obtained by the
//!   logistic attenuation formula.

mod irls;
mod mixed;
mod variance;

pub use irls::{irls_solve, IrlsFit, IrlsOptions};
pub use mixed::{
    attenuation_constant, fit_m3, fit_m3_with, laplace_gradient, laplace_log_likelihood,
    marginalize, MixedFitResult, MixedOptions,
};
pub use variance::linearized_variance;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::data::{
    build_design_matrix, CoefLabel, DataError, DesignMatrix, FinitePopulation, ModelFormula,
    SurveySample,
};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("design matrix is rank deficient; dependent columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("no convergence within {iterations} iterations (last max coefficient change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64, last_coefficients: Vec<f64> },
    #[error("complete separation detected: fitted probabilities at the boundary with coefficient norm {coef_norm:.3e}")]
    Separation { coef_norm: f64 },
    #[error("stratum {stratum} has a single sampled unit; within-stratum variance is undefined")]
    SingletonStratum { stratum: u64 },
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("inner mode search for stratum {stratum} did not converge in {iterations} iterations")]
    InnerModeSearch { stratum: u64, iterations: usize },
    #[error("outer optimizer used {evaluations} gradient evaluations without reaching gradient norm {target:e} (reached {reached:e})")]
    OuterNotConverged { evaluations: usize, target: f64, reached: f64 },
    #[error("mixed model needs at least 2 strata, found {found}")]
    TooFewStrata { found: usize },
    #[error("variance component must be nonnegative, found {value}")]
    NegativeVarianceComponent { value: f64 },
    #[error("coefficient `{label}` has zero standard error")]
    ZeroStandardError { label: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which estimator produced a [`FitResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    M1,
    M2,
    Truth,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitMethod::M1 => write!(f, "M1"),
            FitMethod::M2 => write!(f, "M2"),
            FitMethod::Truth => write!(f, "TRUTH"),
        }
    }
}

/// Labelled coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector<F> {
    pub labels: Vec<CoefLabel>,
    pub values: Vec<F>,
}

impl<F: Scalar> CoefficientVector<F> {
    pub fn new(labels: Vec<CoefLabel>, values: Vec<F>) -> Self {
        assert_eq!(labels.len(), values.len());
        Self { labels, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A fitted (pseudo-)likelihood logistic model.
#[derive(Debug, Clone)]
pub struct FitResult<F> {
    pub method: FitMethod,
    pub coefficients: CoefficientVector<F>,
    pub covariance: Matrix<F>,
    pub std_errors: Vec<F>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: F,
}

fn std_errors_from_covariance<F: Scalar>(covariance: &Matrix<F>) -> Vec<F> {
    covariance.diagonal().iter().map(|&v| v.max(F::zero()).sqrt()).collect()
}

fn labelled_rank_error<F: Scalar>(design: &DesignMatrix<F>, columns: &[usize]) -> FitError {
    FitError::RankDeficient {
        columns: columns.iter().map(|&j| design.labels()[j].to_string()).collect(),
    }
}

/// Finite-population truth fit: unweighted maximum likelihood over all N
/// units of the population.
pub fn fit_truth<F: Scalar>(
    population: &FinitePopulation,
    formula: &ModelFormula,
) -> Result<FitResult<F>, FitError> {
    let design: DesignMatrix<F> = build_design_matrix(population, formula)?;
    let weights = vec![F::one(); design.n_rows()];
    fit_unweighted(design, weights, FitMethod::Truth)
}

/// M1: unweighted logistic regression on the sample.
pub fn fit_m1<F: Scalar>(
    sample: &SurveySample<F>,
    formula: &ModelFormula,
) -> Result<FitResult<F>, FitError> {
    let design: DesignMatrix<F> = build_design_matrix(sample, formula)?;
    let weights = vec![F::one(); design.n_rows()];
    fit_unweighted(design, weights, FitMethod::M1)
}

fn fit_unweighted<F: Scalar>(
    design: DesignMatrix<F>,
    weights: Vec<F>,
    method: FitMethod,
) -> Result<FitResult<F>, FitError> {
    let fit = irls_solve(&design, &weights, None, &IrlsOptions::default())?;
    let covariance = fit
        .information
        .cholesky(F::cast(1e-12))
        .map_err(|cols| labelled_rank_error(&design, &cols))?
        .inverse();
    let std_errors = std_errors_from_covariance(&covariance);
    Ok(FitResult {
        method,
        coefficients: CoefficientVector::new(design.labels().to_vec(), fit.coefficients),
        covariance,
        std_errors,
        iterations: fit.iterations,
        converged: true,
        log_likelihood: fit.log_likelihood,
    })
}

/// M2: design-weighted pseudo-likelihood fit. The covariance is the
/// stratified Taylor-linearization sandwich; finite-population corrections
/// apply when `population_sizes` is supplied.
pub fn fit_m2<F: Scalar>(
    sample: &SurveySample<F>,
    formula: &ModelFormula,
    population_sizes: Option<&BTreeMap<u64, u64>>,
) -> Result<FitResult<F>, FitError> {
    let design: DesignMatrix<F> = build_design_matrix(sample, formula)?;
    let fit = irls_solve(&design, sample.weights(), None, &IrlsOptions::default())?;
    let covariance = linearized_variance(sample, &design, &fit.coefficients, population_sizes)?;
    let std_errors = std_errors_from_covariance(&covariance);
    Ok(FitResult {
        method: FitMethod::M2,
        coefficients: CoefficientVector::new(design.labels().to_vec(), fit.coefficients),
        covariance,
        std_errors,
        iterations: fit.iterations,
        converged: true,
        log_likelihood: fit.log_likelihood,
    })
}

/// One Wald row: estimate, standard error and their ratio.
#[derive(Debug, Clone)]
pub struct WaldStatistic<F> {
    pub label: CoefLabel,
    pub estimate: F,
    pub std_error: F,
    pub z: F,
}

/// Elementwise estimate/SE ratios.
pub fn wald_statistics<F: Scalar>(fit: &FitResult<F>) -> Result<Vec<WaldStatistic<F>>, FitError> {
    fit.coefficients
        .labels
        .iter()
        .zip(fit.coefficients.values.iter().zip(&fit.std_errors))
        .map(|(label, (&estimate, &se))| {
            if se <= F::zero() {
                return Err(FitError::ZeroStandardError { label: label.to_string() });
            }
            Ok(WaldStatistic { label: label.clone(), estimate, std_error: se, z: estimate / se })
        })
        .collect()
}

/// Render a fit as `label,estimate,se,z` CSV.
pub fn fit_to_csv<F: Scalar>(fit: &FitResult<F>) -> String {
    let mut out = String::from("label,estimate,se,z\n");
    for ((label, &estimate), &se) in
        fit.coefficients.labels.iter().zip(&fit.coefficients.values).zip(&fit.std_errors)
    {
        let z = if se > F::zero() { estimate / se } else { F::nan() };
        out.push_str(&format!("{label},{estimate},{se},{z}\n"));
    }
    out
}

pub fn write_fit_csv<F: Scalar>(
    path: impl AsRef<Path>,
    fit: &FitResult<F>,
) -> Result<(), FitError> {
    std::fs::write(path.as_ref(), fit_to_csv(fit)).map_err(|source| {
        FitError::Data(DataError::Io { path: path.as_ref().display().to_string(), source })
    })
}

/// Render a mixed fit: marginal rows first, then conditional (`gamma:`)
/// rows and the `sigma2_u` metadata row.
pub fn mixed_fit_to_csv<F: Scalar>(fit: &MixedFitResult<F>) -> String {
    let mut out = String::from("label,estimate,se,z\n");
    for ((label, &estimate), &se) in
        fit.beta_marginal.labels.iter().zip(&fit.beta_marginal.values).zip(&fit.se_marginal)
    {
        let z = if se > F::zero() { estimate / se } else { F::nan() };
        out.push_str(&format!("{label},{estimate},{se},{z}\n"));
    }
    for ((label, &estimate), &se) in
        fit.gamma.labels.iter().zip(&fit.gamma.values).zip(&fit.se_gamma)
    {
        let z = if se > F::zero() { estimate / se } else { F::nan() };
        out.push_str(&format!("gamma:{label},{estimate},{se},{z}\n"));
    }
    out.push_str(&format!("sigma2_u,{},,\n", fit.sigma2_u));
    out
}

pub fn write_mixed_fit_csv<F: Scalar>(
    path: impl AsRef<Path>,
    fit: &MixedFitResult<F>,
) -> Result<(), FitError> {
    std::fs::write(path.as_ref(), mixed_fit_to_csv(fit)).map_err(|source| {
        FitError::Data(DataError::Io { path: path.as_ref().display().to_string(), source })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::{simple_schema, unit};
    use crate::data::CovariateSchema;

    pub(crate) fn intercept_only_sample(
        ys: &[u8],
        weights: &[f64],
    ) -> (SurveySample<f64>, ModelFormula) {
        let schema = simple_schema(2);
        let units =
            ys.iter().enumerate().map(|(i, &y)| unit(i as u64 + 1, 1, y, (i % 2) as u32)).collect();
        let sample = SurveySample::new(schema, units, weights.to_vec()).unwrap();
        let formula = ModelFormula::parse("y ~ 1", sample.schema()).unwrap();
        (sample, formula)
    }

    #[test]
    fn m1_intercept_only_balanced() {
        let (sample, formula) = intercept_only_sample(&[1, 0], &[1.0, 1.0]);
        let fit = fit_m1(&sample, &formula).unwrap();
        assert!(fit.coefficients.values[0].abs() < 1e-12);
    }

    #[test]
    fn m1_intercept_only_standard_error() {
        let (sample, formula) = intercept_only_sample(&[1, 1, 0, 0], &[1.0; 4]);
        let fit = fit_m1(&sample, &formula).unwrap();
        assert!(fit.coefficients.values[0].abs() < 1e-10);
        assert!((fit.std_errors[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truth_equals_census_m1() {
        let schema = simple_schema(2);
        let units: Vec<_> = (0..40)
            .map(|i| unit(i + 1, 1 + (i % 4), ((i * 3) % 5 < 2) as u8, (i % 2) as u32))
            .collect();
        let population = FinitePopulation::new(schema.clone(), units.clone()).unwrap();
        let sample = SurveySample::new(schema, units, vec![1.0; 40]).unwrap();
        let formula = ModelFormula::parse("y ~ x1", population.schema()).unwrap();
        let truth: FitResult<f64> = fit_truth(&population, &formula).unwrap();
        let m1 = fit_m1(&sample, &formula).unwrap();
        assert_eq!(truth.coefficients.values, m1.coefficients.values);
        assert_eq!(truth.method, FitMethod::Truth);
    }

    #[test]
    fn m2_weighted_intercept_matches_closed_form() {
        let (sample, formula) = intercept_only_sample(&[1, 0], &[3.0, 1.0]);
        let fit = fit_m2(&sample, &formula, None).unwrap();
        assert!((fit.coefficients.values[0] - 3.0_f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn wald_ratios() {
        let (sample, formula) = intercept_only_sample(&[1, 1, 1, 0], &[1.0; 4]);
        let fit = fit_m1(&sample, &formula).unwrap();
        let wald = wald_statistics(&fit).unwrap();
        assert_eq!(wald.len(), 1);
        let expected = fit.coefficients.values[0] / fit.std_errors[0];
        assert_eq!(wald[0].z, expected);
    }

    #[test]
    fn wald_hand_computed_ratio() {
        // -2.482 / 0.133 = -18.66...
        let z = -2.482_f64 / 0.133;
        assert!((z - (-18.661654135338347)).abs() < 1e-12);
    }

    #[test]
    fn wald_direct_ratios_and_zero_se_error() {
        let fit = FitResult {
            method: FitMethod::M1,
            coefficients: CoefficientVector::new(
                vec![
                    CoefLabel::Intercept,
                    CoefLabel::Dummy { covariate: "x1".into(), level: "2".into() },
                ],
                vec![2.0, 0.0],
            ),
            covariance: crate::linalg::Matrix::zeros(2, 2),
            std_errors: vec![0.5, 1.0],
            iterations: 1,
            converged: true,
            log_likelihood: -1.0,
        };
        let wald = wald_statistics(&fit).unwrap();
        assert_eq!(wald[0].z, 4.0);
        assert_eq!(wald[1].z, 0.0);

        let degenerate = FitResult { std_errors: vec![0.0, 1.0], ..fit };
        assert!(matches!(wald_statistics(&degenerate), Err(FitError::ZeroStandardError { .. })));
    }

    #[test]
    fn truth_fit_on_null_population_is_near_zero() {
        // y alternates independently of the covariate: every unit has
        // p = 1/2, so all coefficients shrink toward zero
        let schema = simple_schema(3);
        let units: Vec<_> = (0..3000)
            .map(|i| unit(i + 1, 1 + (i % 5), (i % 2) as u8, ((i / 2) % 3) as u32))
            .collect();
        let population = FinitePopulation::new(schema, units).unwrap();
        let formula = ModelFormula::parse("y ~ x1", population.schema()).unwrap();
        let truth: FitResult<f64> = fit_truth(&population, &formula).unwrap();
        for &value in &truth.coefficients.values {
            assert!(value.abs() < 0.01, "coefficient {value} not near zero");
        }
    }

    #[test]
    fn mixed_fit_csv_carries_both_scales_and_sigma() {
        let schema = simple_schema(2);
        let units: Vec<_> = (0..40)
            .map(|i| unit(i + 1, 1 + (i % 4), ((i * 3) % 5 < 2) as u8, (i % 2) as u32))
            .collect();
        let sample = SurveySample::new(schema, units, vec![1.0; 40]).unwrap();
        let formula = ModelFormula::parse("y ~ x1", sample.schema()).unwrap();
        let fit = crate::estimators::fit_m3(&sample, &formula).unwrap();
        let csv = mixed_fit_to_csv(&fit);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("label,estimate,se,z"));
        assert!(csv.contains("\ngamma:intercept,"));
        assert!(csv.contains("\ngamma:x1=2,"));
        assert!(csv.lines().last().unwrap().starts_with("sigma2_u,"));
        // marginal rows precede the conditional block
        let body: Vec<&str> = csv.lines().collect();
        assert!(body[1].starts_with("intercept,"));
    }

    #[test]
    fn fit_csv_layout() {
        let (sample, formula) = intercept_only_sample(&[1, 1, 0, 0], &[1.0; 4]);
        let fit = fit_m1(&sample, &formula).unwrap();
        let csv = fit_to_csv(&fit);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("label,estimate,se,z"));
        assert!(lines.next().unwrap().starts_with("intercept,"));
    }

    #[test]
    fn separation_is_detected() {
        // y perfectly predicted by the x1 dummy
        let schema = simple_schema(2);
        let units: Vec<_> =
            (0..20).map(|i| unit(i + 1, 1, (i % 2) as u8, (i % 2) as u32)).collect();
        let sample = SurveySample::new(schema, units, vec![1.0; 20]).unwrap();
        let formula = ModelFormula::parse("y ~ x1", sample.schema()).unwrap();
        let err = fit_m1(&sample, &formula).unwrap_err();
        assert!(matches!(err, FitError::Separation { .. }), "got {err}");
    }

    #[test]
    fn empty_level_error_propagates() {
        let schema: CovariateSchema = simple_schema(3);
        let units = vec![unit(1, 1, 1, 0), unit(2, 1, 0, 1), unit(3, 1, 1, 1), unit(4, 1, 0, 0)];
        let sample = SurveySample::new(schema, units, vec![1.0; 4]).unwrap();
        let formula = ModelFormula::parse("y ~ x1", sample.schema()).unwrap();
        let err = fit_m1(&sample, &formula).unwrap_err();
        assert!(matches!(err, FitError::Data(DataError::EmptyLevel { .. })));
    }
}
