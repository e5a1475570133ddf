//! Logistic regression for complex survey data.
//!
//! The crate bundles the estimation methods usually compared on one-step
//! stratified designs - unweighted maximum likelihood (M1), design-weighted
//! pseudo-likelihood (M2) and an unweighted random-intercept mixed model
//! (M3) - together with the machinery to study them: pseudo-population
//! synthesis from a weighted sample, stratified sampling with `N_h / n_h`
//! weights, and a Monte-Carlo harness reporting per-coefficient bias and
//! MSE against the finite-population truth fit.
//!
//! Numeric code is generic over the [`scalar::Scalar`] float type; the
//! `*64` aliases below fix it to `f64`, which is what the CLI and the
//! default tolerances target.

pub mod data;
pub mod estimators;
pub mod linalg;
pub mod sampling;
pub mod scalar;
pub mod simulation;
pub mod stats;
pub mod streams;
pub mod synthesis;

pub use data::{
    build_design_matrix, design_diagnostics, load_population, load_sample, write_population,
    write_sample, CoefLabel, Covariate, CovariateSchema, DataError, DesignMatrix, FinitePopulation,
    ModelFormula, SurveyData, SurveySample, UnitRecord,
};
pub use estimators::{
    fit_m1, fit_m2, fit_m3, fit_m3_with, fit_truth, irls_solve, laplace_log_likelihood,
    linearized_variance, marginalize, wald_statistics, CoefficientVector, FitError, FitMethod,
    FitResult, MixedFitResult,
};
pub use sampling::{
    assign_weights, replicate_allocation_from_sample, stratified_sample, Allocation, SampleError,
};
pub use scalar::Scalar;
pub use simulation::{
    compute_bias, parse_scenario_configs, run_scenario, summarize, Method, ScenarioConfig,
    SimError, SimulationResults,
};
pub use synthesis::{
    cell_counts, covariate_distributions, synthesize, CategoricalDistribution, ResponseCombination,
    StratumCellCount, SynthError, SynthesisReference, SynthesisReport, SynthesisSpec,
};

/// `f64` instantiations of the generic core.
pub type Sample64 = data::SurveySample<f64>;
pub type DesignMatrix64 = data::DesignMatrix<f64>;
pub type Coefficients64 = estimators::CoefficientVector<f64>;
pub type Fit64 = estimators::FitResult<f64>;
pub type MixedFit64 = estimators::MixedFitResult<f64>;
pub type SummaryRow64 = simulation::SummaryRow<f64>;
pub type Results64 = simulation::SimulationResults<f64>;
pub type SynthesisReport64 = synthesis::SynthesisReport<f64>;
