//! Monte-Carlo simulation harness.
//!
//! A scenario fixes a finite population (loaded or synthesized), a sampling
//! allocation, model formulas and estimation methods. The harness computes
//! the finite-population truth fit per formula, then draws R stratified
//! samples and fits every requested method to each, recording per-replicate
//! coefficient bias and the Mean/SD/AvBias/MSE summary per coefficient.
//!
//! Results are a pure function of (config, master seed): every replicate owns
//! generator streams derived from the master seed and the replicate index,
//! so the worker count never changes any output byte.

mod config;
mod export;

pub use config::parse_scenario_configs;
pub use export::{export_boxplot_data, export_summary_table, format_3dp};

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{
    load_population, load_sample, CovariateSchema, DataError, FinitePopulation, ModelFormula,
};
use crate::estimators::{
    fit_m1, fit_m2, fit_m3_with, fit_truth, CoefficientVector, FitError, FitResult, MixedOptions,
};
use crate::sampling::{
    replicate_allocation_from_sample, stratified_sample, Allocation, SampleError,
};
use crate::scalar::Scalar;
use crate::stats;
use crate::streams::{derive_seed, tags};
use crate::synthesis::{
    covariate_distributions, synthesize, SynthError, SynthesisReference, SynthesisReport,
    SynthesisSpec,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("truth fit for `{formula}` failed: {source}")]
    TruthFit {
        formula: String,
        #[source]
        source: FitError,
    },
    #[error("coefficient labels do not match: expected `{expected}`, found `{found}`")]
    LabelMismatch { expected: String, found: String },
    #[error("no converged replicates for method {method} on `{formula}`")]
    NoConvergedReplicates { formula: String, method: Method },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Estimation methods selectable in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    M1,
    M2,
    M3,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::M1 => write!(f, "M1"),
            Method::M2 => write!(f, "M2"),
            Method::M3 => write!(f, "M3"),
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m1" => Ok(Method::M1),
            "m2" => Ok(Method::M2),
            "m3" => Ok(Method::M3),
            other => Err(format!("unknown method `{other}` (expected m1, m2 or m3)")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SchemaSource {
    Path(PathBuf),
    Inline(CovariateSchema),
}

#[derive(Debug, Clone)]
pub enum PopulationSource {
    /// Load a finite population from CSV.
    Csv(PathBuf),
    /// Synthesize a pseudo-population from a weighted sample CSV; listed
    /// covariates are treated as encoded by the stratification.
    SynthesizeFromSample { sample: PathBuf, design_covariates: Vec<String> },
    /// Use an already-built population (programmatic runs).
    InMemory(Arc<FinitePopulation>),
}

#[derive(Debug, Clone)]
pub enum AllocationSource {
    Csv(PathBuf),
    /// Reuse the realized per-stratum counts of a sample CSV.
    FromSample(PathBuf),
    Fixed(Allocation),
}

/// One simulation scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub schema: SchemaSource,
    pub population: PopulationSource,
    pub allocation: AllocationSource,
    /// Formula strings, parsed against the schema at run time.
    pub formulas: Vec<String>,
    pub methods: Vec<Method>,
    pub replicates: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.replicates == 0 {
            return Err(SimError::Invalid("replicates must be at least 1".into()));
        }
        if self.formulas.is_empty() {
            return Err(SimError::Invalid("at least one formula is required".into()));
        }
        if self.methods.is_empty() {
            return Err(SimError::Invalid("at least one method is required".into()));
        }
        let mut methods = self.methods.clone();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(SimError::Invalid("methods must not repeat".into()));
        }
        Ok(())
    }
}

/// Estimates (or recorded failure) of one method on one replicate sample.
#[derive(Debug, Clone)]
pub struct ReplicateRecord<F> {
    pub replicate: u64,
    pub method: Method,
    pub formula_id: String,
    pub estimates: CoefficientVector<F>,
    /// Elementwise `estimate - truth`; empty when not converged.
    pub bias: Vec<F>,
    pub converged: bool,
}

/// Error text of a failed replicate fit.
#[derive(Debug, Clone)]
pub struct FailureRecord {
    pub replicate: u64,
    pub method: Method,
    pub formula_id: String,
    pub error: String,
}

/// Per-coefficient Monte-Carlo summary of one method.
#[derive(Debug, Clone)]
pub struct SummaryRow<F> {
    pub formula_id: String,
    pub method: Method,
    pub label: String,
    pub truth: F,
    pub mean: F,
    pub sd: F,
    pub avbias: F,
    pub mse: F,
    pub total_replicates: u64,
    pub converged_replicates: u64,
}

/// Everything one scenario run produced.
#[derive(Debug)]
pub struct SimulationResults<F> {
    pub scenario: String,
    /// (formula id, truth fit) in config order.
    pub truths: Vec<(String, FitResult<F>)>,
    pub records: Vec<ReplicateRecord<F>>,
    pub failures: Vec<FailureRecord>,
    pub summaries: Vec<SummaryRow<F>>,
    /// Methods that never converged, per formula; excluded from summaries.
    pub summary_errors: Vec<String>,
    pub methods: Vec<Method>,
    pub replicates: u64,
    /// More than 5% of fits failed.
    pub flagged: bool,
    pub synthesis: Option<SynthesisReport<F>>,
    pub wall_seconds: f64,
}

/// Elementwise `estimate - truth`, with label agreement enforced.
pub fn compute_bias<F: Scalar>(
    estimate: &CoefficientVector<F>,
    truth: &CoefficientVector<F>,
) -> Result<Vec<F>, SimError> {
    if estimate.labels != truth.labels {
        return Err(SimError::LabelMismatch {
            expected: truth.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("|"),
            found: estimate.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("|"),
        });
    }
    Ok(estimate.values.iter().zip(&truth.values).map(|(&est, &tr)| est - tr).collect())
}

/// Per-coefficient Mean/SD/AvBias/MSE over converged replicates.
///
/// `truths` fixes the formula order; SD uses the n-1 denominator, AvBias and
/// MSE average bias and squared bias over converged replicates.
pub fn summarize<F: Scalar>(
    records: &[ReplicateRecord<F>],
    truths: &[(String, CoefficientVector<F>)],
) -> Result<Vec<SummaryRow<F>>, SimError> {
    let mut rows = Vec::new();
    for (formula_id, truth) in truths {
        let mut methods: Vec<Method> =
            records.iter().filter(|r| &r.formula_id == formula_id).map(|r| r.method).collect();
        methods.sort_unstable();
        methods.dedup();
        for method in methods {
            let all: Vec<&ReplicateRecord<F>> = records
                .iter()
                .filter(|r| &r.formula_id == formula_id && r.method == method)
                .collect();
            let converged: Vec<&&ReplicateRecord<F>> = all.iter().filter(|r| r.converged).collect();
            if converged.is_empty() {
                return Err(SimError::NoConvergedReplicates {
                    formula: formula_id.clone(),
                    method,
                });
            }
            for (d, label) in truth.labels.iter().enumerate() {
                let estimates: Vec<F> = converged.iter().map(|r| r.estimates.values[d]).collect();
                let biases: Vec<F> = converged.iter().map(|r| r.bias[d]).collect();
                let avbias = stats::mean(&biases);
                let mse = biases.iter().map(|&b| b * b).sum::<F>() / F::count(biases.len());
                rows.push(SummaryRow {
                    formula_id: formula_id.clone(),
                    method,
                    label: label.to_string(),
                    truth: truth.values[d],
                    mean: stats::mean(&estimates),
                    sd: stats::sample_sd(&estimates),
                    avbias,
                    mse,
                    total_replicates: all.len() as u64,
                    converged_replicates: converged.len() as u64,
                });
            }
        }
    }
    Ok(rows)
}

fn resolve_schema(config: &ScenarioConfig) -> Result<CovariateSchema, SimError> {
    match &config.schema {
        SchemaSource::Path(path) => Ok(CovariateSchema::load(path)?),
        SchemaSource::Inline(schema) => Ok(schema.clone()),
    }
}

fn resolve_population<F: Scalar>(
    config: &ScenarioConfig,
    schema: &CovariateSchema,
) -> Result<(Arc<FinitePopulation>, Option<SynthesisReport<F>>), SimError> {
    match &config.population {
        PopulationSource::Csv(path) => Ok((Arc::new(load_population(path, schema)?), None)),
        PopulationSource::InMemory(population) => Ok((Arc::clone(population), None)),
        PopulationSource::SynthesizeFromSample { sample, design_covariates } => {
            let sample = load_sample::<F>(sample, schema)?;
            let mut distributions = Vec::new();
            for (idx, covariate) in schema.covariates().iter().enumerate() {
                if design_covariates.contains(&covariate.name) {
                    continue;
                }
                let _ = idx;
                distributions.extend(covariate_distributions(
                    &SynthesisReference::WeightedSample(&sample),
                    &covariate.name,
                )?);
            }
            let (population, report) = synthesize(&SynthesisSpec {
                sample: &sample,
                design_covariates,
                distributions: &distributions,
                seed: derive_seed(config.seed, &[tags::SYNTHESIS]),
            })?;
            Ok((Arc::new(population), Some(report)))
        }
    }
}

fn resolve_allocation<F: Scalar>(config: &ScenarioConfig) -> Result<Allocation, SimError> {
    match &config.allocation {
        AllocationSource::Csv(path) => Ok(Allocation::load(path)?),
        AllocationSource::Fixed(allocation) => Ok(allocation.clone()),
        AllocationSource::FromSample(path) => {
            let schema = resolve_schema(config)?;
            let sample = load_sample::<F>(path, &schema)?;
            Ok(replicate_allocation_from_sample(&sample))
        }
    }
}

/// Run one scenario end to end and write its output files.
pub fn run_scenario<F: Scalar>(config: &ScenarioConfig) -> Result<SimulationResults<F>, SimError> {
    let started = Instant::now();
    config.validate()?;

    std::fs::create_dir_all(&config.output_dir)
        .map_err(|source| SimError::Io { path: config.output_dir.display().to_string(), source })?;
    let marker = config.output_dir.join(".partial");
    std::fs::write(&marker, "run in progress\n")
        .map_err(|source| SimError::Io { path: marker.display().to_string(), source })?;

    let schema = resolve_schema(config)?;
    let (population, synthesis) = resolve_population::<F>(config, &schema)?;
    let allocation = resolve_allocation::<F>(config)?;

    // Fail fast on allocation/population mismatches.
    let sizes = population.stratum_sizes();
    for (&stratum, &n_h) in allocation.counts() {
        let &cap = sizes.get(&stratum).ok_or(SampleError::UnknownStratum { stratum })?;
        if n_h > cap {
            return Err(SimError::Sample(SampleError::AllocationExceedsStratum {
                stratum,
                requested: n_h,
                available: cap,
            }));
        }
    }

    let mut formulas = Vec::new();
    for text in &config.formulas {
        formulas.push(ModelFormula::parse(text, &schema)?);
    }

    // Step 2: the finite-population truth per formula; failures are fatal.
    let mut truths: Vec<(String, FitResult<F>)> = Vec::new();
    for formula in &formulas {
        let fit = fit_truth::<F>(&population, formula)
            .map_err(|source| SimError::TruthFit { formula: formula.to_string(), source })?;
        truths.push((formula.to_string(), fit));
    }

    // Steps 3-4 over replicates, in parallel; collect preserves order.
    let mixed_opts = MixedOptions::<F> { compute_covariance: false, ..Default::default() };
    let replicate_results: Result<Vec<_>, SimError> = (1..=config.replicates)
        .into_par_iter()
        .map(|replicate| {
            let seed = derive_seed(config.seed, &[tags::REPLICATE, replicate]);
            let sample = stratified_sample::<F>(&population, &allocation, seed)?;
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for (formula, (formula_id, truth)) in formulas.iter().zip(&truths) {
                for &method in &config.methods {
                    let outcome: Result<CoefficientVector<F>, FitError> = match method {
                        Method::M1 => fit_m1(&sample, formula).map(|f| f.coefficients),
                        Method::M2 => {
                            fit_m2(&sample, formula, Some(&sizes)).map(|f| f.coefficients)
                        }
                        Method::M3 => {
                            fit_m3_with(&sample, formula, &mixed_opts).map(|f| f.beta_marginal)
                        }
                    };
                    match outcome {
                        Ok(estimates) => {
                            let bias = compute_bias(&estimates, &truth.coefficients)?;
                            records.push(ReplicateRecord {
                                replicate,
                                method,
                                formula_id: formula_id.clone(),
                                estimates,
                                bias,
                                converged: true,
                            });
                        }
                        Err(error) => {
                            failures.push(FailureRecord {
                                replicate,
                                method,
                                formula_id: formula_id.clone(),
                                error: error.to_string(),
                            });
                            records.push(ReplicateRecord {
                                replicate,
                                method,
                                formula_id: formula_id.clone(),
                                estimates: CoefficientVector::new(vec![], vec![]),
                                bias: vec![],
                                converged: false,
                            });
                        }
                    }
                }
            }
            Ok((records, failures))
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in replicate_results? {
        records.extend(r);
        failures.extend(f);
    }

    let total_fits = config.replicates * formulas.len() as u64 * config.methods.len() as u64;
    let flagged = failures.len() as u64 * 20 > total_fits; // > 5%

    // Methods that never converged are reported, not summarized.
    let mut summary_errors = Vec::new();
    let mut summarizable = records.clone();
    let truth_coefs: Vec<(String, CoefficientVector<F>)> =
        truths.iter().map(|(id, fit)| (id.clone(), fit.coefficients.clone())).collect();
    for (formula_id, _) in &truth_coefs {
        for &method in &config.methods {
            let any_converged = records
                .iter()
                .any(|r| &r.formula_id == formula_id && r.method == method && r.converged);
            if !any_converged {
                summary_errors.push(format!(
                    "method {method} on `{formula_id}` never converged; excluded from summary"
                ));
                summarizable.retain(|r| !(&r.formula_id == formula_id && r.method == method));
            }
        }
    }
    let summaries = summarize(&summarizable, &truth_coefs)?;

    let results = SimulationResults {
        scenario: config.name.clone(),
        truths,
        records,
        failures,
        summaries,
        summary_errors,
        methods: config.methods.clone(),
        replicates: config.replicates,
        flagged,
        synthesis,
        wall_seconds: started.elapsed().as_secs_f64(),
    };

    export::write_run_outputs(&results, config)?;
    std::fs::remove_file(&marker)
        .map_err(|source| SimError::Io { path: marker.display().to_string(), source })?;
    Ok(results)
}

/// Stratum sizes of a population, exposed for diagnostics and FPC input.
pub fn population_sizes(population: &FinitePopulation) -> BTreeMap<u64, u64> {
    population.stratum_sizes()
}
