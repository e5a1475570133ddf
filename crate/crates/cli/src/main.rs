//! Command-line front end: fit survey logistic models, synthesize
//! pseudo-populations, draw stratified samples, run simulation scenarios
//! and render their reports.
//!
//! Exit codes: 0 success, 1 validation error, 2 estimation failure,
//! 3 I/O error.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svylogit::data::{self, CovariateSchema, DataError, ModelFormula};
use svylogit::estimators::{self, fit_m1, fit_m2, fit_m3, FitError, FitResult, MixedFitResult};
use svylogit::sampling::{stratified_sample, Allocation, SampleError};
use svylogit::simulation::{parse_scenario_configs, run_scenario, Method, SimError};
use svylogit::synthesis::{
    covariate_distributions, synthesize, SynthError, SynthesisReference, SynthesisSpec,
};

const EXIT_VALIDATION: u8 = 1;
const EXIT_ESTIMATION: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "svylogit",
    about = "Logistic regression for complex survey data: unweighted (M1), design-weighted (M2) and random-intercept (M3) fits, pseudo-population synthesis and Monte-Carlo bias studies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the requested methods to a weighted sample CSV.
    Fit(FitArgs),
    /// Synthesize a pseudo-population from a weighted sample CSV.
    Synth(SynthArgs),
    /// Draw a stratified sample from a population CSV.
    Sample(SampleArgs),
    /// Run every scenario in a simulation config file.
    Simulate(SimulateArgs),
    /// Render a finished run directory as a text report.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Sample CSV (`unit_id,stratum,<responses>,<covariates>,weight`).
    #[arg(long)]
    sample: PathBuf,
    /// Schema file.
    #[arg(long)]
    schema: PathBuf,
    /// Model formula, e.g. "y ~ x1 + x2".
    #[arg(long)]
    formula: String,
    /// Comma-separated subset of m1,m2,m3.
    #[arg(long, default_value = "m1,m2,m3")]
    methods: String,
    /// Optional stratum,N_h CSV enabling finite-population corrections.
    #[arg(long)]
    fpc: Option<PathBuf>,
    /// Directory for per-method CSV output (tables always print to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output directory (population.csv + manifest.txt).
    #[arg(long)]
    out: PathBuf,
    /// Covariates encoded by the stratification, copied per stratum instead
    /// of drawn.
    #[arg(long, value_delimiter = ',')]
    design_covariates: Vec<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// stratum,n_h CSV.
    #[arg(long)]
    allocation: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output sample CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory produced by `simulate`.
    #[arg(long)]
    run: PathBuf,
}

fn main() -> ExitCode {
    // behave like a normal unix filter when stdout is closed early
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if err.use_stderr() {
                eprint!("{err}");
                return ExitCode::from(EXIT_VALIDATION);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };

    configure_workers();

    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

/// Worker count for replicate parallelism; defaults to available cores.
fn configure_workers() {
    if let Ok(value) = std::env::var("SVYLOGIT_WORKERS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }
    fn estimation(message: impl Into<String>) -> Self {
        Self { code: EXIT_ESTIMATION, message: message.into() }
    }
    fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        match err {
            DataError::Io { .. } => CliError::io(err.to_string()),
            _ => CliError::validation(err.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(err: FitError) -> Self {
        match err {
            FitError::Data(inner) => inner.into(),
            _ => CliError::estimation(err.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(err: SynthError) -> Self {
        match err {
            SynthError::Data(inner) => inner.into(),
            _ => CliError::validation(err.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(err: SampleError) -> Self {
        match err {
            SampleError::Data(inner) => inner.into(),
            _ => CliError::validation(err.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        match err {
            SimError::Io { .. } => CliError::io(err.to_string()),
            SimError::TruthFit { .. } | SimError::NoConvergedReplicates { .. } => {
                CliError::estimation(err.to_string())
            }
            SimError::Data(inner) => inner.into(),
            SimError::Synth(inner) => inner.into(),
            SimError::Sample(inner) => inner.into(),
            _ => CliError::validation(err.to_string()),
        }
    }
}

fn parse_methods(text: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for token in text.split(',') {
        let method: Method = token.parse().map_err(CliError::validation)?;
        if !methods.contains(&method) {
            methods.push(method);
        }
    }
    if methods.is_empty() {
        return Err(CliError::validation("at least one method is required"));
    }
    Ok(methods)
}

fn print_fit_table(method: &str, fit: &FitResult<f64>) {
    println!("== {method} ==");
    println!("{:<16} {:>10} {:>9} {:>9}", "coefficient", "estimate", "se", "z");
    for ((label, &estimate), &se) in
        fit.coefficients.labels.iter().zip(&fit.coefficients.values).zip(&fit.std_errors)
    {
        let z = if se > 0.0 { estimate / se } else { f64::NAN };
        println!("{:<16} {:>10.3} {:>9.3} {:>9.3}", label.to_string(), estimate, se, z);
    }
    println!();
}

fn print_mixed_table(fit: &MixedFitResult<f64>) {
    println!("== M3 (population-averaged scale) ==");
    println!("{:<16} {:>10} {:>9} {:>9}", "coefficient", "estimate", "se", "z");
    for ((label, &estimate), &se) in
        fit.beta_marginal.labels.iter().zip(&fit.beta_marginal.values).zip(&fit.se_marginal)
    {
        let z = if se > 0.0 { estimate / se } else { f64::NAN };
        println!("{:<16} {:>10.3} {:>9.3} {:>9.3}", label.to_string(), estimate, se, z);
    }
    println!("sigma2_u = {:.6}{}", fit.sigma2_u, if fit.boundary { " (boundary)" } else { "" });
    println!();
    println!("== M3 (conditional scale) ==");
    println!("{:<16} {:>10} {:>9} {:>9}", "coefficient", "estimate", "se", "z");
    for ((label, &estimate), &se) in
        fit.gamma.labels.iter().zip(&fit.gamma.values).zip(&fit.se_gamma)
    {
        let z = if se > 0.0 { estimate / se } else { f64::NAN };
        println!("{:<16} {:>10.3} {:>9.3} {:>9.3}", label.to_string(), estimate, se, z);
    }
    println!();
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let schema = CovariateSchema::load(&args.schema)?;
    let sample = data::load_sample::<f64>(&args.sample, &schema)?;
    if !sample.unequal_weight_strata().is_empty() {
        eprintln!(
            "note: weights are not constant within strata {:?}; the design may not be one-step stratified",
            sample.unequal_weight_strata()
        );
    }
    let formula = ModelFormula::parse(&args.formula, &schema)?;
    let methods = parse_methods(&args.methods)?;
    let fpc = match &args.fpc {
        Some(path) => Some(data::read_stratum_sizes(path)?),
        None => None,
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    }

    let mut estimation_errors: Vec<String> = Vec::new();
    for method in methods {
        match method {
            Method::M1 => match fit_m1(&sample, &formula) {
                Ok(fit) => {
                    print_fit_table("M1", &fit);
                    if let Some(dir) = &args.out {
                        estimators::write_fit_csv(dir.join("fit_m1.csv"), &fit)?;
                    }
                }
                Err(err) => estimation_errors.push(format!("M1: {err}")),
            },
            Method::M2 => match fit_m2(&sample, &formula, fpc.as_ref()) {
                Ok(fit) => {
                    print_fit_table("M2", &fit);
                    if let Some(dir) = &args.out {
                        estimators::write_fit_csv(dir.join("fit_m2.csv"), &fit)?;
                    }
                }
                Err(err) => estimation_errors.push(format!("M2: {err}")),
            },
            Method::M3 => match fit_m3(&sample, &formula) {
                Ok(fit) => {
                    print_mixed_table(&fit);
                    if let Some(dir) = &args.out {
                        estimators::write_mixed_fit_csv(dir.join("fit_m3.csv"), &fit)?;
                    }
                }
                Err(err) => estimation_errors.push(format!("M3: {err}")),
            },
        }
    }
    if !estimation_errors.is_empty() {
        return Err(CliError::estimation(estimation_errors.join("; ")));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let schema = CovariateSchema::load(&args.schema)?;
    let sample = data::load_sample::<f64>(&args.sample, &schema)?;
    for name in &args.design_covariates {
        if schema.covariate(name).is_none() {
            return Err(CliError::validation(format!("unknown design covariate `{name}`")));
        }
    }
    let mut distributions = Vec::new();
    for covariate in schema.covariates() {
        if args.design_covariates.contains(&covariate.name) {
            continue;
        }
        distributions.extend(covariate_distributions(
            &SynthesisReference::WeightedSample(&sample),
            &covariate.name,
        )?);
    }
    let (population, synthesis_report) = synthesize(&SynthesisSpec {
        sample: &sample,
        design_covariates: &args.design_covariates,
        distributions: &distributions,
        seed: args.seed,
    })?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(format!("{}: {e}", args.out.display())))?;
    let population_path = args.out.join("population.csv");
    data::write_population(&population_path, &population)?;
    std::fs::write(args.out.join("manifest.txt"), synthesis_report.render_manifest())
        .map_err(|e| CliError::io(format!("{}: {e}", args.out.display())))?;
    println!(
        "synthesized {} units from weight mass {} into {}",
        synthesis_report.mass_after,
        synthesis_report.mass_before,
        population_path.display()
    );
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<(), CliError> {
    let schema = CovariateSchema::load(&args.schema)?;
    let population = data::load_population(&args.population, &schema)?;
    let allocation = Allocation::load(&args.allocation)?;
    let sample = stratified_sample::<f64>(&population, &allocation, args.seed)?;
    data::write_sample(&args.out, &sample)?;
    println!(
        "drew {} units across {} strata into {}",
        sample.size(),
        sample.stratum_index().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::io(format!("{}: {e}", args.config.display())))?;
    let base_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let configs = parse_scenario_configs(&text, &base_dir)?;
    for config in &configs {
        println!(
            "running scenario `{}`: R={}, methods {}",
            config.name,
            config.replicates,
            config.methods.iter().map(Method::to_string).collect::<Vec<_>>().join(",")
        );
        let results = run_scenario::<f64>(config)?;
        println!(
            "  done in {:.1}s; {} failed fits{}; outputs in {}",
            results.wall_seconds,
            results.failures.len(),
            if results.flagged { " (FLAGGED: >5%)" } else { "" },
            config.output_dir.display()
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let summary = args.run.join("summary.csv");
    let manifest = args.run.join("manifest.txt");
    let missing: Vec<String> = [&summary, &manifest]
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::validation(format!(
            "run directory {} is missing expected artifacts: {} (a run produces replicates.csv, summary.csv, boxplot/quartile CSVs and manifest.txt)",
            args.run.display(),
            missing.join(", ")
        )));
    }
    let text = std::fs::read_to_string(&summary)
        .map_err(|e| CliError::io(format!("{}: {e}", summary.display())))?;
    let rendered = report::render_summary(&text, &summary.display().to_string())
        .map_err(CliError::validation)?;
    print!("{rendered}");
    Ok(())
}
