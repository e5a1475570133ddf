//! Run-directory output files.
//!
//! All CSVs are UTF-8 with `.` decimals and deterministic row order. Numeric
//! cells use full-precision shortest round-trip formatting; the presentation
//! summary uses the 3-decimal half-up rounding of the usual report tables.

use std::fmt::Write as _;
use std::path::Path;

use super::{
    AllocationSource, Method, PopulationSource, ReplicateRecord, ScenarioConfig, SchemaSource,
    SimError, SimulationResults, SummaryRow,
};
use crate::scalar::Scalar;
use crate::stats;

/// Round half away from zero at 3 decimals, then format.
pub fn format_3dp(x: f64) -> String {
    format!("{:.3}", (x * 1000.0).round() / 1000.0)
}

fn write_file(path: &Path, content: &str) -> Result<(), SimError> {
    std::fs::write(path, content)
        .map_err(|source| SimError::Io { path: path.display().to_string(), source })
}

/// Long-format per-replicate bias file plus its quartile summary.
///
/// `records` is typically one formula's worth of converged replicates;
/// non-converged records are skipped.
pub fn export_boxplot_data<F: Scalar>(
    records: &[ReplicateRecord<F>],
    boxplot_path: &Path,
    quartiles_path: &Path,
) -> Result<(), SimError> {
    let mut long = String::from("replicate,method,coefficient,bias\n");
    for record in records.iter().filter(|r| r.converged) {
        for (label, &bias) in record.estimates.labels.iter().zip(&record.bias) {
            let _ = writeln!(long, "{},{},{},{}", record.replicate, record.method, label, bias);
        }
    }
    write_file(boxplot_path, &long)?;

    // method -> label -> biases, methods ascending, labels in coefficient order
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut quartiles = String::from("method,coefficient,min,q1,median,q3,max\n");
    for method in methods {
        let of_method: Vec<&ReplicateRecord<F>> =
            records.iter().filter(|r| r.method == method && r.converged).collect();
        let Some(first) = of_method.first() else { continue };
        for (d, label) in first.estimates.labels.iter().enumerate() {
            let biases: Vec<F> = of_method.iter().map(|r| r.bias[d]).collect();
            let summary = stats::five_number_summary(&biases);
            let _ = writeln!(
                quartiles,
                "{},{},{},{},{},{},{}",
                method, label, summary.min, summary.q1, summary.median, summary.q3, summary.max
            );
        }
    }
    write_file(quartiles_path, &quartiles)
}

/// Wide per-coefficient summary: full-precision CSV plus a 3-decimal
/// presentation variant with the `mean(sd)` column style of report tables.
pub fn export_summary_table<F: Scalar>(
    rows: &[SummaryRow<F>],
    path: &Path,
    presentation_path: &Path,
) -> Result<(), SimError> {
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();

    // (formula, label) keys in first-appearance order.
    let mut keys: Vec<(String, String, F)> = Vec::new();
    for row in rows {
        if !keys.iter().any(|(f, l, _)| f == &row.formula_id && l == &row.label) {
            keys.push((row.formula_id.clone(), row.label.clone(), row.truth));
        }
    }

    let mut header = String::from("formula,coefficient,truth");
    let mut pres_header = header.clone();
    for method in &methods {
        let m = method.to_string().to_ascii_lowercase();
        let _ = write!(header, ",{m}_mean,{m}_sd,{m}_avbias,{m}_mse");
        let _ = write!(pres_header, ",{m}_mean_sd,{m}_avbias,{m}_mse");
    }

    let mut full = header;
    full.push('\n');
    let mut pres = pres_header;
    pres.push('\n');
    for (formula, label, truth) in &keys {
        let _ = write!(full, "{formula},{label},{truth}");
        let _ = write!(pres, "{formula},{label},{}", format_3dp(truth.as_f64()));
        for method in &methods {
            match rows
                .iter()
                .find(|r| &r.formula_id == formula && &r.label == label && r.method == *method)
            {
                Some(row) => {
                    let _ = write!(full, ",{},{},{},{}", row.mean, row.sd, row.avbias, row.mse);
                    let _ = write!(
                        pres,
                        ",{}({}),{},{}",
                        format_3dp(row.mean.as_f64()),
                        format_3dp(row.sd.as_f64()),
                        format_3dp(row.avbias.as_f64()),
                        format_3dp(row.mse.as_f64())
                    );
                }
                None => {
                    let _ = write!(full, ",,,,");
                    let _ = write!(pres, ",,,");
                }
            }
        }
        full.push('\n');
        pres.push('\n');
    }
    write_file(path, &full)?;
    write_file(presentation_path, &pres)
}

fn describe_population(source: &PopulationSource) -> String {
    match source {
        PopulationSource::Csv(path) => format!("population csv {}", path.display()),
        PopulationSource::SynthesizeFromSample { sample, design_covariates } => format!(
            "synthesized from sample {} (design covariates: {})",
            sample.display(),
            if design_covariates.is_empty() {
                "none".to_string()
            } else {
                design_covariates.join(",")
            }
        ),
        PopulationSource::InMemory(_) => "in-memory population".to_string(),
    }
}

fn describe_allocation(source: &AllocationSource) -> String {
    match source {
        AllocationSource::Csv(path) => format!("allocation csv {}", path.display()),
        AllocationSource::FromSample(path) => {
            format!("allocation replicated from sample {}", path.display())
        }
        AllocationSource::Fixed(allocation) => {
            format!("fixed allocation over {} strata", allocation.counts().len())
        }
    }
}

pub(super) fn write_run_outputs<F: Scalar>(
    results: &SimulationResults<F>,
    config: &ScenarioConfig,
) -> Result<(), SimError> {
    let dir = &config.output_dir;
    let mut written: Vec<String> = Vec::new();

    // replicates.csv: converged estimates, long format.
    let mut replicates = String::from("formula,replicate,method,coefficient,estimate,bias\n");
    for record in results.records.iter().filter(|r| r.converged) {
        for ((label, &estimate), &bias) in
            record.estimates.labels.iter().zip(&record.estimates.values).zip(&record.bias)
        {
            let _ = writeln!(
                replicates,
                "{},{},{},{},{},{}",
                record.formula_id, record.replicate, record.method, label, estimate, bias
            );
        }
    }
    write_file(&dir.join("replicates.csv"), &replicates)?;
    written.push("replicates.csv".into());

    export_summary_table(
        &results.summaries,
        &dir.join("summary.csv"),
        &dir.join("summary_presentation.csv"),
    )?;
    written.push("summary.csv".into());
    written.push("summary_presentation.csv".into());

    // Box-plot exports are per formula; a single-formula run uses the plain
    // names, multi-formula runs suffix f1, f2, ... in config order.
    let formula_ids: Vec<&String> = results.truths.iter().map(|(id, _)| id).collect();
    for (idx, formula_id) in formula_ids.iter().enumerate() {
        let (box_name, quart_name) = if formula_ids.len() == 1 {
            ("boxplot.csv".to_string(), "quartiles.csv".to_string())
        } else {
            (format!("boxplot_f{}.csv", idx + 1), format!("quartiles_f{}.csv", idx + 1))
        };
        let of_formula: Vec<ReplicateRecord<F>> =
            results.records.iter().filter(|r| &&r.formula_id == formula_id).cloned().collect();
        export_boxplot_data(&of_formula, &dir.join(&box_name), &dir.join(&quart_name))?;
        written.push(box_name);
        written.push(quart_name);
    }

    let mut manifest = String::new();
    let _ = writeln!(manifest, "scenario: {}", results.scenario);
    let _ = writeln!(manifest, "seed: {}", config.seed);
    let _ = writeln!(manifest, "replicates: {}", results.replicates);
    let _ = writeln!(
        manifest,
        "methods: {}",
        results.methods.iter().map(Method::to_string).collect::<Vec<_>>().join(",")
    );
    if let SchemaSource::Path(path) = &config.schema {
        let _ = writeln!(manifest, "schema: {}", path.display());
    }
    let _ = writeln!(manifest, "population: {}", describe_population(&config.population));
    let _ = writeln!(manifest, "allocation: {}", describe_allocation(&config.allocation));
    for (idx, formula_id) in formula_ids.iter().enumerate() {
        let _ = writeln!(manifest, "formula f{}: {}", idx + 1, formula_id);
    }
    if let Some(synthesis) = &results.synthesis {
        let _ = writeln!(manifest, "synthesis:");
        for line in synthesis.render_manifest().lines() {
            let _ = writeln!(manifest, "  {line}");
        }
    }
    let total_fits = results.replicates * formula_ids.len() as u64 * results.methods.len() as u64;
    let _ = writeln!(manifest, "fits: {total_fits}");
    let _ = writeln!(manifest, "failed fits: {}", results.failures.len());
    let _ = writeln!(manifest, "flagged (>5% failures): {}", results.flagged);
    for failure in &results.failures {
        let _ = writeln!(
            manifest,
            "failure: replicate {} method {} formula `{}`: {}",
            failure.replicate, failure.method, failure.formula_id, failure.error
        );
    }
    for error in &results.summary_errors {
        let _ = writeln!(manifest, "summary: {error}");
    }
    let _ = writeln!(manifest, "workers: {}", rayon::current_num_threads());
    let _ = writeln!(manifest, "wall seconds: {:.3}", results.wall_seconds);
    let _ = writeln!(manifest, "outputs: {}", written.join(","));
    write_file(&dir.join("manifest.txt"), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CoefLabel;
    use crate::estimators::CoefficientVector;

    #[test]
    fn three_decimal_rounding_is_half_up() {
        assert_eq!(format_3dp(1.29553), "1.296");
        assert_eq!(format_3dp(0.0005), "0.001");
        assert_eq!(format_3dp(-0.0205), "-0.021");
        assert_eq!(format_3dp(2.0), "2.000");
    }

    fn labels(l: usize) -> Vec<CoefLabel> {
        (0..l)
            .map(|i| {
                if i == 0 {
                    CoefLabel::Intercept
                } else {
                    CoefLabel::Dummy { covariate: "x1".into(), level: format!("{}", i + 1) }
                }
            })
            .collect()
    }

    fn record(replicate: u64, method: Method, biases: &[f64]) -> ReplicateRecord<f64> {
        ReplicateRecord {
            replicate,
            method,
            formula_id: "y ~ x1".into(),
            estimates: CoefficientVector::new(labels(biases.len()), biases.to_vec()),
            bias: biases.to_vec(),
            converged: true,
        }
    }

    #[test]
    fn boxplot_row_count_is_replicates_by_methods_by_coefficients() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for r in 1..=5u64 {
            for method in [Method::M1, Method::M2, Method::M3] {
                records.push(record(r, method, &[0.1, -0.2, 0.3, 0.0, 0.5, -0.6, 0.7]));
            }
        }
        let box_path = dir.path().join("boxplot.csv");
        let quart_path = dir.path().join("quartiles.csv");
        export_boxplot_data(&records, &box_path, &quart_path).unwrap();
        let text = std::fs::read_to_string(&box_path).unwrap();
        // header + 5 replicates x 3 methods x 7 coefficients
        assert_eq!(text.lines().count(), 1 + 5 * 3 * 7);
        assert_eq!(text.lines().next(), Some("replicate,method,coefficient,bias"));
    }

    #[test]
    fn quartiles_use_linear_interpolation() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<ReplicateRecord<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &b)| record(i as u64 + 1, Method::M1, &[b]))
            .collect();
        let box_path = dir.path().join("b.csv");
        let quart_path = dir.path().join("q.csv");
        export_boxplot_data(&records, &box_path, &quart_path).unwrap();
        let text = std::fs::read_to_string(&quart_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("method,coefficient,min,q1,median,q3,max"));
        assert_eq!(lines.next(), Some("M1,intercept,1,2,3,4,5"));
    }

    #[test]
    fn empty_records_give_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let box_path = dir.path().join("b.csv");
        let quart_path = dir.path().join("q.csv");
        export_boxplot_data::<f64>(&[], &box_path, &quart_path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&box_path).unwrap(),
            "replicate,method,coefficient,bias\n"
        );
        assert_eq!(
            std::fs::read_to_string(&quart_path).unwrap(),
            "method,coefficient,min,q1,median,q3,max\n"
        );
    }

    #[test]
    fn summary_table_shape_and_method_order() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![SummaryRow {
            formula_id: "y ~ 1".into(),
            method: Method::M1,
            label: "intercept".into(),
            truth: 1.0,
            mean: 1.29553,
            sd: 0.1,
            avbias: 0.29553,
            mse: 0.097,
            total_replicates: 10,
            converged_replicates: 10,
        }];
        let full = dir.path().join("summary.csv");
        let pres = dir.path().join("summary_presentation.csv");
        export_summary_table(&rows, &full, &pres).unwrap();
        let text = std::fs::read_to_string(&full).unwrap();
        let mut lines = text.lines();
        // formula column + coefficient,truth + one method block of four
        assert_eq!(lines.next(), Some("formula,coefficient,truth,m1_mean,m1_sd,m1_avbias,m1_mse"));
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 7);
        assert!(lines.next().is_none());

        let pres_text = std::fs::read_to_string(&pres).unwrap();
        assert!(pres_text.contains("1.296(0.100)"));

        // multiple methods appear in M1, M2, M3 column order regardless of
        // row order
        let mut multi = Vec::new();
        for method in [Method::M3, Method::M1, Method::M2] {
            let mut row = rows[0].clone();
            row.method = method;
            multi.push(row);
        }
        export_summary_table(&multi, &full, &pres).unwrap();
        let header = std::fs::read_to_string(&full);
        let header = header.unwrap();
        let header = header.lines().next().unwrap().to_string();
        let m1 = header.find("m1_mean").unwrap();
        let m2 = header.find("m2_mean").unwrap();
        let m3 = header.find("m3_mean").unwrap();
        assert!(m1 < m2 && m2 < m3);
    }
}
