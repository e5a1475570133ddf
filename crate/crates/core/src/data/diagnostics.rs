//! Design diagnostics: per-stratum counts, sampling fractions and their
//! five-number summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{DataError, SurveySample};
use crate::scalar::Scalar;
use crate::stats::{five_number_summary, FiveNumber};

#[derive(Debug, Clone)]
pub struct StratumDiagnostic<F> {
    pub stratum: u64,
    pub n_h: usize,
    pub population_size: u64,
    pub sampling_fraction: F,
}

#[derive(Debug, Clone)]
pub struct DesignDiagnostics<F> {
    pub per_stratum: Vec<StratumDiagnostic<F>>,
    pub size_summary: FiveNumber<F>,
    pub fraction_summary: FiveNumber<F>,
}

/// Summarize the realized design of a sample against known stratum sizes.
pub fn design_diagnostics<F: Scalar>(
    sample: &SurveySample<F>,
    population_sizes: &BTreeMap<u64, u64>,
) -> Result<DesignDiagnostics<F>, DataError> {
    let mut per_stratum = Vec::new();
    for (&stratum, positions) in sample.stratum_index() {
        let &population_size =
            population_sizes.get(&stratum).ok_or(DataError::UnknownStratum { stratum })?;
        let n_h = positions.len();
        let fraction = F::count(n_h) / F::count(population_size as usize);
        per_stratum.push(StratumDiagnostic {
            stratum,
            n_h,
            population_size,
            sampling_fraction: fraction,
        });
    }
    let sizes: Vec<F> = per_stratum.iter().map(|d| F::count(d.population_size as usize)).collect();
    let fractions: Vec<F> = per_stratum.iter().map(|d| d.sampling_fraction).collect();
    Ok(DesignDiagnostics {
        size_summary: five_number_summary(&sizes),
        fraction_summary: five_number_summary(&fractions),
        per_stratum,
    })
}

impl<F: Scalar> DesignDiagnostics<F> {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stratum,n_h,N_h,fraction");
        for d in &self.per_stratum {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                d.stratum, d.n_h, d.population_size, d.sampling_fraction
            );
        }
        let s = &self.size_summary;
        let _ = writeln!(
            out,
            "stratum sizes: min {} q1 {} median {} q3 {} max {}",
            s.min, s.q1, s.median, s.q3, s.max
        );
        let f = &self.fraction_summary;
        let _ = writeln!(
            out,
            "sampling fractions: min {} q1 {} median {} q3 {} max {}",
            f.min, f.q1, f.median, f.q3, f.max
        );
        out
    }
}
