//! Survey domain model: covariate schemas, unit records, finite populations,
//! weighted samples and dummy-coded design matrices.

mod design;
mod diagnostics;
mod io;
mod schema;

pub use design::{build_design_matrix, CoefLabel, DesignMatrix};
pub use diagnostics::{design_diagnostics, DesignDiagnostics, StratumDiagnostic};
pub use io::{
    load_population, load_sample, read_stratum_sizes, write_population, write_sample,
    write_stratum_sizes,
};
pub use schema::{Covariate, CovariateSchema, ModelFormula};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::scalar::Scalar;

/// Relative tolerance for the within-stratum equal-weight diagnostic.
pub const WEIGHT_EQUALITY_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: missing column `{column}` (expected header `{expected}`)")]
    MissingColumn { path: String, column: String, expected: String },
    #[error("{path}: unexpected column `{column}`")]
    UnexpectedColumn { path: String, column: String },
    #[error("{path} line {line}: expected {expected} fields, found {found}")]
    FieldCount { path: String, line: usize, expected: usize, found: usize },
    #[error("{path} line {line}: cannot parse `{value}` in column `{column}`")]
    Parse { path: String, line: usize, column: String, value: String },
    #[error("{path} line {line}: response `{column}` must be 0 or 1, found `{value}`")]
    NonBinaryResponse { path: String, line: usize, column: String, value: String },
    #[error("{path} line {line}: level `{level}` of covariate `{column}` is not in the schema")]
    UnknownLevel { path: String, line: usize, column: String, level: String },
    #[error("{path} line {line}: duplicate unit id {id}")]
    DuplicateUnitId { path: String, line: usize, id: u64 },
    #[error("{path} line {line}: weight must be a positive real, found `{value}`")]
    InvalidWeight { path: String, line: usize, value: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("schema file {path} line {line}: {message}")]
    SchemaFile { path: String, line: usize, message: String },
    #[error("formula error: {0}")]
    Formula(String),
    #[error("record for unit {id}: {message}")]
    InvalidRecord { id: u64, message: String },
    #[error("duplicate unit id {id}")]
    DuplicateUnit { id: u64 },
    #[error("covariate `{covariate}` level `{level}` never occurs in the data; its coefficient is inestimable")]
    EmptyLevel { covariate: String, level: String },
    #[error("stratum {stratum} appears in the sample but not in the population size map")]
    UnknownStratum { stratum: u64 },
    #[error("data set is empty")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One population or sample unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitRecord {
    pub unit_id: u64,
    pub stratum: u64,
    /// One 0/1 value per schema response, in schema order.
    pub responses: Vec<u8>,
    /// Level index per schema covariate, in schema order.
    pub levels: Vec<u32>,
}

impl UnitRecord {
    fn validate(&self, schema: &CovariateSchema) -> Result<(), DataError> {
        if self.responses.len() != schema.responses().len() {
            return Err(DataError::InvalidRecord {
                id: self.unit_id,
                message: format!(
                    "expected {} responses, found {}",
                    schema.responses().len(),
                    self.responses.len()
                ),
            });
        }
        if let Some(bad) = self.responses.iter().find(|&&r| r > 1) {
            return Err(DataError::InvalidRecord {
                id: self.unit_id,
                message: format!("response value {bad} is not 0/1"),
            });
        }
        if self.levels.len() != schema.covariates().len() {
            return Err(DataError::InvalidRecord {
                id: self.unit_id,
                message: format!(
                    "expected {} covariate levels, found {}",
                    schema.covariates().len(),
                    self.levels.len()
                ),
            });
        }
        for (covariate, &level) in schema.covariates().iter().zip(&self.levels) {
            if level as usize >= covariate.levels.len() {
                return Err(DataError::InvalidRecord {
                    id: self.unit_id,
                    message: format!(
                        "level index {level} out of range for covariate `{}`",
                        covariate.name
                    ),
                });
            }
        }
        Ok(())
    }
}

fn build_stratum_index(units: &[UnitRecord]) -> BTreeMap<u64, Vec<usize>> {
    let mut index: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (pos, unit) in units.iter().enumerate() {
        index.entry(unit.stratum).or_default().push(pos);
    }
    index
}

fn check_duplicate_ids(units: &[UnitRecord]) -> Result<(), DataError> {
    let mut seen = BTreeSet::new();
    for unit in units {
        if !seen.insert(unit.unit_id) {
            return Err(DataError::DuplicateUnit { id: unit.unit_id });
        }
    }
    Ok(())
}

/// A finite population of labelled units, indexed by stratum.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    schema: CovariateSchema,
    units: Vec<UnitRecord>,
    stratum_index: BTreeMap<u64, Vec<usize>>,
}

impl FinitePopulation {
    pub fn new(schema: CovariateSchema, units: Vec<UnitRecord>) -> Result<Self, DataError> {
        if units.is_empty() {
            return Err(DataError::Empty);
        }
        check_duplicate_ids(&units)?;
        for unit in &units {
            unit.validate(&schema)?;
        }
        let stratum_index = build_stratum_index(&units);
        Ok(Self { schema, units, stratum_index })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    /// Map stratum id -> positions of its units, ascending.
    pub fn stratum_index(&self) -> &BTreeMap<u64, Vec<usize>> {
        &self.stratum_index
    }

    /// Map stratum id -> N_h.
    pub fn stratum_sizes(&self) -> BTreeMap<u64, u64> {
        self.stratum_index.iter().map(|(&h, idx)| (h, idx.len() as u64)).collect()
    }
}

/// A weighted survey sample drawn by one-step stratified sampling.
#[derive(Debug, Clone)]
pub struct SurveySample<F> {
    schema: CovariateSchema,
    units: Vec<UnitRecord>,
    weights: Vec<F>,
    stratum_index: BTreeMap<u64, Vec<usize>>,
    unequal_weight_strata: Vec<u64>,
}

impl<F: Scalar> SurveySample<F> {
    /// Build a sample, validating weights. Unequal weights inside a stratum
    /// are not an error (real-world weights may be calibrated) but are
    /// surfaced through [`SurveySample::unequal_weight_strata`].
    pub fn new(
        schema: CovariateSchema,
        units: Vec<UnitRecord>,
        weights: Vec<F>,
    ) -> Result<Self, DataError> {
        if units.is_empty() {
            return Err(DataError::Empty);
        }
        if weights.len() != units.len() {
            return Err(DataError::Schema(format!(
                "{} weights for {} units",
                weights.len(),
                units.len()
            )));
        }
        check_duplicate_ids(&units)?;
        for (unit, &w) in units.iter().zip(&weights) {
            unit.validate(&schema)?;
            if !(w.is_finite() && w > F::zero()) {
                return Err(DataError::InvalidRecord {
                    id: unit.unit_id,
                    message: format!("weight {w} is not a positive real"),
                });
            }
        }
        let stratum_index = build_stratum_index(&units);
        let tol = F::cast(WEIGHT_EQUALITY_REL_TOL);
        let mut unequal = Vec::new();
        for (&stratum, positions) in &stratum_index {
            let w0 = weights[positions[0]];
            let off = positions.iter().any(|&p| {
                let w = weights[p];
                (w - w0).abs() > tol * w0.abs().max(w.abs())
            });
            if off {
                unequal.push(stratum);
            }
        }
        Ok(Self { schema, units, weights, stratum_index, unequal_weight_strata: unequal })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    pub fn stratum_index(&self) -> &BTreeMap<u64, Vec<usize>> {
        &self.stratum_index
    }

    /// Strata whose weights are not constant to relative 1e-9; empty for a
    /// clean one-step stratified design.
    pub fn unequal_weight_strata(&self) -> &[u64] {
        &self.unequal_weight_strata
    }

    /// Per-row stratum ids, aligned with `units()`.
    pub fn strata(&self) -> Vec<u64> {
        self.units.iter().map(|u| u.stratum).collect()
    }
}

/// Anything design matrices can be built from: populations and samples.
pub trait SurveyData {
    fn schema(&self) -> &CovariateSchema;
    fn units(&self) -> &[UnitRecord];
}

impl SurveyData for FinitePopulation {
    fn schema(&self) -> &CovariateSchema {
        &self.schema
    }
    fn units(&self) -> &[UnitRecord] {
        &self.units
    }
}

impl<F: Scalar> SurveyData for SurveySample<F> {
    fn schema(&self) -> &CovariateSchema {
        &self.schema
    }
    fn units(&self) -> &[UnitRecord] {
        &self.units
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn population_builds_stratum_partition() {
        let schema = simple_schema(2);
        let units =
            vec![unit(1, 10, 1, 0), unit(2, 10, 0, 1), unit(3, 20, 1, 1), unit(4, 20, 0, 0)];
        let pop = FinitePopulation::new(schema, units).unwrap();
        assert_eq!(pop.size(), 4);
        assert_eq!(pop.stratum_index().len(), 2);
        assert_eq!(pop.stratum_index()[&10], vec![0, 1]);
        assert_eq!(pop.stratum_sizes()[&20], 2);
    }

    #[test]
    fn duplicate_unit_id_rejected() {
        let schema = simple_schema(2);
        let units = vec![unit(1, 10, 1, 0), unit(1, 10, 0, 1)];
        assert!(matches!(
            FinitePopulation::new(schema, units),
            Err(DataError::DuplicateUnit { id: 1 })
        ));
    }

    #[test]
    fn sample_rejects_nonpositive_weight() {
        let schema = simple_schema(2);
        let units = vec![unit(1, 10, 1, 0)];
        let err = SurveySample::new(schema, units, vec![-1.0]).unwrap_err();
        assert!(err.to_string().contains("positive"));
    }

    #[test]
    fn unequal_weights_flag_not_error() {
        let schema = simple_schema(2);
        let units = vec![unit(1, 10, 1, 0), unit(2, 10, 0, 1)];
        let sample = SurveySample::new(schema, units, vec![2.0, 3.0]).unwrap();
        assert_eq!(sample.unequal_weight_strata(), &[10]);
    }

    #[test]
    fn equal_weights_within_tolerance_pass() {
        let schema = simple_schema(2);
        let units = vec![unit(1, 10, 1, 0), unit(2, 10, 0, 1), unit(3, 11, 1, 1)];
        let sample = SurveySample::new(schema, units, vec![3.8, 3.8, 2.0]).unwrap();
        assert!(sample.unequal_weight_strata().is_empty());
    }
}
