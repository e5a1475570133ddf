//! Dummy-coded design matrices for categorical covariates.
//!
//! Column layout: intercept, then one block per included covariate in schema
//! order, with one column per non-reference level in schema level order.
//! A row whose unit takes the reference level has an all-zero block.

use std::fmt;

use super::{DataError, ModelFormula, SurveyData};
use crate::scalar::Scalar;

/// Label of one design-matrix column / fitted coefficient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoefLabel {
    Intercept,
    Dummy { covariate: String, level: String },
}

impl fmt::Display for CoefLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefLabel::Intercept => write!(f, "intercept"),
            CoefLabel::Dummy { covariate, level } => write!(f, "{covariate}={level}"),
        }
    }
}

/// Dense design matrix with the response extracted from the formula.
#[derive(Debug, Clone)]
pub struct DesignMatrix<F> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<F>,
    labels: Vec<CoefLabel>,
    y: Vec<F>,
}

impl<F: Scalar> DesignMatrix<F> {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Total parameter count l = 1 + sum over covariates of (levels - 1).
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn labels(&self) -> &[CoefLabel] {
        &self.labels
    }

    pub fn y(&self) -> &[F] {
        &self.y
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Test/diagnostic constructor for hand-built matrices.
    pub fn from_parts(rows: Vec<Vec<F>>, labels: Vec<CoefLabel>, y: Vec<F>) -> Self {
        let n_rows = rows.len();
        let n_cols = labels.len();
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in &rows {
            assert_eq!(row.len(), n_cols);
            data.extend_from_slice(row);
        }
        assert_eq!(y.len(), n_rows);
        Self { n_rows, n_cols, data, labels, y }
    }
}

/// Build the dummy-coded design matrix for `formula` over `data`.
///
/// Errors when a non-reference level never occurs in the data, since its
/// coefficient would be inestimable.
pub fn build_design_matrix<F: Scalar, D: SurveyData + ?Sized>(
    data: &D,
    formula: &ModelFormula,
) -> Result<DesignMatrix<F>, DataError> {
    let schema = data.schema();
    let response_idx = schema
        .response_index(&formula.response)
        .ok_or_else(|| DataError::Formula(format!("unknown response `{}`", formula.response)))?;

    // Included covariates in schema order regardless of formula order.
    let mut included: Vec<usize> = Vec::with_capacity(formula.covariates.len());
    for (idx, covariate) in schema.covariates().iter().enumerate() {
        if formula.covariates.iter().any(|n| *n == covariate.name) {
            included.push(idx);
        }
    }
    if included.len() != formula.covariates.len() {
        let missing = formula
            .covariates
            .iter()
            .find(|n| schema.covariate(n).is_none())
            .cloned()
            .unwrap_or_default();
        return Err(DataError::Formula(format!("unknown covariate `{missing}`")));
    }

    // Column offsets and labels.
    let mut labels = vec![CoefLabel::Intercept];
    // (covariate index, level -> column) with usize::MAX marking the reference.
    let mut level_columns: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut col = 1;
    for &cov_idx in &included {
        let covariate = &schema.covariates()[cov_idx];
        let mut columns = vec![usize::MAX; covariate.levels.len()];
        for (level_idx, level) in covariate.levels.iter().enumerate() {
            if level_idx == covariate.reference {
                continue;
            }
            columns[level_idx] = col;
            labels
                .push(CoefLabel::Dummy { covariate: covariate.name.clone(), level: level.clone() });
            col += 1;
        }
        level_columns.push((cov_idx, columns));
    }
    let n_cols = col;

    // Non-reference levels that never occur are inestimable.
    let units = data.units();
    if units.is_empty() {
        return Err(DataError::Empty);
    }
    for (cov_idx, columns) in &level_columns {
        let covariate = &schema.covariates()[*cov_idx];
        for (level_idx, &column) in columns.iter().enumerate() {
            if column == usize::MAX {
                continue;
            }
            let seen = units.iter().any(|u| u.levels[*cov_idx] as usize == level_idx);
            if !seen {
                return Err(DataError::EmptyLevel {
                    covariate: covariate.name.clone(),
                    level: covariate.levels[level_idx].clone(),
                });
            }
        }
    }

    let n_rows = units.len();
    let mut matrix = vec![F::zero(); n_rows * n_cols];
    let mut y = Vec::with_capacity(n_rows);
    for (i, unit) in units.iter().enumerate() {
        let row = &mut matrix[i * n_cols..(i + 1) * n_cols];
        row[0] = F::one();
        for (cov_idx, columns) in &level_columns {
            let level_idx = unit.levels[*cov_idx] as usize;
            let column = columns[level_idx];
            if column != usize::MAX {
                row[column] = F::one();
            }
        }
        y.push(F::count(unit.responses[response_idx] as usize));
    }

    Ok(DesignMatrix { n_rows, n_cols, data: matrix, labels, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::{simple_schema, unit};
    use crate::data::{Covariate, CovariateSchema, FinitePopulation};

    fn wide_schema() -> CovariateSchema {
        let seven: Vec<String> = (1..=7).map(|i| i.to_string()).collect();
        let three: Vec<String> = (1..=3).map(|i| i.to_string()).collect();
        let six: Vec<String> = (1..=6).map(|i| i.to_string()).collect();
        CovariateSchema::new(
            vec![
                Covariate::new("x1", seven, 0).unwrap(),
                Covariate::new("x2", three, 0).unwrap(),
                Covariate::new("x3", six, 0).unwrap(),
            ],
            vec!["y".into()],
        )
        .unwrap()
    }

    fn cycling_population(schema: CovariateSchema, n: usize) -> FinitePopulation {
        let counts: Vec<usize> = schema.covariates().iter().map(|c| c.levels.len()).collect();
        let units = (0..n).map(|i| UnitRecordBuilder { i, counts: &counts }.build()).collect();
        FinitePopulation::new(schema, units).unwrap()
    }

    struct UnitRecordBuilder<'a> {
        i: usize,
        counts: &'a [usize],
    }

    impl UnitRecordBuilder<'_> {
        fn build(&self) -> crate::data::UnitRecord {
            crate::data::UnitRecord {
                unit_id: self.i as u64 + 1,
                stratum: 1,
                responses: vec![(self.i % 2) as u8],
                levels: self
                    .counts
                    .iter()
                    .enumerate()
                    .map(|(c, &k)| ((self.i + c) % k) as u32)
                    .collect(),
            }
        }
    }

    #[test]
    fn column_count_single_covariate_seven_levels() {
        let schema = simple_schema(7);
        let units = (0..14).map(|i| unit(i as u64 + 1, 1, (i % 2) as u8, (i % 7) as u32)).collect();
        let pop = FinitePopulation::new(schema, units).unwrap();
        let formula = ModelFormula::parse("y ~ x1", pop.schema()).unwrap();
        let design: DesignMatrix<f64> = build_design_matrix(&pop, &formula).unwrap();
        assert_eq!(design.n_cols(), 7);
        assert_eq!(design.labels()[0], CoefLabel::Intercept);
        assert_eq!(design.labels().len(), 7);
    }

    #[test]
    fn column_count_three_covariates() {
        let pop = cycling_population(wide_schema(), 60);
        let formula = ModelFormula::parse("y ~ x1 + x2 + x3", pop.schema()).unwrap();
        let design: DesignMatrix<f64> = build_design_matrix(&pop, &formula).unwrap();
        assert_eq!(design.n_cols(), 1 + 6 + 2 + 5);
    }

    #[test]
    fn reference_row_is_intercept_only() {
        let pop = cycling_population(wide_schema(), 60);
        let formula = ModelFormula::parse("y ~ x1 + x2 + x3", pop.schema()).unwrap();
        // replace unit 0 by a genuine all-reference unit
        let schema = wide_schema();
        let all_ref = crate::data::UnitRecord {
            unit_id: 1,
            stratum: 1,
            responses: vec![1],
            levels: vec![0, 0, 0],
        };
        let mut units = cycling_population(schema.clone(), 60).units().to_vec();
        units[0] = all_ref;
        for (i, u) in units.iter_mut().enumerate() {
            u.unit_id = i as u64 + 1;
        }
        let pop = FinitePopulation::new(schema, units).unwrap();
        let design: DesignMatrix<f64> = build_design_matrix(&pop, &formula).unwrap();
        let row = design.row(0);
        assert_eq!(row[0], 1.0);
        assert!(row[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_sums_match_nonreference_level_count() {
        let pop = cycling_population(wide_schema(), 60);
        let formula = ModelFormula::parse("y ~ x1 + x2 + x3", pop.schema()).unwrap();
        let design: DesignMatrix<f64> = build_design_matrix(&pop, &formula).unwrap();
        for (i, u) in pop.units().iter().enumerate() {
            let taken = [0, 1, 2]
                .iter()
                .filter(|&&c| u.levels[c] as usize != pop.schema().covariates()[c].reference)
                .count();
            let sum: f64 = design.row(i).iter().sum();
            assert_eq!(sum, 1.0 + taken as f64);
        }
    }

    #[test]
    fn empty_nonreference_level_errors() {
        let schema = simple_schema(3);
        // level index 2 ("3") never occurs
        let units = vec![unit(1, 1, 1, 0), unit(2, 1, 0, 1), unit(3, 1, 1, 1)];
        let pop = FinitePopulation::new(schema, units).unwrap();
        let formula = ModelFormula::parse("y ~ x1", pop.schema()).unwrap();
        let err = build_design_matrix::<f64, _>(&pop, &formula).unwrap_err();
        match err {
            DataError::EmptyLevel { covariate, level } => {
                assert_eq!(covariate, "x1");
                assert_eq!(level, "3");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn sample_and_population_rows_agree() {
        let schema = simple_schema(3);
        let units = vec![unit(1, 1, 1, 0), unit(2, 1, 0, 1), unit(3, 2, 1, 2)];
        let pop = FinitePopulation::new(schema.clone(), units.clone()).unwrap();
        let sample = crate::data::SurveySample::new(schema, units, vec![1.0, 2.0, 3.0]).unwrap();
        let formula = ModelFormula::parse("y ~ x1", pop.schema()).unwrap();
        let d_pop: DesignMatrix<f64> = build_design_matrix(&pop, &formula).unwrap();
        let d_s: DesignMatrix<f64> = build_design_matrix(&sample, &formula).unwrap();
        for i in 0..3 {
            assert_eq!(d_pop.row(i), d_s.row(i));
        }
        assert_eq!(d_pop.y(), d_s.y());
    }
}
