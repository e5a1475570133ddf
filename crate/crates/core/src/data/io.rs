//! CSV ingestion and serialization.
//!
//! Files are plain UTF-8, comma-separated, unquoted, `.` decimal separator.
//! Line numbers in errors count from 1 and include the header line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CovariateSchema, DataError, FinitePopulation, SurveySample, UnitRecord};
use crate::scalar::Scalar;

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

struct Header {
    /// field index -> column role
    roles: Vec<Role>,
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    UnitId,
    Stratum,
    Weight,
    Response(usize),
    Covariate(usize),
}

fn expected_header(schema: &CovariateSchema, with_weight: bool) -> String {
    let mut fields = vec!["unit_id".to_string(), "stratum".to_string()];
    fields.extend(schema.responses().iter().cloned());
    fields.extend(schema.covariates().iter().map(|c| c.name.clone()));
    if with_weight {
        fields.push("weight".to_string());
    }
    fields.join(",")
}

fn parse_header(
    line: &str,
    schema: &CovariateSchema,
    with_weight: bool,
    path: &str,
) -> Result<Header, DataError> {
    let expected = expected_header(schema, with_weight);
    let missing = |column: &str| DataError::MissingColumn {
        path: path.into(),
        column: column.into(),
        expected: expected.clone(),
    };

    let names: Vec<&str> = line.split(',').map(str::trim).collect();
    let mut roles = Vec::with_capacity(names.len());
    for name in &names {
        let role = if *name == "unit_id" {
            Role::UnitId
        } else if *name == "stratum" {
            Role::Stratum
        } else if *name == "weight" {
            if !with_weight {
                return Err(DataError::UnexpectedColumn {
                    path: path.into(),
                    column: "weight".into(),
                });
            }
            Role::Weight
        } else if let Some(idx) = schema.response_index(name) {
            Role::Response(idx)
        } else if let Some((idx, _)) = schema.covariate(name) {
            Role::Covariate(idx)
        } else {
            return Err(DataError::UnexpectedColumn { path: path.into(), column: (*name).into() });
        };
        if roles.contains(&role) {
            return Err(DataError::UnexpectedColumn {
                path: path.into(),
                column: format!("{name} (duplicated)"),
            });
        }
        roles.push(role);
    }
    if !roles.contains(&Role::UnitId) {
        return Err(missing("unit_id"));
    }
    if !roles.contains(&Role::Stratum) {
        return Err(missing("stratum"));
    }
    if with_weight && !roles.contains(&Role::Weight) {
        return Err(missing("weight"));
    }
    for (idx, response) in schema.responses().iter().enumerate() {
        if !roles.contains(&Role::Response(idx)) {
            return Err(missing(response));
        }
    }
    for (idx, covariate) in schema.covariates().iter().enumerate() {
        if !roles.contains(&Role::Covariate(idx)) {
            return Err(missing(&covariate.name));
        }
    }
    Ok(Header { roles })
}

struct ParsedRow<F> {
    record: UnitRecord,
    weight: Option<F>,
}

fn parse_row<F: Scalar>(
    fields: &[&str],
    header: &Header,
    schema: &CovariateSchema,
    path: &str,
    line: usize,
) -> Result<ParsedRow<F>, DataError> {
    let mut unit_id = 0u64;
    let mut stratum = 0u64;
    let mut weight = None;
    let mut responses = vec![0u8; schema.responses().len()];
    let mut levels = vec![0u32; schema.covariates().len()];

    for (field, role) in fields.iter().zip(&header.roles) {
        let field = field.trim();
        match role {
            Role::UnitId => {
                unit_id = field.parse().map_err(|_| DataError::Parse {
                    path: path.into(),
                    line,
                    column: "unit_id".into(),
                    value: field.into(),
                })?;
            }
            Role::Stratum => {
                stratum = field.parse().map_err(|_| DataError::Parse {
                    path: path.into(),
                    line,
                    column: "stratum".into(),
                    value: field.into(),
                })?;
            }
            Role::Weight => {
                let w: F = field.parse().map_err(|_| DataError::InvalidWeight {
                    path: path.into(),
                    line,
                    value: field.into(),
                })?;
                if !(w.is_finite() && w > F::zero()) {
                    return Err(DataError::InvalidWeight {
                        path: path.into(),
                        line,
                        value: field.into(),
                    });
                }
                weight = Some(w);
            }
            Role::Response(idx) => {
                responses[*idx] = match field {
                    "0" => 0,
                    "1" => 1,
                    _ => {
                        return Err(DataError::NonBinaryResponse {
                            path: path.into(),
                            line,
                            column: schema.responses()[*idx].clone(),
                            value: field.into(),
                        })
                    }
                };
            }
            Role::Covariate(idx) => {
                let covariate = &schema.covariates()[*idx];
                levels[*idx] =
                    covariate.level_index(field).ok_or_else(|| DataError::UnknownLevel {
                        path: path.into(),
                        line,
                        column: covariate.name.clone(),
                        level: field.into(),
                    })?;
            }
        }
    }
    Ok(ParsedRow { record: UnitRecord { unit_id, stratum, responses, levels }, weight })
}

fn parse_file<F: Scalar>(
    path: &Path,
    schema: &CovariateSchema,
    with_weight: bool,
) -> Result<(Vec<UnitRecord>, Vec<F>), DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(DataError::Empty)?;
    let header = parse_header(header_line, schema, with_weight, &path_str)?;

    let mut units = Vec::new();
    let mut weights = Vec::new();
    let mut seen_ids: BTreeMap<u64, usize> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != header.roles.len() {
            return Err(DataError::FieldCount {
                path: path_str,
                line,
                expected: header.roles.len(),
                found: fields.len(),
            });
        }
        let parsed = parse_row::<F>(&fields, &header, schema, &path_str, line)?;
        if seen_ids.insert(parsed.record.unit_id, line).is_some() {
            return Err(DataError::DuplicateUnitId {
                path: path_str,
                line,
                id: parsed.record.unit_id,
            });
        }
        if with_weight {
            weights.push(parsed.weight.expect("weight parsed when required"));
        }
        units.push(parsed.record);
    }
    Ok((units, weights))
}

/// Load a population CSV (`unit_id,stratum,<responses...>,<covariates...>`).
pub fn load_population(
    path: impl AsRef<Path>,
    schema: &CovariateSchema,
) -> Result<FinitePopulation, DataError> {
    let (units, _) = parse_file::<f64>(path.as_ref(), schema, false)?;
    FinitePopulation::new(schema.clone(), units)
}

/// Load a sample CSV (population columns plus `weight`).
pub fn load_sample<F: Scalar>(
    path: impl AsRef<Path>,
    schema: &CovariateSchema,
) -> Result<SurveySample<F>, DataError> {
    let (units, weights) = parse_file::<F>(path.as_ref(), schema, true)?;
    SurveySample::new(schema.clone(), units, weights)
}

fn render_units<F: Scalar>(
    schema: &CovariateSchema,
    units: &[UnitRecord],
    weights: Option<&[F]>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", expected_header(schema, weights.is_some()));
    for (i, unit) in units.iter().enumerate() {
        let _ = write!(out, "{},{}", unit.unit_id, unit.stratum);
        for &r in &unit.responses {
            let _ = write!(out, ",{r}");
        }
        for (covariate, &level) in schema.covariates().iter().zip(&unit.levels) {
            let _ = write!(out, ",{}", covariate.levels[level as usize]);
        }
        if let Some(weights) = weights {
            let _ = write!(out, ",{}", weights[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_population(
    path: impl AsRef<Path>,
    population: &FinitePopulation,
) -> Result<(), DataError> {
    let text = render_units::<f64>(population.schema(), population.units(), None);
    fs::write(path.as_ref(), text).map_err(|e| io_err(path.as_ref(), e))
}

pub fn write_sample<F: Scalar>(
    path: impl AsRef<Path>,
    sample: &SurveySample<F>,
) -> Result<(), DataError> {
    let text = render_units(sample.schema(), sample.units(), Some(sample.weights()));
    fs::write(path.as_ref(), text).map_err(|e| io_err(path.as_ref(), e))
}

/// Read a `stratum,N_h` CSV into a size map (used for FPC input).
pub fn read_stratum_sizes(path: impl AsRef<Path>) -> Result<BTreeMap<u64, u64>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Empty)?;
    if header.trim() != "stratum,N_h" {
        return Err(DataError::MissingColumn {
            path: path_str,
            column: "stratum".into(),
            expected: "stratum,N_h".into(),
        });
    }
    let mut sizes = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split(',');
        let parse = |field: Option<&str>, column: &str| -> Result<u64, DataError> {
            let field = field.unwrap_or("").trim();
            field.parse().map_err(|_| DataError::Parse {
                path: path_str.clone(),
                line,
                column: column.into(),
                value: field.into(),
            })
        };
        let stratum = parse(fields.next(), "stratum")?;
        let size = parse(fields.next(), "N_h")?;
        sizes.insert(stratum, size);
    }
    Ok(sizes)
}

pub fn write_stratum_sizes(
    path: impl AsRef<Path>,
    sizes: &BTreeMap<u64, u64>,
) -> Result<(), DataError> {
    let mut out = String::from("stratum,N_h\n");
    for (stratum, size) in sizes {
        let _ = writeln!(out, "{stratum},{size}");
    }
    fs::write(path.as_ref(), out).map_err(|e| io_err(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::simple_schema;
    use crate::data::Covariate;

    fn two_response_schema() -> CovariateSchema {
        CovariateSchema::new(
            vec![Covariate::new("x1", vec!["a".into(), "b".into()], 0).unwrap()],
            vec!["y".into(), "z".into()],
        )
        .unwrap()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_population_preserving_order() {
        let schema = simple_schema(2);
        let f = write_temp("unit_id,stratum,y,x1\n1,10,1,1\n2,10,0,2\n3,20,1,2\n4,20,0,1\n");
        let pop = load_population(f.path(), &schema).unwrap();
        assert_eq!(pop.size(), 4);
        assert_eq!(pop.stratum_index().len(), 2);
        assert_eq!(pop.units()[2].unit_id, 3);
        assert_eq!(pop.stratum_index()[&10].len(), 2);
    }

    #[test]
    fn nonbinary_response_names_line_and_column() {
        let schema = simple_schema(2);
        let f = write_temp("unit_id,stratum,y,x1\n1,10,2,1\n");
        let err = load_population(f.path(), &schema).unwrap_err();
        match err {
            DataError::NonBinaryResponse { line, column, value, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "y");
                assert_eq!(value, "2");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_level_lists_offender() {
        let schema = simple_schema(2);
        let f = write_temp("unit_id,stratum,y,x1\n1,10,1,9\n");
        let err = load_population(f.path(), &schema).unwrap_err();
        assert!(err.to_string().contains("level `9`"));
    }

    #[test]
    fn duplicate_id_names_line() {
        let schema = simple_schema(2);
        let f = write_temp("unit_id,stratum,y,x1\n1,10,1,1\n1,10,0,2\n");
        let err = load_population(f.path(), &schema).unwrap_err();
        match err {
            DataError::DuplicateUnitId { line, id, .. } => {
                assert_eq!(line, 3);
                assert_eq!(id, 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sample_weights_parse_and_validate() {
        let schema = simple_schema(2);
        let f = write_temp("unit_id,stratum,y,x1,weight\n1,1,1,1,3.8\n2,1,0,2,3.8\n3,2,1,1,2.0\n");
        let sample: SurveySample<f64> = load_sample(f.path(), &schema).unwrap();
        assert_eq!(sample.weights(), &[3.8, 3.8, 2.0]);
        assert!(sample.unequal_weight_strata().is_empty());

        let bad = write_temp("unit_id,stratum,y,x1,weight\n1,1,1,1,-1\n");
        let err = load_sample::<f64>(bad.path(), &schema).unwrap_err();
        assert!(matches!(err, DataError::InvalidWeight { line: 2, .. }));
    }

    #[test]
    fn unequal_weights_within_stratum_flagged_on_load() {
        let schema = simple_schema(2);
        let f = write_temp("unit_id,stratum,y,x1,weight\n1,1,1,1,2.0\n2,1,0,2,3.0\n");
        let sample: SurveySample<f64> = load_sample(f.path(), &schema).unwrap();
        assert_eq!(sample.unequal_weight_strata(), &[1]);
    }

    #[test]
    fn missing_weight_column_mentions_expected_header() {
        let schema = simple_schema(2);
        let f = write_temp("unit_id,stratum,y,x1\n1,1,1,1\n");
        let err = load_sample::<f64>(f.path(), &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("weight"));
        assert!(msg.contains("unit_id,stratum,y,x1,weight"));
    }

    #[test]
    fn round_trip_is_identical() {
        let schema = two_response_schema();
        let f = write_temp(
            "unit_id,stratum,y,z,x1,weight\n1,1,1,0,a,3.8\n2,1,0,1,b,3.8\n3,2,1,1,a,2.5\n",
        );
        let sample: SurveySample<f64> = load_sample(f.path(), &schema).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_sample(out.path(), &sample).unwrap();
        let reloaded: SurveySample<f64> = load_sample(out.path(), &schema).unwrap();
        assert_eq!(reloaded.units(), sample.units());
        assert_eq!(reloaded.weights(), sample.weights());
    }

    #[test]
    fn stratum_sizes_round_trip() {
        let sizes: BTreeMap<u64, u64> = [(1, 38), (2, 14535)].into();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_stratum_sizes(f.path(), &sizes).unwrap();
        assert_eq!(read_stratum_sizes(f.path()).unwrap(), sizes);
    }
}
