//! Covariate schemas, the schema text format and model formulas.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use super::DataError;

/// A categorical covariate with an ordered level list and a reference level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Covariate {
    pub name: String,
    pub levels: Vec<String>,
    pub reference: usize,
}

impl Covariate {
    pub fn new(
        name: impl Into<String>,
        levels: Vec<String>,
        reference: usize,
    ) -> Result<Self, DataError> {
        let name = name.into();
        validate_token(&name, "covariate name")?;
        if levels.len() < 2 {
            return Err(DataError::Schema(format!(
                "covariate `{name}` needs at least 2 levels, found {}",
                levels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for level in &levels {
            validate_token(level, "level name")?;
            if !seen.insert(level.clone()) {
                return Err(DataError::Schema(format!(
                    "covariate `{name}` has duplicate level `{level}`"
                )));
            }
        }
        if reference >= levels.len() {
            return Err(DataError::Schema(format!(
                "covariate `{name}` reference index {reference} out of range"
            )));
        }
        Ok(Self { name, levels, reference })
    }

    pub fn level_index(&self, level: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == level).map(|i| i as u32)
    }
}

/// Ordered covariates and binary response names for one survey.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
    responses: Vec<String>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>, responses: Vec<String>) -> Result<Self, DataError> {
        if responses.is_empty() {
            return Err(DataError::Schema("schema needs at least one response".into()));
        }
        let mut names = BTreeSet::new();
        for response in &responses {
            validate_token(response, "response name")?;
            if !names.insert(response.clone()) {
                return Err(DataError::Schema(format!("duplicate response `{response}`")));
            }
        }
        for covariate in &covariates {
            if !names.insert(covariate.name.clone()) {
                return Err(DataError::Schema(format!(
                    "name `{}` used more than once in the schema",
                    covariate.name
                )));
            }
        }
        Ok(Self { covariates, responses })
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn responses(&self) -> &[String] {
        &self.responses
    }

    pub fn covariate(&self, name: &str) -> Option<(usize, &Covariate)> {
        self.covariates.iter().enumerate().find(|(_, c)| c.name == name)
    }

    pub fn response_index(&self, name: &str) -> Option<usize> {
        self.responses.iter().position(|r| r == name)
    }

    /// Parse the schema text format:
    ///
    /// ```text
    /// # comment
    /// response web
    /// covariate x1 levels 1,2,3 reference 1
    /// covariate x2 levels a,b          # reference defaults to the first level
    /// ```
    pub fn parse(text: &str, path: &str) -> Result<Self, DataError> {
        let mut covariates = Vec::new();
        let mut responses = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut words = content.split_whitespace();
            match words.next() {
                Some("response") => {
                    let name = words.next().ok_or_else(|| DataError::SchemaFile {
                        path: path.into(),
                        line,
                        message: "response needs a name".into(),
                    })?;
                    if words.next().is_some() {
                        return Err(DataError::SchemaFile {
                            path: path.into(),
                            line,
                            message: "unexpected trailing tokens after response name".into(),
                        });
                    }
                    responses.push(name.to_string());
                }
                Some("covariate") => {
                    let name = words.next().ok_or_else(|| DataError::SchemaFile {
                        path: path.into(),
                        line,
                        message: "covariate needs a name".into(),
                    })?;
                    match words.next() {
                        Some("levels") => {}
                        _ => {
                            return Err(DataError::SchemaFile {
                                path: path.into(),
                                line,
                                message: "expected `levels` after the covariate name".into(),
                            })
                        }
                    }
                    let levels: Vec<String> = words
                        .next()
                        .unwrap_or("")
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect();
                    let reference = match words.next() {
                        None => 0,
                        Some("reference") => {
                            let level = words.next().ok_or_else(|| DataError::SchemaFile {
                                path: path.into(),
                                line,
                                message: "reference needs a level name".into(),
                            })?;
                            levels.iter().position(|l| l == level).ok_or_else(|| {
                                DataError::SchemaFile {
                                    path: path.into(),
                                    line,
                                    message: format!("reference level `{level}` not in level list"),
                                }
                            })?
                        }
                        Some(other) => {
                            return Err(DataError::SchemaFile {
                                path: path.into(),
                                line,
                                message: format!("unexpected token `{other}`"),
                            })
                        }
                    };
                    let covariate = Covariate::new(name, levels, reference).map_err(|e| {
                        DataError::SchemaFile { path: path.into(), line, message: e.to_string() }
                    })?;
                    covariates.push(covariate);
                }
                Some(other) => {
                    return Err(DataError::SchemaFile {
                        path: path.into(),
                        line,
                        message: format!("unknown directive `{other}`"),
                    })
                }
                None => unreachable!(),
            }
        }
        Self::new(covariates, responses)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Tokens end up as CSV header fields and cell values, so keep them clean.
fn validate_token(token: &str, what: &str) -> Result<(), DataError> {
    if token.is_empty() {
        return Err(DataError::Schema(format!("{what} must not be empty")));
    }
    if token.chars().any(|c| c == ',' || c.is_whitespace()) {
        return Err(DataError::Schema(format!(
            "{what} `{token}` must not contain commas or whitespace"
        )));
    }
    Ok(())
}

/// `response ~ cov1 + cov2 + ...`, main effects only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFormula {
    pub response: String,
    pub covariates: Vec<String>,
}

impl ModelFormula {
    pub fn new(
        response: impl Into<String>,
        covariates: Vec<String>,
        schema: &CovariateSchema,
    ) -> Result<Self, DataError> {
        let response = response.into();
        if schema.response_index(&response).is_none() {
            return Err(DataError::Formula(format!("unknown response `{response}`")));
        }
        let mut seen = BTreeSet::new();
        for name in &covariates {
            if schema.covariate(name).is_none() {
                return Err(DataError::Formula(format!("unknown covariate `{name}`")));
            }
            if !seen.insert(name.clone()) {
                return Err(DataError::Formula(format!("covariate `{name}` repeats")));
            }
        }
        Ok(Self { response, covariates })
    }

    /// Parse `y ~ x1 + x2` against a schema.
    pub fn parse(text: &str, schema: &CovariateSchema) -> Result<Self, DataError> {
        let mut sides = text.splitn(2, '~');
        let lhs = sides.next().unwrap_or("").trim();
        let rhs = sides
            .next()
            .ok_or_else(|| DataError::Formula(format!("`{text}` is missing `~`")))?
            .trim();
        if lhs.is_empty() {
            return Err(DataError::Formula(format!("`{text}` has no response")));
        }
        let covariates: Vec<String> = if rhs == "1" || rhs.is_empty() {
            Vec::new()
        } else {
            rhs.split('+').map(|s| s.trim().to_string()).collect()
        };
        if covariates.iter().any(String::is_empty) {
            return Err(DataError::Formula(format!("`{text}` has an empty covariate term")));
        }
        Self::new(lhs, covariates, schema)
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.covariates.is_empty() {
            write!(f, "{} ~ 1", self.response)
        } else {
            write!(f, "{} ~ {}", self.response, self.covariates.join(" + "))
        }
    }
}
