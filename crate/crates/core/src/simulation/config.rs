//! Scenario config files: flat `key = value` text with one `[section]` per
//! scenario. Keys before the first section are defaults every scenario
//! inherits; a section that sets `formula` replaces (not extends) inherited
//! formulas. Input paths are resolved against the config file's directory;
//! `output` is taken as given so runs land relative to the caller.
//!
//! ```text
//! schema = demo_schema.txt
//! seed = 42
//!
//! [demo]
//! population = demo_population.csv
//! allocation = demo_allocation.csv
//! formula = y ~ x1
//! methods = m1,m2,m3
//! replicates = 50
//! output = runs/demo
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{AllocationSource, Method, PopulationSource, ScenarioConfig, SchemaSource, SimError};

#[derive(Default, Clone)]
struct RawSection {
    values: BTreeMap<String, (usize, String)>,
    formulas: Vec<String>,
}

impl RawSection {
    fn merge_over(&self, defaults: &RawSection) -> RawSection {
        let mut merged = defaults.clone();
        for (key, value) in &self.values {
            merged.values.insert(key.clone(), value.clone());
        }
        if !self.formulas.is_empty() {
            merged.formulas = self.formulas.clone();
        }
        merged
    }
}

const KNOWN_KEYS: &[&str] = &[
    "schema",
    "population",
    "synth_sample",
    "synth_design_covariates",
    "allocation",
    "allocation_from_sample",
    "formula",
    "methods",
    "replicates",
    "seed",
    "output",
];

/// Parse every scenario in a config file.
pub fn parse_scenario_configs(
    text: &str,
    base_dir: &Path,
) -> Result<Vec<ScenarioConfig>, SimError> {
    let mut defaults = RawSection::default();
    let mut sections: Vec<(String, usize, RawSection)> = Vec::new();
    let mut current: Option<(String, usize, RawSection)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(SimError::Config {
                line,
                message: "section header must look like [name]".into(),
            })?;
            if name.trim().is_empty() {
                return Err(SimError::Config { line, message: "empty section name".into() });
            }
            if let Some(section) = current.take() {
                sections.push(section);
            }
            current = Some((name.trim().to_string(), line, RawSection::default()));
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(SimError::Config {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(SimError::Config { line, message: format!("unknown key `{key}`") });
        }
        if value.is_empty() {
            return Err(SimError::Config { line, message: format!("key `{key}` has no value") });
        }
        let target = match current.as_mut() {
            Some((_, _, section)) => section,
            None => &mut defaults,
        };
        if key == "formula" {
            target.formulas.push(value.to_string());
        } else if target.values.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(SimError::Config {
                line,
                message: format!("key `{key}` set twice in the same scope"),
            });
        }
    }
    if let Some(section) = current.take() {
        sections.push(section);
    }
    if sections.is_empty() {
        return Err(SimError::Config {
            line: 1,
            message: "config defines no [scenario] section".into(),
        });
    }

    sections
        .into_iter()
        .map(|(name, line, section)| {
            build_scenario(name, line, section.merge_over(&defaults), base_dir)
        })
        .collect()
}

fn build_scenario(
    name: String,
    section_line: usize,
    raw: RawSection,
    base_dir: &Path,
) -> Result<ScenarioConfig, SimError> {
    let resolve = |value: &str| -> PathBuf {
        let path = Path::new(value);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        }
    };
    let require = |key: &str| -> Result<(usize, String), SimError> {
        raw.values.get(key).cloned().ok_or(SimError::Config {
            line: section_line,
            message: format!("scenario `{name}` is missing `{key}`"),
        })
    };

    let schema = SchemaSource::Path(resolve(&require("schema")?.1));

    let population = match (raw.values.get("population"), raw.values.get("synth_sample")) {
        (Some((_, path)), None) => PopulationSource::Csv(resolve(path)),
        (None, Some((_, path))) => {
            let design_covariates = raw
                .values
                .get("synth_design_covariates")
                .map(|(_, v)| v.split(',').map(|s| s.trim().to_string()).collect())
                .unwrap_or_default();
            PopulationSource::SynthesizeFromSample { sample: resolve(path), design_covariates }
        }
        (Some((line, _)), Some(_)) => {
            return Err(SimError::Config {
                line: *line,
                message: "set either `population` or `synth_sample`, not both".into(),
            })
        }
        (None, None) => {
            return Err(SimError::Config {
                line: section_line,
                message: format!("scenario `{name}` needs `population` or `synth_sample`"),
            })
        }
    };

    let allocation = match (raw.values.get("allocation"), raw.values.get("allocation_from_sample"))
    {
        (Some((_, path)), None) => AllocationSource::Csv(resolve(path)),
        (None, Some((_, path))) => AllocationSource::FromSample(resolve(path)),
        (Some((line, _)), Some(_)) => {
            return Err(SimError::Config {
                line: *line,
                message: "set either `allocation` or `allocation_from_sample`, not both".into(),
            })
        }
        (None, None) => {
            return Err(SimError::Config {
                line: section_line,
                message: format!(
                    "scenario `{name}` needs `allocation` or `allocation_from_sample`"
                ),
            })
        }
    };

    let (line, methods_text) = require("methods")?;
    let mut methods = Vec::new();
    for token in methods_text.split(',') {
        let method: Method = token.parse().map_err(|message| SimError::Config { line, message })?;
        if methods.contains(&method) {
            return Err(SimError::Config {
                line,
                message: format!("method {method} listed twice"),
            });
        }
        methods.push(method);
    }

    let (line, replicates_text) = require("replicates")?;
    let replicates: u64 = replicates_text.parse().map_err(|_| SimError::Config {
        line,
        message: format!("cannot parse replicates `{replicates_text}`"),
    })?;

    let (line, seed_text) = require("seed")?;
    let seed: u64 = seed_text.parse().map_err(|_| SimError::Config {
        line,
        message: format!("cannot parse seed `{seed_text}`"),
    })?;

    let output_dir = PathBuf::from(&require("output")?.1);

    let config = ScenarioConfig {
        name,
        schema,
        population,
        allocation,
        formulas: raw.formulas,
        methods,
        replicates,
        seed,
        output_dir,
    };
    config.validate()?;
    Ok(config)
}
