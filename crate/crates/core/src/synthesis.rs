//! Pseudo-population generation from a weighted sample.
//!
//! For every stratum and observed response combination the weighted unit
//! count is materialized as that many pseudo-units; remaining ("free")
//! categorical covariates are drawn per stratum from supplied categorical
//! distributions. Covariates that the stratification encodes ("design"
//! covariates) are copied from the stratum's sampled units instead.
//!
//! Rounding policy for non-integer weighted cell totals: per-stratum largest
//! remainder. All cells are floored, and the stratum's leftover units (the
//! rounded stratum weight sum minus the floor sum) go to cells by descending
//! fractional part, ties broken by response-combination order. This keeps
//! each cell within one unit of its weighted total and each stratum total
//! equal to its rounded weight sum, so the population size differs from the
//! sample's weight sum by at most half a unit per stratum.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::data::{DataError, FinitePopulation, SurveySample, UnitRecord};
use crate::scalar::Scalar;
use crate::streams::{stream, tags};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no categorical distribution supplied for stratum {stratum}, covariate `{covariate}`")]
    MissingDistribution { stratum: u64, covariate: String },
    #[error("covariate `{covariate}` is not constant within stratum {stratum}, so the stratification cannot encode it")]
    NonConstantDesignCovariate { covariate: String, stratum: u64 },
    #[error("unknown covariate `{covariate}`")]
    UnknownCovariate { covariate: String },
    #[error("distribution for stratum {stratum}, covariate `{covariate}`: {message}")]
    InvalidDistribution { stratum: u64, covariate: String, message: String },
    #[error("stratum {stratum} has no units in the reference data")]
    EmptyStratum { stratum: u64 },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One joint value of the response vector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ResponseCombination(pub Vec<u8>);

/// Weighted and integerized count of one (stratum, response combination) cell.
#[derive(Debug, Clone)]
pub struct StratumCellCount<F> {
    pub stratum: u64,
    pub combination: ResponseCombination,
    pub weighted_total: F,
    pub count: u64,
}

/// Per-stratum level probabilities of one categorical covariate.
#[derive(Debug, Clone)]
pub struct CategoricalDistribution<F> {
    pub covariate: String,
    pub stratum: u64,
    probabilities: Vec<F>,
}

impl<F: Scalar> CategoricalDistribution<F> {
    pub fn new(
        covariate: impl Into<String>,
        stratum: u64,
        probabilities: Vec<F>,
    ) -> Result<Self, SynthError> {
        let covariate = covariate.into();
        let check = |ok: bool, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(SynthError::InvalidDistribution {
                    stratum,
                    covariate: covariate.clone(),
                    message: message.into(),
                })
            }
        };
        check(!probabilities.is_empty(), "empty probability vector")?;
        check(
            probabilities.iter().all(|&p| p >= F::zero() && p <= F::one()),
            "probabilities must lie in [0, 1]",
        )?;
        let total: F = probabilities.iter().copied().sum();
        check((total - F::one()).abs() <= F::cast(1e-12), "probabilities must sum to 1")?;
        Ok(Self { covariate, stratum, probabilities })
    }

    pub fn probabilities(&self) -> &[F] {
        &self.probabilities
    }

    fn draw(&self, uniform: f64) -> u32 {
        let mut acc = 0.0;
        for (k, &p) in self.probabilities.iter().enumerate() {
            acc += p.as_f64();
            if uniform < acc {
                return k as u32;
            }
        }
        (self.probabilities.len() - 1) as u32
    }
}

/// Weighted (stratum, response-combination) cell totals with integer counts
/// by per-stratum largest-remainder rounding. Cells never observed are
/// simply absent.
pub fn cell_counts<F: Scalar>(sample: &SurveySample<F>) -> Vec<StratumCellCount<F>> {
    let mut totals: BTreeMap<(u64, ResponseCombination), F> = BTreeMap::new();
    for (unit, &w) in sample.units().iter().zip(sample.weights()) {
        let key = (unit.stratum, ResponseCombination(unit.responses.clone()));
        *totals.entry(key).or_insert_with(F::zero) += w;
    }

    // Group per stratum so the rounding budget is per stratum.
    let mut per_stratum: BTreeMap<u64, Vec<(ResponseCombination, F)>> = BTreeMap::new();
    for ((stratum, combination), total) in totals {
        per_stratum.entry(stratum).or_default().push((combination, total));
    }

    let mut cells = Vec::new();
    for (stratum, entries) in per_stratum {
        let stratum_total: F = entries.iter().map(|(_, t)| *t).sum();
        let target = stratum_total.round().as_f64() as u64;
        let mut floors: Vec<u64> = Vec::with_capacity(entries.len());
        let mut fractions: Vec<(usize, F)> = Vec::with_capacity(entries.len());
        for (idx, (_, total)) in entries.iter().enumerate() {
            let floor = total.floor();
            floors.push(floor.as_f64() as u64);
            fractions.push((idx, *total - floor));
        }
        let floor_sum: u64 = floors.iter().sum();
        let leftover = target.saturating_sub(floor_sum) as usize;
        // Descending fractional part; ties fall back to cell (combination) order.
        fractions
            .sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite fractions").then(a.0.cmp(&b.0)));
        for &(idx, _) in fractions.iter().take(leftover) {
            floors[idx] += 1;
        }
        for ((combination, total), count) in entries.into_iter().zip(floors) {
            cells.push(StratumCellCount { stratum, combination, weighted_total: total, count });
        }
    }
    cells
}

/// Reference data for covariate-distribution estimation: a census uses raw
/// counts, a weighted sample uses weight-weighted proportions.
pub enum SynthesisReference<'a, F> {
    Census(&'a FinitePopulation),
    WeightedSample(&'a SurveySample<F>),
}

/// Per-stratum level proportions of `covariate` in the reference data.
pub fn covariate_distributions<F: Scalar>(
    reference: &SynthesisReference<'_, F>,
    covariate: &str,
) -> Result<Vec<CategoricalDistribution<F>>, SynthError> {
    let (schema, units, weights): (_, &[UnitRecord], Option<&[F]>) = match reference {
        SynthesisReference::Census(population) => (population.schema(), population.units(), None),
        SynthesisReference::WeightedSample(sample) => {
            (sample.schema(), sample.units(), Some(sample.weights()))
        }
    };
    let (cov_idx, covariate_def) = schema
        .covariate(covariate)
        .ok_or_else(|| SynthError::UnknownCovariate { covariate: covariate.into() })?;
    let n_levels = covariate_def.levels.len();

    let mut per_stratum: BTreeMap<u64, Vec<F>> = BTreeMap::new();
    for (i, unit) in units.iter().enumerate() {
        let w = weights.map_or(F::one(), |ws| ws[i]);
        let entry = per_stratum.entry(unit.stratum).or_insert_with(|| vec![F::zero(); n_levels]);
        entry[unit.levels[cov_idx] as usize] += w;
    }

    let mut out = Vec::with_capacity(per_stratum.len());
    for (stratum, counts) in per_stratum {
        let total: F = counts.iter().copied().sum();
        if !(total > F::zero()) {
            return Err(SynthError::EmptyStratum { stratum });
        }
        let probabilities: Vec<F> = counts.iter().map(|&c| c / total).collect();
        out.push(CategoricalDistribution::new(covariate, stratum, probabilities)?);
    }
    Ok(out)
}

/// Inputs of one synthesis run.
pub struct SynthesisSpec<'a, F> {
    pub sample: &'a SurveySample<F>,
    /// Covariates whose level is a function of the stratum; their values are
    /// copied from the sampled units (and checked to be constant per stratum).
    pub design_covariates: &'a [String],
    /// Distributions for every (stratum, free covariate) pair.
    pub distributions: &'a [CategoricalDistribution<F>],
    pub seed: u64,
}

/// Mass-preservation record of a synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisReport<F> {
    pub seed: u64,
    /// Sum of the sample weights.
    pub mass_before: F,
    /// Units actually generated.
    pub mass_after: u64,
    pub cells: Vec<StratumCellCount<F>>,
}

impl<F: Scalar> SynthesisReport<F> {
    pub fn render_manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "weight mass before rounding: {}", self.mass_before);
        let _ = writeln!(out, "population size after rounding: {}", self.mass_after);
        let _ = writeln!(out, "cells (stratum, responses, weighted total, count):");
        for cell in &self.cells {
            let alpha: Vec<String> = cell.combination.0.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "  {},({}),{},{}",
                cell.stratum,
                alpha.join(" "),
                cell.weighted_total,
                cell.count
            );
        }
        out
    }
}

/// Generate a pseudo-population from a weighted sample.
///
/// Identical `(sample, seed)` inputs produce identical populations: each
/// (stratum, free covariate) pair draws from its own stream derived from the
/// seed, so neither scheduling nor adding covariates perturbs other draws.
pub fn synthesize<F: Scalar>(
    spec: &SynthesisSpec<'_, F>,
) -> Result<(FinitePopulation, SynthesisReport<F>), SynthError> {
    let sample = spec.sample;
    let schema = sample.schema();

    // Split covariates into design (stratum-encoded) and free.
    let mut design_indices = Vec::new();
    for name in spec.design_covariates {
        let (idx, _) = schema
            .covariate(name)
            .ok_or_else(|| SynthError::UnknownCovariate { covariate: name.clone() })?;
        design_indices.push(idx);
    }
    let free_indices: Vec<usize> =
        (0..schema.covariates().len()).filter(|idx| !design_indices.contains(idx)).collect();

    // Stratum -> design-covariate levels, from the sample, constant per stratum.
    let mut design_levels: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    for (&stratum, positions) in sample.stratum_index() {
        let first = &sample.units()[positions[0]];
        let levels: Vec<u32> = design_indices.iter().map(|&idx| first.levels[idx]).collect();
        for &pos in positions {
            let unit = &sample.units()[pos];
            for (slot, &idx) in design_indices.iter().enumerate() {
                if unit.levels[idx] != levels[slot] {
                    return Err(SynthError::NonConstantDesignCovariate {
                        covariate: schema.covariates()[idx].name.clone(),
                        stratum,
                    });
                }
            }
        }
        design_levels.insert(stratum, levels);
    }

    // Distribution lookup for (stratum, covariate index).
    let mut lookup: BTreeMap<(u64, usize), &CategoricalDistribution<F>> = BTreeMap::new();
    for dist in spec.distributions {
        if let Some((idx, covariate)) = schema.covariate(&dist.covariate) {
            if dist.probabilities.len() != covariate.levels.len() {
                return Err(SynthError::InvalidDistribution {
                    stratum: dist.stratum,
                    covariate: dist.covariate.clone(),
                    message: format!(
                        "{} probabilities for {} levels",
                        dist.probabilities.len(),
                        covariate.levels.len()
                    ),
                });
            }
            lookup.insert((dist.stratum, idx), dist);
        }
    }

    let cells = cell_counts(sample);
    let mass_before: F = sample.weights().iter().copied().sum();

    // Group cells per stratum to drive per-stratum generation.
    let mut per_stratum: BTreeMap<u64, Vec<&StratumCellCount<F>>> = BTreeMap::new();
    for cell in &cells {
        per_stratum.entry(cell.stratum).or_default().push(cell);
    }

    let mut units = Vec::new();
    let mut next_id: u64 = 1;
    for (&stratum, stratum_cells) in &per_stratum {
        // One stream per (stratum, free covariate).
        let mut rngs = Vec::with_capacity(free_indices.len());
        for &idx in &free_indices {
            let dist =
                *lookup.get(&(stratum, idx)).ok_or_else(|| SynthError::MissingDistribution {
                    stratum,
                    covariate: schema.covariates()[idx].name.clone(),
                })?;
            let rng = stream(spec.seed, &[tags::SYNTHESIS, stratum, idx as u64]);
            rngs.push((idx, dist, rng));
        }
        let stratum_design = &design_levels[&stratum];
        for cell in stratum_cells {
            for _ in 0..cell.count {
                let mut levels = vec![0u32; schema.covariates().len()];
                for (slot, &idx) in design_indices.iter().enumerate() {
                    levels[idx] = stratum_design[slot];
                }
                for (idx, dist, rng) in rngs.iter_mut() {
                    levels[*idx] = dist.draw(rng.random::<f64>());
                }
                units.push(UnitRecord {
                    unit_id: next_id,
                    stratum,
                    responses: cell.combination.0.clone(),
                    levels,
                });
                next_id += 1;
            }
        }
    }

    let mass_after = units.len() as u64;
    let population = FinitePopulation::new(schema.clone(), units)?;
    Ok((population, SynthesisReport { seed: spec.seed, mass_before, mass_after, cells }))
}
