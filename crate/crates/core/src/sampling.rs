//! One-step stratified simple random sampling without replacement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::data::{DataError, FinitePopulation, SurveySample, UnitRecord};
use crate::scalar::Scalar;
use crate::streams::stream;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("allocation asks for {requested} units from stratum {stratum} of size {available}")]
    AllocationExceedsStratum { stratum: u64, requested: u64, available: u64 },
    #[error("allocation names stratum {stratum}, which is not in the population")]
    UnknownStratum { stratum: u64 },
    #[error("allocation for stratum {stratum} must be at least 1")]
    ZeroAllocation { stratum: u64 },
    #[error("allocation is empty")]
    Empty,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Number of units to draw from each stratum. Strata absent from the
/// allocation are simply not sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    counts: BTreeMap<u64, u64>,
}

impl Allocation {
    pub fn new(counts: BTreeMap<u64, u64>) -> Result<Self, SampleError> {
        if counts.is_empty() {
            return Err(SampleError::Empty);
        }
        for (&stratum, &n_h) in &counts {
            if n_h == 0 {
                return Err(SampleError::ZeroAllocation { stratum });
            }
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Read a `stratum,n_h` CSV.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SampleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        let path_str = path.display().to_string();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DataError::Empty)?;
        if header.trim() != "stratum,n_h" {
            return Err(SampleError::Data(DataError::MissingColumn {
                path: path_str,
                column: "stratum".into(),
                expected: "stratum,n_h".into(),
            }));
        }
        let mut counts = BTreeMap::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut fields = raw.split(',');
            let mut parse = |column: &str| -> Result<u64, SampleError> {
                let field = fields.next().unwrap_or("").trim();
                field.parse().map_err(|_| {
                    SampleError::Data(DataError::Parse {
                        path: path_str.clone(),
                        line,
                        column: column.into(),
                        value: field.into(),
                    })
                })
            };
            let stratum = parse("stratum")?;
            let n_h = parse("n_h")?;
            counts.insert(stratum, n_h);
        }
        Self::new(counts)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SampleError> {
        let mut out = String::from("stratum,n_h\n");
        for (stratum, n_h) in &self.counts {
            let _ = writeln!(out, "{stratum},{n_h}");
        }
        std::fs::write(path.as_ref(), out).map_err(|source| {
            SampleError::Data(DataError::Io { path: path.as_ref().display().to_string(), source })
        })
    }
}

/// Reuse a real sample's realized per-stratum counts as an allocation, as
/// when re-sampling a synthesized pseudo-population under the original
/// design.
pub fn replicate_allocation_from_sample<F: Scalar>(sample: &SurveySample<F>) -> Allocation {
    let counts = sample
        .stratum_index()
        .iter()
        .map(|(&stratum, positions)| (stratum, positions.len() as u64))
        .collect();
    Allocation::new(counts).expect("samples are nonempty")
}

/// Weights `w_i = N_h / n_h` for already-drawn units, where `n_h` is the
/// realized per-stratum count of `units`.
pub fn assign_weights<F: Scalar>(
    units: &[UnitRecord],
    stratum_sizes: &BTreeMap<u64, u64>,
) -> Result<Vec<F>, SampleError> {
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for unit in units {
        *counts.entry(unit.stratum).or_insert(0) += 1;
    }
    let mut weight_of: BTreeMap<u64, F> = BTreeMap::new();
    for (&stratum, &n_h) in &counts {
        let &cap = stratum_sizes.get(&stratum).ok_or(SampleError::UnknownStratum { stratum })?;
        weight_of.insert(stratum, F::count(cap as usize) / F::count(n_h as usize));
    }
    Ok(units.iter().map(|u| weight_of[&u.stratum]).collect())
}

/// Draw a one-step stratified SRS without replacement and attach weights.
///
/// Each stratum draws from its own stream derived from `(seed, stratum)`,
/// via partial Fisher-Yates over the stratum's unit positions; selected
/// units are emitted in population order.
pub fn stratified_sample<F: Scalar>(
    population: &FinitePopulation,
    allocation: &Allocation,
    seed: u64,
) -> Result<SurveySample<F>, SampleError> {
    let index = population.stratum_index();
    for (&stratum, &n_h) in allocation.counts() {
        let available = index
            .get(&stratum)
            .map(|p| p.len() as u64)
            .ok_or(SampleError::UnknownStratum { stratum })?;
        if n_h > available {
            return Err(SampleError::AllocationExceedsStratum {
                stratum,
                requested: n_h,
                available,
            });
        }
    }

    let mut selected: Vec<usize> = Vec::with_capacity(allocation.total() as usize);
    for (&stratum, &n_h) in allocation.counts() {
        let mut positions = index[&stratum].clone();
        let mut rng = stream(seed, &[stratum]);
        let n_h = n_h as usize;
        for k in 0..n_h {
            let j = k + rng.random_range(0..positions.len() - k);
            positions.swap(k, j);
        }
        let mut chosen: Vec<usize> = positions[..n_h].to_vec();
        chosen.sort_unstable();
        selected.extend(chosen);
    }

    let units: Vec<UnitRecord> =
        selected.iter().map(|&pos| population.units()[pos].clone()).collect();
    let weights = assign_weights::<F>(&units, &population.stratum_sizes())?;
    Ok(SurveySample::new(population.schema().clone(), units, weights)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::{simple_schema, unit};

    fn population(strata: &[(u64, usize)]) -> FinitePopulation {
        let mut units = Vec::new();
        let mut id = 1;
        for &(stratum, size) in strata {
            for k in 0..size {
                units.push(unit(id, stratum, (k % 2) as u8, (k % 2) as u32));
                id += 1;
            }
        }
        FinitePopulation::new(simple_schema(2), units).unwrap()
    }

    fn alloc(entries: &[(u64, u64)]) -> Allocation {
        Allocation::new(entries.iter().copied().collect()).unwrap()
    }

    #[test]
    fn draws_exact_allocation() {
        let strata: Vec<(u64, usize)> = (1..=10).map(|h| (h, 10)).collect();
        let pop = population(&strata);
        let two_each: Vec<(u64, u64)> = (1..=10).map(|h| (h, 2)).collect();
        let allocation = alloc(&two_each);
        let sample: SurveySample<f64> = stratified_sample(&pop, &allocation, 42).unwrap();
        assert_eq!(sample.size(), 20);
        assert_eq!(sample.stratum_index().len(), 10);
        for positions in sample.stratum_index().values() {
            assert_eq!(positions.len(), 2);
        }
    }

    #[test]
    fn census_stratum_gets_weight_one() {
        let pop = population(&[(1, 4), (2, 6)]);
        let allocation = alloc(&[(1, 4), (2, 3)]);
        let sample: SurveySample<f64> = stratified_sample(&pop, &allocation, 7).unwrap();
        for (u, &w) in sample.units().iter().zip(sample.weights()) {
            if u.stratum == 1 {
                assert_eq!(w, 1.0);
            } else {
                assert_eq!(w, 2.0);
            }
        }
    }

    #[test]
    fn weights_follow_size_ratio() {
        let units: Vec<UnitRecord> = (0..10).map(|i| unit(i + 1, 38, (i % 2) as u8, 0)).collect();
        let sizes: BTreeMap<u64, u64> = [(38u64, 38u64)].into();
        let weights: Vec<f64> = assign_weights(&units, &sizes).unwrap();
        assert!(weights.iter().all(|&w| w == 3.8));
        // stratum weight total equals N_h up to float rounding
        let total: f64 = weights.iter().sum();
        assert!((total - 38.0).abs() < 1e-9);
    }

    #[test]
    fn no_repeats_and_determinism() {
        let pop = population(&[(1, 30), (2, 20)]);
        let allocation = alloc(&[(1, 10), (2, 5)]);
        let a: SurveySample<f64> = stratified_sample(&pop, &allocation, 123).unwrap();
        let b: SurveySample<f64> = stratified_sample(&pop, &allocation, 123).unwrap();
        let c: SurveySample<f64> = stratified_sample(&pop, &allocation, 124).unwrap();
        assert_eq!(a.units(), b.units());
        assert_ne!(a.units(), c.units());
        let mut ids: Vec<u64> = a.units().iter().map(|u| u.unit_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), a.size());
    }

    #[test]
    fn oversized_allocation_names_stratum() {
        let pop = population(&[(1, 3)]);
        let allocation = alloc(&[(1, 4)]);
        let err = stratified_sample::<f64>(&pop, &allocation, 0).unwrap_err();
        assert!(matches!(
            err,
            SampleError::AllocationExceedsStratum { stratum: 1, requested: 4, available: 3 }
        ));
    }

    #[test]
    fn unknown_stratum_rejected() {
        let pop = population(&[(1, 3)]);
        let allocation = alloc(&[(9, 1)]);
        let err = stratified_sample::<f64>(&pop, &allocation, 0).unwrap_err();
        assert!(matches!(err, SampleError::UnknownStratum { stratum: 9 }));
    }

    #[test]
    fn replicate_allocation_counts_sample() {
        let pop = population(&[(1, 30), (2, 20)]);
        let allocation = alloc(&[(1, 3), (2, 5)]);
        let sample: SurveySample<f64> = stratified_sample(&pop, &allocation, 5).unwrap();
        let replicated = replicate_allocation_from_sample(&sample);
        assert_eq!(replicated, allocation);
    }

    #[test]
    fn unsampled_strata_are_allowed() {
        let pop = population(&[(1, 10), (2, 10)]);
        let allocation = alloc(&[(1, 5)]);
        let sample: SurveySample<f64> = stratified_sample(&pop, &allocation, 9).unwrap();
        assert_eq!(sample.size(), 5);
        assert!(sample.units().iter().all(|u| u.stratum == 1));
    }
}
