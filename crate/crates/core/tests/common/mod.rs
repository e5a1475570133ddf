//! Shared test oracles and instance generators.
//!
//! Everything here is deliberately independent of the library's solver
//! paths: the weighted log-likelihood, the derivative-free optimizer and
//! the Gauss-Hermite integrator are written from scratch against the raw
//! data so they can serve as oracles for the production code.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svylogit::data::{Covariate, CovariateSchema, ModelFormula, SurveySample, UnitRecord};

// ---------------------------------------------------------------------------
// independent logistic log-likelihood
// ---------------------------------------------------------------------------

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Weighted logistic log-likelihood from raw rows, no library code involved.
pub fn weighted_loglik(rows: &[Vec<f64>], y: &[f64], weights: &[f64], beta: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .zip(weights)
        .map(|((row, &yi), &wi)| {
            let eta: f64 = row.iter().zip(beta).map(|(&x, &b)| x * b).sum();
            wi * (yi * eta - softplus(eta))
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Nelder-Mead (derivative-free minimizer)
// ---------------------------------------------------------------------------

/// Minimize `f` from `start` by the Nelder-Mead simplex method. Runs two
/// passes (the second restarts from the first pass's best point) to reach
/// tight tolerances on smooth convex objectives.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64]) -> Vec<f64> {
    let mut best = start.to_vec();
    for pass in 0..2 {
        let scale = if pass == 0 { 0.5 } else { 0.05 };
        best = nelder_mead_once(f, &best, scale, 4000);
    }
    best
}

fn nelder_mead_once(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    scale: f64,
    max_iter: usize,
) -> Vec<f64> {
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..dim {
        let mut point = start.to_vec();
        point[i] += scale;
        let value = f(&point);
        simplex.push((point, value));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[dim].1 - simplex[0].1;
        let size: f64 =
            (0..dim).map(|j| (simplex[dim].0[j] - simplex[0].0[j]).abs()).fold(0.0, f64::max);
        if spread.abs() < 1e-14 && size < 1e-10 {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(p, _)| p[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let point_at = |t: f64| -> Vec<f64> {
            (0..dim).map(|j| centroid[j] + t * (worst.0[j] - centroid[j])).collect()
        };

        let reflected = point_at(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = point_at(-2.0);
            let fe = f(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 { point_at(-0.5) } else { point_at(0.5) };
            let fc = f(&contracted);
            if fc < worst.1.min(fr) {
                simplex[dim] = (contracted, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for j in 0..dim {
                        vertex.0[j] = best[j] + 0.5 * (vertex.0[j] - best[j]);
                    }
                    vertex.1 = f(&vertex.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0].0.clone()
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (physicists' weight, e^-x^2)
// ---------------------------------------------------------------------------

/// Nodes and weights of n-point Gauss-Hermite quadrature, by Newton's method
/// on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // orthonormal value and derivative at x
    let eval = |x: f64| -> (f64, f64) {
        let mut prev = 0.0f64;
        let mut current = std::f64::consts::PI.powf(-0.25);
        for k in 0..n {
            let next = x * (2.0 / (k as f64 + 1.0)).sqrt() * current
                - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
            prev = current;
            current = next;
        }
        let derivative = (2.0 * n as f64).sqrt() * prev;
        (current, derivative)
    };

    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..half {
        // classic initial guesses, largest root first
        z = match i {
            0 => {
                let a = 2.0 * n as f64 + 1.0;
                a.sqrt() - 1.85575 * a.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        for _ in 0..200 {
            let (value, derivative) = eval(z);
            let step = value / derivative;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, derivative) = eval(z);
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        let w = 2.0 / (derivative * derivative);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// One stratum of a toy mixed instance in raw form.
pub struct RawStratum {
    pub eta_base: Vec<f64>, // x_i' gamma per unit
    pub y: Vec<f64>,
}

/// Marginal log-likelihood of a random-intercept logistic model by 50-node
/// adaptive Gauss-Hermite quadrature, computed from raw data only.
pub fn gh_mixed_loglik(strata: &[RawStratum], sigma2: f64, n_nodes: usize) -> f64 {
    let (nodes, weights) = gauss_hermite(n_nodes);
    let sigma = sigma2.sqrt();
    let mut total = 0.0;
    for stratum in strata {
        // integrand exponent: conditional loglik + normal log-density
        let exponent = |u: f64| -> f64 {
            let conditional: f64 = stratum
                .eta_base
                .iter()
                .zip(&stratum.y)
                .map(|(&base, &y)| {
                    let eta = base + u;
                    y * eta - softplus(eta)
                })
                .sum();
            conditional - u * u / (2.0 * sigma2) - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
        };

        // mode and curvature-based scale by golden-section search
        let bound = 5.0 * sigma * (stratum.y.len() as f64).sqrt() + 5.0;
        let mode = golden_max(&exponent, -bound, bound);
        let h = 1e-4 * (1.0 + mode.abs());
        let second = (exponent(mode + h) - 2.0 * exponent(mode) + exponent(mode - h)) / (h * h);
        let scale = (-1.0 / second).max(1e-12).sqrt();

        // u = mode + sqrt(2) * scale * t
        let factor = std::f64::consts::SQRT_2 * scale;
        let mut terms: Vec<f64> = Vec::with_capacity(n_nodes);
        for (&t, &w) in nodes.iter().zip(&weights) {
            terms.push(w.ln() + t * t + exponent(mode + factor * t));
        }
        let max_term = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|&v| (v - max_term).exp()).sum();
        total += factor.ln() + max_term + sum.ln();
    }
    total
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > 1e-12 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        }
    }
    (lo + hi) / 2.0
}

// ---------------------------------------------------------------------------
// random instances
// ---------------------------------------------------------------------------

pub fn integer_levels(k: usize) -> Vec<String> {
    (1..=k).map(|i| i.to_string()).collect()
}

/// Schema with covariates of the given level counts and one response `y`.
pub fn schema_with_levels(level_counts: &[usize]) -> CovariateSchema {
    let covariates = level_counts
        .iter()
        .enumerate()
        .map(|(i, &k)| Covariate::new(format!("x{}", i + 1), integer_levels(k), 0).unwrap())
        .collect();
    CovariateSchema::new(covariates, vec!["y".to_string()]).unwrap()
}

pub struct RandomInstance {
    pub sample: SurveySample<f64>,
    pub formula: ModelFormula,
    /// Dummy-coded rows mirroring the library's layout, built independently.
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// A random estimable logistic instance with n <= `n_max` units and
/// l <= `l_max` coefficients, on 2-4 strata with weights in [0.5, 10].
pub fn random_instance(seed: u64, n_max: usize, l_max: usize) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // covariate structure: keep 1 + sum(K_d - 1) <= l_max
    let mut level_counts: Vec<usize> = Vec::new();
    let mut l = 1;
    let covariate_count = rng.random_range(1..=2);
    for _ in 0..covariate_count {
        let room = l_max - l;
        if room < 1 {
            break;
        }
        let k = rng.random_range(2..=(room + 1).min(4));
        l += k - 1;
        level_counts.push(k);
    }
    if level_counts.is_empty() {
        level_counts.push(2);
        l = 2;
    }
    let schema = schema_with_levels(&level_counts);

    let n = rng.random_range((20 * l).min(n_max)..=n_max).max(8 * l);
    let n_strata = rng.random_range(2..=4usize);

    // modest true coefficients keep the instance away from separation
    let truth: Vec<f64> = (0..l).map(|_| rng.random_range(-0.8..0.8)).collect();

    let max_levels = *level_counts.iter().max().unwrap();
    let mut units = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        // cycling the first units guarantees every level occurs
        let levels: Vec<u32> = level_counts
            .iter()
            .map(|&k| if i < max_levels { (i % k) as u32 } else { rng.random_range(0..k as u32) })
            .collect();
        let mut row = vec![0.0; l];
        row[0] = 1.0;
        let mut col = 1;
        for (covariate, &k) in level_counts.iter().enumerate() {
            for level in 1..k {
                if levels[covariate] == level as u32 {
                    row[col] = 1.0;
                }
                col += 1;
            }
        }
        let eta: f64 = row.iter().zip(&truth).map(|(&x, &b)| x * b).sum();
        let p = 1.0 / (1.0 + (-eta).exp());
        let yi = if rng.random::<f64>() < p { 1u8 } else { 0u8 };
        let stratum = 1 + (i % n_strata) as u64;
        units.push(UnitRecord { unit_id: i as u64 + 1, stratum, responses: vec![yi], levels });
        weights.push(rng.random_range(0.5..10.0));
        rows.push(row);
        y.push(yi as f64);
    }
    let sample = SurveySample::new(schema, units, weights).unwrap();
    let covariate_names: Vec<String> = (1..=level_counts.len()).map(|i| format!("x{i}")).collect();
    let formula = ModelFormula::new("y", covariate_names, sample.schema()).unwrap();
    RandomInstance { sample, formula, rows, y }
}
