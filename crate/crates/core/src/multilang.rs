//! Average several languages' transition models into one: each row of the
//! output is the fixed-support W2-squared barycenter of the corresponding
//! rows, solved by entropic iterative projections with a decreasing
//! regularization schedule and, on tiny alphabets, polished against exact
//! transport evaluations.

use serde::{Deserialize, Serialize};

use crate::corpus::Alphabet;
use crate::error::{Error, Result};
use crate::markov::{stationary_distribution, ReducibleMode, TransitionModel};
use crate::metric_opt::DistanceMatrix;
use crate::transport::transport_cost;

/// Regularization schedule, strongest to weakest.
const EPSILON_LEVELS: [f64; 3] = [1e-1, 1e-2, 1e-3];
const INNER_MAX_ITERS: usize = 10_000;
const INNER_TOL: f64 = 1e-10;
/// Exact polishing is a small-alphabet refinement.
const POLISH_MAX_SUPPORT: usize = 6;

/// Transition models over a shared alphabet with mixture weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageEnsemble {
    pub models: Vec<TransitionModel>,
    pub weights: Vec<f64>,
}

impl LanguageEnsemble {
    pub fn uniform(models: Vec<TransitionModel>) -> Result<Self> {
        let k = models.len();
        if k == 0 {
            return Err(Error::invalid("ensemble needs at least one model"));
        }
        let ensemble = LanguageEnsemble {
            weights: vec![1.0 / k as f64; k],
            models,
        };
        ensemble.validate()?;
        Ok(ensemble)
    }

    pub fn weighted(models: Vec<TransitionModel>, weights: Vec<f64>) -> Result<Self> {
        let ensemble = LanguageEnsemble { models, weights };
        ensemble.validate()?;
        Ok(ensemble)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.models.len() != self.weights.len() {
            return Err(Error::invalid("models and weights must match and be non-empty"));
        }
        let alphabet = &self.models[0].alphabet;
        if self.models.iter().any(|m| &m.alphabet != alphabet) {
            return Err(Error::AlphabetMismatch);
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("weights must be a probability vector"));
        }
        Ok(())
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.models[0].alphabet
    }
}

/// W2 squared between distributions on the alphabet: exact transport under
/// the squared ground metric.
pub fn w2_squared(p: &[f64], q: &[f64], ground: &DistanceMatrix) -> Result<f64> {
    transport_cost(p, q, |i, j| {
        let d = ground.dist[(i, j)];
        d * d
    })
}

/// Weighted barycenter objective: sum_i w_i W2^2(row_i, candidate).
pub fn barycenter_objective(
    rows: &[Vec<f64>],
    weights: &[f64],
    ground: &DistanceMatrix,
    candidate: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (row, &w) in rows.iter().zip(weights) {
        if w > 0.0 {
            total += w * w2_squared(row, candidate, ground)?;
        }
    }
    Ok(total)
}

fn validate_rows(rows: &[Vec<f64>], weights: &[f64], n: usize) -> Result<()> {
    if rows.is_empty() || rows.len() != weights.len() {
        return Err(Error::invalid("rows and weights must match and be non-empty"));
    }
    for row in rows {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid(format!("row sums to {sum}")));
        }
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("weights must be a probability vector"));
    }
    Ok(())
}

/// One entropic level of iterative Bregman projections for the barycenter.
/// Returns the barycenter estimate, or None if the kernel is too sharp for
/// these marginals (mass vanishes to zero).
fn entropic_level(
    rows: &[Vec<f64>],
    weights: &[f64],
    cost: &[f64],
    n: usize,
    epsilon: f64,
) -> Option<Vec<f64>> {
    let kernel: Vec<f64> = cost.iter().map(|&c| (-c / epsilon).exp()).collect();
    let mat_vec = |v: &[f64], transpose: bool| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let k = if transpose { kernel[j * n + i] } else { kernel[i * n + j] };
                acc += k * v[j];
            }
            out[i] = acc;
        }
        out
    };

    let s = rows.len();
    let mut scalings = vec![vec![1.0f64; n]; s];
    let mut estimate = vec![1.0 / n as f64; n];
    for _ in 0..INNER_MAX_ITERS {
        let mut log_estimate = vec![0.0f64; n];
        let mut pushed = Vec::with_capacity(s);
        for (row, v) in rows.iter().zip(&scalings) {
            let kv = mat_vec(v, false);
            let u: Vec<f64> = row
                .iter()
                .zip(&kv)
                .map(|(&a, &kvi)| if kvi > 0.0 { a / kvi } else { 0.0 })
                .collect();
            let ktu = mat_vec(&u, true);
            pushed.push(ktu);
        }
        for (ktu, &w) in pushed.iter().zip(weights) {
            for (le, &p) in log_estimate.iter_mut().zip(ktu) {
                if p > 0.0 {
                    *le += w * p.ln();
                } else {
                    *le = f64::NEG_INFINITY;
                }
            }
        }
        let mut next: Vec<f64> = log_estimate.iter().map(|&l| l.exp()).collect();
        let total: f64 = next.iter().sum();
        if !total.is_finite() || total <= 1e-300 {
            return None;
        }
        for p in next.iter_mut() {
            *p /= total;
        }
        for (v, ktu) in scalings.iter_mut().zip(&pushed) {
            for ((vi, &p), &ktui) in v.iter_mut().zip(&next).zip(ktu) {
                *vi = if ktui > 0.0 { p / ktui } else { 0.0 };
            }
        }
        let delta: f64 = next
            .iter()
            .zip(&estimate)
            .map(|(a, b)| (a - b).abs())
            .sum();
        estimate = next;
        if delta < INNER_TOL {
            break;
        }
    }
    if estimate.iter().any(|p| !p.is_finite()) {
        return None;
    }
    Some(estimate)
}

/// Greedy mass-moving polish against the exact objective. The objective is
/// convex in the candidate, so shrinking-step coordinate moves converge to
/// the optimum within the step resolution.
fn polish_exact(
    rows: &[Vec<f64>],
    weights: &[f64],
    ground: &DistanceMatrix,
    start: Vec<f64>,
) -> Result<Vec<f64>> {
    let n = start.len();
    let mut candidate = start;
    let mut objective = barycenter_objective(rows, weights, ground, &candidate)?;
    let mut step = 0.25f64;
    while step > 1e-7 {
        let mut improved = false;
        for from in 0..n {
            if candidate[from] < 1e-15 {
                continue;
            }
            for to in 0..n {
                if to == from {
                    continue;
                }
                let delta = step.min(candidate[from]);
                let mut moved = candidate.clone();
                moved[from] -= delta;
                moved[to] += delta;
                let value = barycenter_objective(rows, weights, ground, &moved)?;
                if value < objective - 1e-15 {
                    candidate = moved;
                    objective = value;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(candidate)
}

/// Fixed-support barycenter of probability rows under the squared ground
/// metric.
pub fn row_barycenter(
    rows: &[Vec<f64>],
    weights: &[f64],
    ground: &DistanceMatrix,
) -> Result<Vec<f64>> {
    let n = ground.len();
    validate_rows(rows, weights, n)?;

    // Identical rows need no solve; this also covers the single-model case
    // exactly.
    let active: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect();
    if active
        .iter()
        .all(|&i| rows[i] == rows[active[0]])
    {
        return Ok(rows[active[0]].clone());
    }

    let cost: Vec<f64> = (0..n * n)
        .map(|k| {
            let d = ground.dist[(k / n, k % n)];
            d * d
        })
        .collect();

    // Sharper kernels are not automatically better: once exp(-cost/eps)
    // underflows against the diagonal, the fixed point degrades toward the
    // geometric mean. Score every level with the exact objective and keep
    // the winner.
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &epsilon in &EPSILON_LEVELS {
        if let Some(estimate) = entropic_level(rows, weights, &cost, n, epsilon) {
            let score = barycenter_objective(rows, weights, ground, &estimate)?;
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, estimate));
            }
        }
    }
    let Some((_, estimate)) = best else {
        return Err(Error::BarycenterDiverged { residual: f64::NAN });
    };

    let refined = if n <= POLISH_MAX_SUPPORT {
        polish_exact(rows, weights, ground, estimate)?
    } else {
        estimate
    };

    let total: f64 = refined.iter().sum();
    if !(total > 0.0) {
        return Err(Error::BarycenterDiverged { residual: total });
    }
    Ok(refined.iter().map(|p| p / total).collect())
}

/// Barycenter model: each transition row is the barycenter of the models'
/// rows, renormalized, with the stationary distribution recomputed.
pub fn barycenter_model(
    ensemble: &LanguageEnsemble,
    ground: &DistanceMatrix,
) -> Result<TransitionModel> {
    ensemble.validate()?;
    let alphabet = ensemble.alphabet().clone();
    let n = alphabet.len();
    if ground.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ground.len(),
        });
    }

    let mut probs = nalgebra::DMatrix::zeros(n, n);
    for r in 0..n {
        let rows: Vec<Vec<f64>> = ensemble
            .models
            .iter()
            .map(|m| (0..n).map(|j| m.probs[(r, j)]).collect())
            .collect();
        let row = row_barycenter(&rows, &ensemble.weights, ground)?;
        for (j, &p) in row.iter().enumerate() {
            probs[(r, j)] = p;
        }
    }
    let stationary = stationary_distribution(&probs, ReducibleMode::Lenient)?;
    let model = TransitionModel {
        alphabet,
        probs,
        stationary: stationary.iter().copied().collect(),
    };
    model.validate()?;
    Ok(model)
}
