//! Learn a distance matrix over the alphabet: minimize the long-run hand
//! travel with Ridge regularization, subject to symmetry, a per-pair floor,
//! and a scale bound on the norm. The un-regularized problem has a closed
//! form (all pairs at the floor except the least-trafficked one), kept here
//! as an oracle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::Alphabet;
use crate::error::{Error, Result};
use crate::markov::TransitionModel;
use crate::matrix::serde_rows;

/// Symmetric pairwise distances with zero diagonal. The norm convention
/// throughout is the Euclidean norm of the n(n-1)/2 upper-triangle entries,
/// the convention forced by the closed-form greedy solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub alphabet: Alphabet,
    #[serde(rename = "d", with = "serde_rows")]
    pub dist: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<OptimizerConfig>,
}

impl DistanceMatrix {
    /// Build from a full matrix, checking symmetry and the zero diagonal.
    pub fn from_full(alphabet: Alphabet, dist: DMatrix<f64>) -> Result<Self> {
        let n = alphabet.len();
        crate::matrix::expect_square(&dist, n)?;
        for i in 0..n {
            if dist[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                if dist[(i, j)] != dist[(j, i)] {
                    return Err(Error::invalid(format!("asymmetric entry at ({i},{j})")));
                }
                if !(dist[(i, j)] >= 0.0) {
                    return Err(Error::invalid(format!("negative distance at ({i},{j})")));
                }
            }
        }
        Ok(DistanceMatrix {
            alphabet,
            dist,
            config: None,
        })
    }

    /// Build the symmetric matrix from upper-triangle entries in pair order.
    pub fn from_upper(alphabet: Alphabet, upper: &[f64]) -> Result<Self> {
        let n = alphabet.len();
        if upper.len() != pair_count(n) {
            return Err(Error::DimensionMismatch {
                expected: pair_count(n),
                got: upper.len(),
            });
        }
        let mut dist = DMatrix::zeros(n, n);
        for (k, (i, j)) in pairs(n).enumerate() {
            dist[(i, j)] = upper[k];
            dist[(j, i)] = upper[k];
        }
        Self::from_full(alphabet, dist)
    }

    /// The 1x1 zero matrix for a single-letter cluster.
    pub fn singleton(letter: char) -> Self {
        DistanceMatrix {
            alphabet: Alphabet::from_letters(vec![letter]).expect("single letter"),
            dist: DMatrix::zeros(1, 1),
            config: None,
        }
    }

    /// Euclidean distances between planar points, one per letter.
    pub fn from_points(alphabet: Alphabet, points: &[[f64; 2]]) -> Result<Self> {
        let n = alphabet.len();
        if points.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: points.len(),
            });
        }
        let mut dist = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                let d = dx.hypot(dy);
                dist[(i, j)] = d;
                dist[(j, i)] = d;
            }
        }
        Self::from_full(alphabet, dist)
    }

    pub fn len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    /// Upper-triangle entries in pair order.
    pub fn upper(&self) -> Vec<f64> {
        pairs(self.len()).map(|(i, j)| self.dist[(i, j)]).collect()
    }

    /// Euclidean norm of the upper-triangle vector.
    pub fn upper_norm(&self) -> f64 {
        self.upper().iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    pub fn min_off_diagonal(&self) -> f64 {
        pairs(self.len())
            .map(|(i, j)| self.dist[(i, j)])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Hyperparameters of the metric optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Minimal key separation.
    pub d_min: f64,
    /// Lower bound on the upper-triangle norm (keyboard scale).
    pub c: f64,
    /// Ridge weight.
    pub alpha: f64,
    pub max_iters: usize,
    pub step_size: f64,
    /// Convergence threshold on the iterate change in max norm.
    pub tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            d_min: 0.01,
            c: 1.0,
            alpha: 1.0,
            max_iters: 50_000,
            step_size: 1e-2,
            tolerance: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0) || !self.d_min.is_finite() {
            return Err(Error::InfeasibleConfig("d_min must be positive".into()));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InfeasibleConfig("c must be positive".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InfeasibleConfig("alpha must be nonnegative".into()));
        }
        if self.step_size <= 0.0 || self.tolerance <= 0.0 || self.max_iters == 0 {
            return Err(Error::InfeasibleConfig(
                "step size, tolerance, and max_iters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// True when the all-floor matrix already has norm >= c, i.e. the scale
    /// constraint never binds and that matrix is the optimum.
    fn floor_satisfies_norm(&self, n: usize) -> bool {
        self.c * self.c <= pair_count(n) as f64 * self.d_min * self.d_min
    }
}

pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Upper-triangle pairs (i, j), i < j, in lexicographic order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// Per-pair traffic: w_ij = pi_i P_ij + pi_j P_ji, in pair order.
pub fn pair_weights(model: &TransitionModel) -> Vec<f64> {
    pairs(model.len())
        .map(|(i, j)| {
            model.stationary[i] * model.probs[(i, j)] + model.stationary[j] * model.probs[(j, i)]
        })
        .collect()
}

/// Long-run expected distance per transition under the chain:
/// sum over i != j of pi_i P_ij d_ij.
pub fn long_run_cost(model: &TransitionModel, d: &DistanceMatrix) -> f64 {
    let n = model.len().min(d.len());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += model.stationary[i] * model.probs[(i, j)] * d.dist[(i, j)];
            }
        }
    }
    total
}

/// Objective of the penalized problem over the upper-triangle vector.
pub fn penalized_cost(weights: &[f64], alpha: f64, upper: &[f64]) -> f64 {
    let linear: f64 = weights.iter().zip(upper).map(|(w, d)| w * d).sum();
    let quad: f64 = upper.iter().map(|d| d * d).sum();
    linear + alpha * quad
}

/// Analytic gradient of [`penalized_cost`].
pub fn penalized_gradient(weights: &[f64], alpha: f64, upper: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(upper)
        .map(|(w, d)| w + 2.0 * alpha * d)
        .collect()
}

fn all_floor(model: &TransitionModel, cfg: &OptimizerConfig) -> Result<DistanceMatrix> {
    let upper = vec![cfg.d_min; pair_count(model.len())];
    let mut d = DistanceMatrix::from_upper(model.alphabet.clone(), &upper)?;
    d.config = Some(*cfg);
    Ok(d)
}

fn least_traffic_pair(weights: &[f64]) -> usize {
    let mut best = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w < weights[best] {
            best = k;
        }
    }
    best
}

/// Closed-form solution of the un-regularized problem: everything at the
/// floor except the pair with the least traffic, which takes the remaining
/// norm budget d = sqrt(c^2 - (m - 1) d_min^2). Ties go to the first pair
/// in lexicographic order.
pub fn greedy_unregularized(
    model: &TransitionModel,
    cfg: &OptimizerConfig,
) -> Result<DistanceMatrix> {
    cfg.validate()?;
    let n = model.len();
    if n < 2 {
        return Err(Error::InfeasibleConfig("need at least 2 letters".into()));
    }
    if cfg.floor_satisfies_norm(n) {
        return all_floor(model, cfg);
    }
    let m = pair_count(n);
    let weights = pair_weights(model);
    let k = least_traffic_pair(&weights);
    let enlarged = (cfg.c * cfg.c - (m as f64 - 1.0) * cfg.d_min * cfg.d_min).sqrt();
    let mut upper = vec![cfg.d_min; m];
    upper[k] = enlarged;
    let mut d = DistanceMatrix::from_upper(model.alphabet.clone(), &upper)?;
    d.config = Some(*cfg);
    Ok(d)
}

/// Projection used by the solver. Order matters: clamp to the floor first,
/// then, if the norm fell below c, scale only the excess above the floor so
/// the floor cannot be violated by the rescale. If no excess is left, the
/// remaining budget goes to the least-trafficked pair, which is the cheapest
/// way back to feasibility.
fn project(upper: &mut [f64], cfg: &OptimizerConfig, weights: &[f64]) {
    let m = upper.len() as f64;
    for d in upper.iter_mut() {
        if *d < cfg.d_min {
            *d = cfg.d_min;
        }
    }
    let norm_sq: f64 = upper.iter().map(|d| d * d).sum();
    let c_sq = cfg.c * cfg.c;
    if norm_sq >= c_sq {
        return;
    }
    let excess: Vec<f64> = upper.iter().map(|d| d - cfg.d_min).collect();
    let e_sq: f64 = excess.iter().map(|e| e * e).sum();
    if e_sq > 0.0 {
        // Solve |floor + t * excess|^2 = c^2 for the positive root t >= 1.
        let a_dot_e: f64 = cfg.d_min * excess.iter().sum::<f64>();
        let a_sq = m * cfg.d_min * cfg.d_min;
        let disc = a_dot_e * a_dot_e - e_sq * (a_sq - c_sq);
        let t = (-a_dot_e + disc.sqrt()) / e_sq;
        for (d, e) in upper.iter_mut().zip(&excess) {
            *d = cfg.d_min + t * e;
        }
    } else {
        let k = least_traffic_pair(weights);
        upper[k] = (c_sq - (m - 1.0) * cfg.d_min * cfg.d_min).sqrt();
    }
}

/// Full solver output, including the per-accepted-iteration objective trace.
#[derive(Debug, Clone)]
pub struct H1Solution {
    pub distances: DistanceMatrix,
    pub objective: f64,
    /// Objective at the start and after every accepted step; non-increasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Max-norm change of the final accepted step.
    pub residual: f64,
}

/// Projected gradient descent on the penalized objective. The scale
/// constraint bounds the norm from below, so the feasible set is the
/// exterior of a ball and the projection is a retraction heuristic rather
/// than a true metric projection; the objective trace is still forced to be
/// non-increasing by backtracking.
pub fn optimize_h1(model: &TransitionModel, cfg: &OptimizerConfig) -> Result<DistanceMatrix> {
    optimize_h1_detailed(model, cfg).map(|s| s.distances)
}

pub fn optimize_h1_detailed(model: &TransitionModel, cfg: &OptimizerConfig) -> Result<H1Solution> {
    cfg.validate()?;
    let n = model.len();
    if n < 2 {
        return Err(Error::InfeasibleConfig("need at least 2 letters".into()));
    }
    let m = pair_count(n);
    let weights = pair_weights(model);

    if cfg.floor_satisfies_norm(n) {
        let distances = all_floor(model, cfg)?;
        let objective = penalized_cost(&weights, cfg.alpha, &distances.upper());
        return Ok(H1Solution {
            distances,
            objective,
            trace: vec![objective],
            iterations: 0,
            residual: 0.0,
        });
    }

    // Feasible uniform start: every pair at max(d_min, c / sqrt(m)).
    let start = cfg.d_min.max(cfg.c / (m as f64).sqrt());
    let mut current = vec![start; m];
    let mut objective = penalized_cost(&weights, cfg.alpha, &current);
    let mut trace = vec![objective];

    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        let gradient = penalized_gradient(&weights, cfg.alpha, &current);
        let mut step = cfg.step_size;
        let mut accepted = false;
        for _ in 0..60 {
            let mut candidate: Vec<f64> = current
                .iter()
                .zip(&gradient)
                .map(|(d, g)| d - step * g)
                .collect();
            project(&mut candidate, cfg, &weights);
            let cand_objective = penalized_cost(&weights, cfg.alpha, &candidate);
            if cand_objective <= objective {
                residual = current
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                current = candidate;
                objective = cand_objective;
                trace.push(objective);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No feasible descent direction at any step length: stationary.
            residual = 0.0;
            converged = true;
            break;
        }
        if residual <= cfg.tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::OptimizerDiverged {
            iterations,
            residual,
            objective,
            last: current,
        });
    }

    let mut distances = DistanceMatrix::from_upper(model.alphabet.clone(), &current)?;
    distances.config = Some(*cfg);
    Ok(H1Solution {
        distances,
        objective,
        trace,
        iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BigramCounts;
    use crate::markov::build_model;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn alphabet(n: usize) -> Alphabet {
        Alphabet::from_letters(('a'..).take(n).collect()).unwrap()
    }

    fn model(rows: &[&[f64]]) -> TransitionModel {
        let n = rows.len();
        let counts = BigramCounts {
            alphabet: alphabet(n),
            counts: DMatrix::from_fn(n, n, |i, j| rows[i][j]),
        };
        build_model(&counts).unwrap()
    }

    fn random_model(n: usize, rng: &mut ChaCha8Rng) -> TransitionModel {
        loop {
            let counts = BigramCounts {
                alphabet: alphabet(n),
                counts: DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0)),
            };
            if let Ok(m) = build_model(&counts) {
                return m;
            }
        }
    }

    #[test]
    fn long_run_cost_two_cycle() {
        let m = model(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let d = DistanceMatrix::from_upper(alphabet(2), &[3.0]).unwrap();
        assert_abs_diff_eq!(long_run_cost(&m, &d), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn long_run_cost_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(5, &mut rng);
        let upper: Vec<f64> = (0..pair_count(5)).map(|_| rng.gen_range(0.1..2.0)).collect();
        let d1 = DistanceMatrix::from_upper(alphabet(5), &upper).unwrap();
        let scaled: Vec<f64> = upper.iter().map(|x| 3.5 * x).collect();
        let d2 = DistanceMatrix::from_upper(alphabet(5), &scaled).unwrap();
        assert_abs_diff_eq!(
            long_run_cost(&m, &d2),
            3.5 * long_run_cost(&m, &d1),
            epsilon = 1e-12
        );
        let zero = DistanceMatrix::from_upper(alphabet(5), &vec![0.0; pair_count(5)]).unwrap();
        assert_eq!(long_run_cost(&m, &zero), 0.0);
    }

    #[test]
    fn greedy_three_letters() {
        let m = model(&[&[0.0, 5.0, 1.0], &[5.0, 0.0, 2.0], &[1.0, 2.0, 0.0]]);
        let cfg = OptimizerConfig::default();
        let d = greedy_unregularized(&m, &cfg).unwrap();
        let expected_big = (1.0f64 - 2.0 * 0.0001).sqrt();
        let upper = d.upper();
        let big_count = upper.iter().filter(|&&x| x > 0.5).count();
        assert_eq!(big_count, 1);
        let big = upper.iter().cloned().fold(0.0f64, f64::max);
        assert_abs_diff_eq!(big, expected_big, epsilon = 1e-12);
        assert_abs_diff_eq!(d.upper_norm(), cfg.c, epsilon = 1e-12);
        // The a-c pair carries the least traffic in this chain.
        assert!(d.dist[(0, 2)] > 0.5);
    }

    #[test]
    fn greedy_two_letters_gets_full_scale() {
        let m = model(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let cfg = OptimizerConfig::default();
        let d = greedy_unregularized(&m, &cfg).unwrap();
        assert_abs_diff_eq!(d.dist[(0, 1)], cfg.c, epsilon = 1e-15);
    }

    #[test]
    fn greedy_tie_breaks_lexicographically() {
        let third = 1.0 / 3.0;
        let m = model(&[
            &[third, third, third],
            &[third, third, third],
            &[third, third, third],
        ]);
        let d = greedy_unregularized(&m, &OptimizerConfig::default()).unwrap();
        assert!(d.dist[(0, 1)] > 0.5); // pair (a, b) is first in pair order
    }

    #[test]
    fn floor_already_feasible_returns_floor() {
        let m = model(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0], &[1.0, 1.0, 0.0]]);
        let cfg = OptimizerConfig {
            d_min: 1.0,
            c: 1.0,
            ..OptimizerConfig::default()
        };
        let greedy = greedy_unregularized(&m, &cfg).unwrap();
        assert!(greedy.upper().iter().all(|&x| x == 1.0));
        let solved = optimize_h1(&m, &cfg).unwrap();
        assert!(solved.upper().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn solver_output_is_feasible_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3usize, 5, 8] {
            let m = random_model(n, &mut rng);
            let cfg = OptimizerConfig::default();
            let sol = optimize_h1_detailed(&m, &cfg).unwrap();
            let d = &sol.distances;
            for (i, j) in pairs(n) {
                assert_eq!(d.dist[(i, j)], d.dist[(j, i)]);
                assert!(d.dist[(i, j)] >= cfg.d_min - 1e-12);
            }
            assert!(d.upper_norm() >= cfg.c - 1e-9);
            for w in sol.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
        }
    }

    #[test]
    fn alpha_zero_matches_greedy_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3usize, 4, 5] {
            let m = random_model(n, &mut rng);
            let cfg = OptimizerConfig {
                alpha: 0.0,
                max_iters: 400_000,
                tolerance: 1e-12,
                ..OptimizerConfig::default()
            };
            let greedy = greedy_unregularized(&m, &cfg).unwrap();
            let solved = optimize_h1(&m, &cfg).unwrap();
            let l_greedy = long_run_cost(&m, &greedy);
            let l_solver = long_run_cost(&m, &solved);
            assert!(
                (l_solver - l_greedy).abs() <= 1e-6,
                "n={n}: solver {l_solver} vs greedy {l_greedy}"
            );
        }
    }

    #[test]
    fn nonconvergence_reports_the_last_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = random_model(4, &mut rng);
        let cfg = OptimizerConfig {
            max_iters: 1,
            tolerance: 1e-15,
            ..OptimizerConfig::default()
        };
        match optimize_h1(&m, &cfg) {
            Err(Error::OptimizerDiverged { last, residual, .. }) => {
                assert_eq!(last.len(), pair_count(4));
                assert!(residual > cfg.tolerance);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn uniform_model_gives_symmetric_solution() {
        let third = 1.0 / 3.0;
        let m = model(&[
            &[third, third, third],
            &[third, third, third],
            &[third, third, third],
        ]);
        let cfg = OptimizerConfig::default();
        let d = optimize_h1(&m, &cfg).unwrap();
        let upper = d.upper();
        let expected = cfg.c / 3.0f64.sqrt();
        for &x in &upper {
            assert_abs_diff_eq!(x, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(6, &mut rng);
        let weights = pair_weights(&m);
        let cfg = OptimizerConfig::default();
        let mpairs = pair_count(6);
        for _ in 0..10 {
            let point: Vec<f64> = (0..mpairs)
                .map(|_| rng.gen_range(cfg.d_min..0.5))
                .collect();
            let grad = penalized_gradient(&weights, cfg.alpha, &point);
            let h = 1e-6;
            for k in 0..mpairs {
                let mut plus = point.clone();
                let mut minus = point.clone();
                plus[k] += h;
                minus[k] -= h;
                let numeric = (penalized_cost(&weights, cfg.alpha, &plus)
                    - penalized_cost(&weights, cfg.alpha, &minus))
                    / (2.0 * h);
                let denom = grad[k].abs().max(1e-12);
                assert!(
                    (numeric - grad[k]).abs() / denom <= 1e-5,
                    "pair {k}: analytic {} vs numeric {numeric}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_model(4, &mut rng);
        let cfg = OptimizerConfig::default();
        let d = optimize_h1(&m, &cfg).unwrap();

        // Relabel letters by the cycle a->b->c->d->a.
        let sigma = [1usize, 2, 3, 0];
        let n = 4;
        let probs = DMatrix::from_fn(n, n, |i, j| {
            let (pi, pj) = (sigma.iter().position(|&x| x == i).unwrap(),
                            sigma.iter().position(|&x| x == j).unwrap());
            m.probs[(pi, pj)]
        });
        let stationary: Vec<f64> = (0..n)
            .map(|i| m.stationary[sigma.iter().position(|&x| x == i).unwrap()])
            .collect();
        let permuted = TransitionModel {
            alphabet: alphabet(n),
            probs,
            stationary,
        };
        let d2 = optimize_h1(&permuted, &cfg).unwrap();
        for (i, j) in pairs(n) {
            assert_abs_diff_eq!(d2.dist[(sigma[i], sigma[j])], d.dist[(i, j)], epsilon = 1e-9);
        }
    }

    #[test]
    fn json_round_trip_with_config() {
        let m = model(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let d = greedy_unregularized(&m, &OptimizerConfig::default()).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"config\""));
        let back: DistanceMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}
