//! The letter Markov chain: row-normalized transition matrix, stationary
//! distribution, and the cross-cluster absorption probabilities used by the
//! two-handed objective.

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::cluster::Partition;
use crate::corpus::{Alphabet, BigramCounts};
use crate::error::{Error, Result};
use crate::matrix::serde_rows;
use crate::metric_opt::DistanceMatrix;

const STATIONARY_TOL: f64 = 1e-12;
const UNDAMPED_MAX_ITERS: usize = 10_000;
const DAMPED_MAX_ITERS: usize = 200_000;
const DAMPING: f64 = 0.999;

/// How to treat a chain whose transition graph is not strongly connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReducibleMode {
    /// Error out. Every distribution is stationary for e.g. the identity
    /// matrix, so there is no meaningful single answer.
    #[default]
    Strict,
    /// Return the damped-iteration limit from the uniform start.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub alphabet: Alphabet,
    #[serde(rename = "P", with = "serde_rows")]
    pub probs: DMatrix<f64>,
    #[serde(rename = "pi")]
    pub stationary: Vec<f64>,
}

impl TransitionModel {
    pub fn len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    /// Check the row-stochastic and stationary invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        crate::matrix::expect_square(&self.probs, n)?;
        if self.stationary.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.stationary.len(),
            });
        }
        for i in 0..n {
            let row_sum: f64 = self.probs.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-9 {
                return Err(Error::NotStochastic(format!(
                    "row {i} sums to {row_sum}"
                )));
            }
            if self.probs.row(i).iter().any(|&p| p < -1e-15) {
                return Err(Error::NotStochastic(format!("row {i} has a negative entry")));
            }
        }
        let pi_sum: f64 = self.stationary.iter().sum();
        if (pi_sum - 1.0).abs() > 1e-9 || self.stationary.iter().any(|&p| p < -1e-15) {
            return Err(Error::NotStochastic(format!("pi sums to {pi_sum}")));
        }
        Ok(())
    }

    /// L1 gap between the fitted stationary distribution and an empirical
    /// letter-frequency vector. Gaps above 0.05 usually mean the corpus and
    /// the frequency source disagree.
    pub fn stationary_gap(&self, letter_freqs: &[f64]) -> Result<f64> {
        if letter_freqs.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: letter_freqs.len(),
            });
        }
        Ok(self
            .stationary
            .iter()
            .zip(letter_freqs)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    /// Replace the stationary vector with an externally supplied one (e.g.
    /// letter frequencies read off the corpus directly).
    pub fn with_stationary(&self, pi: Vec<f64>) -> Result<TransitionModel> {
        let model = TransitionModel {
            alphabet: self.alphabet.clone(),
            probs: self.probs.clone(),
            stationary: pi,
        };
        model.validate()?;
        Ok(model)
    }

    /// Restrict the chain to a subset of letters: rows are masked to the
    /// subset and renormalized (uniform when a row loses all mass), and the
    /// stationary distribution of the sub-chain is recomputed leniently.
    /// This is the model handed to the per-cluster metric optimization.
    pub fn restrict(&self, letters: &[usize]) -> Result<TransitionModel> {
        if letters.len() < 2 {
            return Err(Error::invalid("restriction needs at least 2 letters"));
        }
        let sub_alphabet =
            Alphabet::from_letters(letters.iter().map(|&i| self.alphabet.letter(i)).collect())?;
        let m = letters.len();
        let mut probs = DMatrix::zeros(m, m);
        for (a, &i) in letters.iter().enumerate() {
            let mut row_sum = 0.0;
            for (b, &j) in letters.iter().enumerate() {
                probs[(a, b)] = self.probs[(i, j)];
                row_sum += self.probs[(i, j)];
            }
            if row_sum > 0.0 {
                for b in 0..m {
                    probs[(a, b)] /= row_sum;
                }
            } else {
                for b in 0..m {
                    probs[(a, b)] = 1.0 / m as f64;
                }
            }
        }
        let stationary = stationary_distribution(&probs, ReducibleMode::Lenient)?;
        Ok(TransitionModel {
            alphabet: sub_alphabet,
            probs,
            stationary: stationary.iter().copied().collect(),
        })
    }
}

/// Row-normalize bigram counts into a transition model. Rows with no counts
/// get the uniform distribution so the matrix stays stochastic; such letters
/// carry near-zero stationary mass anyway.
pub fn build_model(counts: &BigramCounts) -> Result<TransitionModel> {
    build_model_with(counts, ReducibleMode::Strict)
}

pub fn build_model_with(counts: &BigramCounts, mode: ReducibleMode) -> Result<TransitionModel> {
    if counts.total() <= 0.0 {
        return Err(Error::EmptyCorpus);
    }
    let n = counts.alphabet.len();
    let mut probs = DMatrix::zeros(n, n);
    for i in 0..n {
        let row_sum: f64 = counts.counts.row(i).iter().sum();
        if row_sum > 0.0 {
            for j in 0..n {
                probs[(i, j)] = counts.counts[(i, j)] / row_sum;
            }
        } else {
            for j in 0..n {
                probs[(i, j)] = 1.0 / n as f64;
            }
        }
    }
    let stationary = stationary_distribution(&probs, mode)?;
    let model = TransitionModel {
        alphabet: counts.alphabet.clone(),
        probs,
        stationary: stationary.iter().copied().collect(),
    };
    model.validate()?;
    Ok(model)
}

fn check_row_stochastic(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    crate::matrix::expect_square(p, n)?;
    for i in 0..n {
        let s: f64 = p.row(i).iter().sum();
        if (s - 1.0).abs() > 1e-9 || p.row(i).iter().any(|&x| x < -1e-15) {
            return Err(Error::NotStochastic(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Strong connectivity of the positive-entry digraph: every letter reachable
/// from letter 0 and letter 0 reachable from every letter.
fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let reach = |transpose: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if transpose { p[(v, u)] } else { p[(u, v)] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(false) && reach(true)
}

fn l1_delta(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

/// Power iteration for `pi = pi P` from the uniform start. Damping via the
/// lazy chain `0.999 P + 0.001 I` kicks in only when the plain iteration
/// fails to settle (periodic chains); the lazy chain has the same stationary
/// distribution, so the limit is exact.
pub fn stationary_distribution(p: &DMatrix<f64>, mode: ReducibleMode) -> Result<DVector<f64>> {
    check_row_stochastic(p)?;
    let n = p.nrows();
    if mode == ReducibleMode::Strict && !is_irreducible(p) {
        return Err(Error::ReducibleChain);
    }

    let uniform = DVector::from_element(n, 1.0 / n as f64);
    let iterate = |damping: f64, max_iters: usize| -> (DVector<f64>, f64, usize) {
        let mut pi = uniform.clone();
        let mut residual = f64::INFINITY;
        for it in 0..max_iters {
            let mut next = (p.transpose() * &pi) * damping + &pi * (1.0 - damping);
            let sum: f64 = next.iter().sum();
            next /= sum;
            residual = l1_delta(&next, &pi);
            pi = next;
            if residual <= STATIONARY_TOL {
                return (pi, residual, it + 1);
            }
        }
        (pi, residual, max_iters)
    };

    let (pi, residual, _) = iterate(1.0, UNDAMPED_MAX_ITERS);
    let pi = if residual <= STATIONARY_TOL {
        pi
    } else {
        let (pi, residual, iters) = iterate(DAMPING, DAMPED_MAX_ITERS);
        if residual > STATIONARY_TOL {
            return Err(Error::StationaryDiverged {
                iterations: iters,
                residual,
            });
        }
        pi
    };

    // pi P = pi to 1e-10, unless the chain is reducible and we were lenient.
    let check = l1_delta(&(p.transpose() * &pi), &pi);
    if mode == ReducibleMode::Strict && check > 1e-10 {
        return Err(Error::StationaryDiverged {
            iterations: UNDAMPED_MAX_ITERS,
            residual: check,
        });
    }
    Ok(pi)
}

/// Probability of moving `i -> j` with every intermediate letter confined to
/// `through`. With an empty `through` only the direct step remains, so the
/// value degenerates to `P[i][j]`; otherwise at least one intermediate is
/// taken and the direct transition is excluded, matching the summand
/// added on top of `P_ij` in the two-handed objective.
pub fn absorption_transition(
    model: &TransitionModel,
    through: &[usize],
    i: usize,
    j: usize,
) -> Result<f64> {
    if through.contains(&i) || through.contains(&j) {
        return Err(Error::invalid(
            "absorption endpoints must lie outside the intermediate set",
        ));
    }
    if through.is_empty() {
        return Ok(model.probs[(i, j)]);
    }
    let exit = absorption_block(model, through, &[i], &[j])?;
    Ok(exit[(0, 0)])
}

/// The matrix `P_{S,T} (I - P_T)^{-1} P_{T,D}` for source letters `S` and
/// destination letters `D`, computed with one factorization of `I - P_T`.
pub fn absorption_block(
    model: &TransitionModel,
    through: &[usize],
    sources: &[usize],
    dests: &[usize],
) -> Result<DMatrix<f64>> {
    let t = through.len();
    let p = &model.probs;
    let p_t = DMatrix::from_fn(t, t, |a, b| p[(through[a], through[b])]);
    let system = DMatrix::identity(t, t) - p_t;
    let rhs = DMatrix::from_fn(t, dests.len(), |a, d| p[(through[a], dests[d])]);
    let lu = LU::new(system);
    let solved = lu.solve(&rhs).ok_or(Error::AbsorbingSubchain)?;
    let entry = DMatrix::from_fn(sources.len(), t, |s, a| p[(sources[s], through[a])]);
    Ok(entry * solved)
}

/// Exact two-handed objective for a fixed partition and per-cluster metrics:
/// distances inside each cluster are weighted by the direct transition plus
/// the chance of getting there through the opposite cluster alone.
pub fn h2_objective(
    model: &TransitionModel,
    partition: &Partition,
    d_a: &DistanceMatrix,
    d_b: &DistanceMatrix,
) -> Result<f64> {
    if partition.alphabet() != &model.alphabet {
        return Err(Error::AlphabetMismatch);
    }
    let a = partition.cluster_a();
    let b = partition.cluster_b();
    check_cluster_metric(model, &a, d_a)?;
    check_cluster_metric(model, &b, d_b)?;

    let mut total = 0.0;
    for (letters, opposite, d) in [(&a, &b, d_a), (&b, &a, d_b)] {
        if letters.len() < 2 {
            continue; // no intra-cluster distance to cover
        }
        let weights = intra_cluster_weights(model, letters, opposite)?;
        for (x, &i) in letters.iter().enumerate() {
            for y in 0..letters.len() {
                if x == y {
                    continue;
                }
                total += model.stationary[i] * weights[(x, y)] * d.dist[(x, y)];
            }
        }
    }
    Ok(total)
}

/// `P_ij + P_{i,opp} (I - P_opp)^{-1} P_{opp,j}` for all i, j in `letters`.
pub fn intra_cluster_weights(
    model: &TransitionModel,
    letters: &[usize],
    opposite: &[usize],
) -> Result<DMatrix<f64>> {
    let m = letters.len();
    let direct = DMatrix::from_fn(m, m, |x, y| model.probs[(letters[x], letters[y])]);
    if opposite.is_empty() {
        return Ok(direct);
    }
    let mediated = absorption_block(model, opposite, letters, letters)?;
    Ok(direct + mediated)
}

fn check_cluster_metric(
    model: &TransitionModel,
    letters: &[usize],
    d: &DistanceMatrix,
) -> Result<()> {
    if d.alphabet.len() != letters.len() {
        return Err(Error::DimensionMismatch {
            expected: letters.len(),
            got: d.alphabet.len(),
        });
    }
    for (x, &i) in letters.iter().enumerate() {
        if d.alphabet.letter(x) != model.alphabet.letter(i) {
            return Err(Error::AlphabetMismatch);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Partition;
    use crate::metric_opt::DistanceMatrix;
    use approx::assert_abs_diff_eq;

    fn alphabet(n: usize) -> Alphabet {
        Alphabet::from_letters(('a'..).take(n).collect()).unwrap()
    }

    fn model_from_rows(rows: &[&[f64]]) -> TransitionModel {
        let n = rows.len();
        let probs = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let stationary = stationary_distribution(&probs, ReducibleMode::Strict).unwrap();
        TransitionModel {
            alphabet: alphabet(n),
            probs,
            stationary: stationary.iter().copied().collect(),
        }
    }

    fn counts(rows: &[&[f64]]) -> BigramCounts {
        let n = rows.len();
        BigramCounts {
            alphabet: alphabet(n),
            counts: DMatrix::from_fn(n, n, |i, j| rows[i][j]),
        }
    }

    #[test]
    fn symmetric_two_cycle() {
        let model = build_model(&counts(&[&[0.0, 2.0], &[2.0, 0.0]])).unwrap();
        assert_eq!(model.probs[(0, 1)], 1.0);
        assert_eq!(model.probs[(1, 0)], 1.0);
        assert_abs_diff_eq!(model.stationary[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(model.stationary[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn uniform_chain() {
        let model = build_model(&counts(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        for v in [model.probs[(0, 0)], model.probs[(0, 1)]] {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(model.stationary[0], 0.5, epsilon = 1e-11);
    }

    #[test]
    fn two_state_closed_form() {
        // pi_1 = p21 / (p12 + p21) for a 2-state chain.
        let model = build_model(&counts(&[&[0.0, 3.0], &[1.0, 2.0]])).unwrap();
        assert_abs_diff_eq!(model.probs[(1, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(model.stationary[0], 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(model.stationary[1], 0.75, epsilon = 1e-10);
    }

    #[test]
    fn identity_is_reducible() {
        let p = DMatrix::identity(3, 3);
        let err = stationary_distribution(&p, ReducibleMode::Strict).unwrap_err();
        assert!(matches!(err, Error::ReducibleChain));
        let pi = stationary_distribution(&p, ReducibleMode::Lenient).unwrap();
        for v in pi.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn periodic_chain_converges() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let pi = stationary_distribution(&p, ReducibleMode::Strict).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn absorption_empty_through_is_direct() {
        let model = model_from_rows(&[&[0.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0]]);
        let v = absorption_transition(&model, &[], 0, 1).unwrap();
        assert_eq!(v, model.probs[(0, 1)]);
    }

    #[test]
    fn absorption_uniform_three_letter_geometric_series() {
        let third = 1.0 / 3.0;
        let model = model_from_rows(&[
            &[third, third, third],
            &[third, third, third],
            &[third, third, third],
        ]);
        // a -> (b)* -> c: (1/3) * 1/(1 - 1/3) * (1/3) = 1/6.
        let v = absorption_transition(&model, &[1], 0, 2).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 6.0, epsilon = 1e-14);
        // Truncated series oracle.
        let mut series = 0.0;
        for k in 0..50 {
            series += third * third.powi(k) * third;
        }
        assert_abs_diff_eq!(v, series, epsilon = 1e-12);
    }

    #[test]
    fn absorption_series_truncation_oracle() {
        let model = model_from_rows(&[
            &[0.1, 0.5, 0.2, 0.2],
            &[0.3, 0.1, 0.4, 0.2],
            &[0.25, 0.25, 0.25, 0.25],
            &[0.4, 0.1, 0.1, 0.4],
        ]);
        let through = [1usize, 2];
        let n = model.len();
        let mut masked = DMatrix::zeros(n, n);
        for &a in &through {
            for &b in &through {
                masked[(a, b)] = model.probs[(a, b)];
            }
        }
        for (i, j) in [(0usize, 3usize), (3, 0), (0, 0), (3, 3)] {
            let mut series = 0.0;
            let mut power = DMatrix::identity(n, n);
            for _ in 0..=200 {
                for &a in &through {
                    for &b in &through {
                        series += model.probs[(i, a)] * power[(a, b)] * model.probs[(b, j)];
                    }
                }
                power = &power * &masked;
            }
            let v = absorption_transition(&model, &through, i, j).unwrap();
            assert_abs_diff_eq!(v, series, epsilon = 1e-10);
        }
    }

    #[test]
    fn absorption_single_step_case() {
        // Masked block is zero: b never transitions to itself.
        let model = model_from_rows(&[&[0.2, 0.4, 0.4], &[0.5, 0.0, 0.5], &[0.6, 0.2, 0.2]]);
        let v = absorption_transition(&model, &[1], 0, 2).unwrap();
        assert_abs_diff_eq!(v, model.probs[(0, 1)] * model.probs[(1, 2)], epsilon = 1e-14);
    }

    #[test]
    fn conservation_across_partition() {
        let model = model_from_rows(&[
            &[0.1, 0.5, 0.2, 0.2],
            &[0.3, 0.1, 0.4, 0.2],
            &[0.25, 0.25, 0.25, 0.25],
            &[0.4, 0.1, 0.1, 0.4],
        ]);
        let partition = Partition::from_cluster_a(&model.alphabet, &[0, 2]).unwrap();
        let a = partition.cluster_a();
        let b = partition.cluster_b();
        for (own, opp) in [(&a, &b), (&b, &a)] {
            let w = intra_cluster_weights(&model, own, opp).unwrap();
            for x in 0..own.len() {
                let total: f64 = (0..own.len()).map(|y| w[(x, y)]).sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn h2_objective_hand_computed() {
        let third = 1.0 / 3.0;
        let model = model_from_rows(&[
            &[third, third, third],
            &[third, third, third],
            &[third, third, third],
        ]);
        let partition = Partition::from_cluster_a(&model.alphabet, &[0, 2]).unwrap();
        let sub = Alphabet::from_letters(vec!['a', 'c']).unwrap();
        let d_a = DistanceMatrix::from_full(
            sub,
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        )
        .unwrap();
        let d_b = DistanceMatrix::singleton('b');
        let v = h2_objective(&model, &partition, &d_a, &d_b).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn h2_objective_linear_in_distances() {
        let model = model_from_rows(&[
            &[0.1, 0.5, 0.2, 0.2],
            &[0.3, 0.1, 0.4, 0.2],
            &[0.25, 0.25, 0.25, 0.25],
            &[0.4, 0.1, 0.1, 0.4],
        ]);
        let partition = Partition::from_cluster_a(&model.alphabet, &[0, 1]).unwrap();
        let sub_a = Alphabet::from_letters(vec!['a', 'b']).unwrap();
        let sub_b = Alphabet::from_letters(vec!['c', 'd']).unwrap();
        let zero = DMatrix::zeros(2, 2);
        let d0a = DistanceMatrix::from_full(sub_a.clone(), zero.clone()).unwrap();
        let d0b = DistanceMatrix::from_full(sub_b.clone(), zero).unwrap();
        assert_eq!(h2_objective(&model, &partition, &d0a, &d0b).unwrap(), 0.0);

        let d1 = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let d_a = DistanceMatrix::from_full(sub_a.clone(), d1.clone()).unwrap();
        let d_b = DistanceMatrix::from_full(sub_b.clone(), d1.clone()).unwrap();
        let v1 = h2_objective(&model, &partition, &d_a, &d_b).unwrap();
        let d_a2 = DistanceMatrix::from_full(sub_a, &d1 * 2.0).unwrap();
        let d_b2 = DistanceMatrix::from_full(sub_b, &d1 * 2.0).unwrap();
        let v2 = h2_objective(&model, &partition, &d_a2, &d_b2).unwrap();
        assert_abs_diff_eq!(v2, 2.0 * v1, epsilon = 1e-12);
    }

    #[test]
    fn model_json_shape() {
        let model = build_model(&counts(&[&[0.0, 2.0], &[2.0, 0.0]])).unwrap();
        let json = serde_json::to_value(&model).unwrap();
        assert!(json.get("P").is_some());
        assert!(json.get("pi").is_some());
        let back: TransitionModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        // Downstream pipelines reload models from disk; the reloaded floats
        // must be the same bits or reruns stop being byte-identical. Needs
        // serde_json's float_roundtrip parsing.
        let model = build_model(&counts(&[&[0.0, 3.0, 1.0], &[1.0, 2.0, 4.0], &[2.0, 1.0, 5.0]]))
            .unwrap();
        let back: TransitionModel =
            serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        for i in 0..3 {
            assert_eq!(model.stationary[i].to_bits(), back.stationary[i].to_bits());
            for j in 0..3 {
                assert_eq!(model.probs[(i, j)].to_bits(), back.probs[(i, j)].to_bits());
            }
        }
    }
}
