//! Discrete Ollivier-Ricci curvature per directed edge and Gauss curvature
//! per letter, over the learned metric. Neighborhood measures come from the
//! transition row restricted to the k nearest letters; transport distances
//! are solved exactly.

use serde::{Deserialize, Serialize};

use crate::corpus::Alphabet;
use crate::error::{Error, Result};
use crate::markov::TransitionModel;
use crate::metric_opt::DistanceMatrix;
use crate::transport::transport_cost;

/// A probability measure on a few letters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn validate(&self) -> Result<()> {
        if self.support.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.support.len(),
                got: self.weights.len(),
            });
        }
        let mut seen = self.support.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.support.len() {
            return Err(Error::invalid("duplicate support letters"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid(format!("weights sum to {sum}")));
        }
        Ok(())
    }
}

/// The k letters nearest to `x` under `d` (x itself included; its distance
/// to itself is zero so it is always first), ties broken by letter order.
fn nearest_letters(d: &DistanceMatrix, x: usize, k: usize) -> Vec<usize> {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        d.dist[(x, a)]
            .partial_cmp(&d.dist[(x, b)])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Transition row of `x` restricted to its k nearest letters and
/// renormalized. When the restricted row carries no mass the measure falls
/// back to uniform over the support; the flag reports that.
pub fn knn_measure(
    model: &TransitionModel,
    d: &DistanceMatrix,
    x: usize,
    k: usize,
) -> Result<(DiscreteMeasure, bool)> {
    let n = model.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k must lie in [1, {n}]")));
    }
    if d.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: d.len(),
        });
    }
    let support = nearest_letters(d, x, k);
    let raw: Vec<f64> = support.iter().map(|&i| model.probs[(x, i)]).collect();
    let total: f64 = raw.iter().sum();
    let (weights, fallback) = if total > 0.0 {
        (raw.iter().map(|&w| w / total).collect(), false)
    } else {
        (vec![1.0 / k as f64; k], true)
    };
    let measure = DiscreteMeasure { support, weights };
    measure.validate()?;
    Ok((measure, fallback))
}

/// Exact W1 between two measures under the ground metric `d`.
pub fn wasserstein(mu: &DiscreteMeasure, nu: &DiscreteMeasure, d: &DistanceMatrix) -> Result<f64> {
    mu.validate()?;
    nu.validate()?;
    transport_cost(&mu.weights, &nu.weights, |i, j| {
        d.dist[(mu.support[i], nu.support[j])]
    })
}

/// kappa_xy = 1 - W1(mu_x, mu_y) / d(x, y) along the directed edge x -> y.
pub fn ricci_edge(
    model: &TransitionModel,
    d: &DistanceMatrix,
    x: usize,
    y: usize,
    k: usize,
) -> Result<f64> {
    if x == y {
        return Err(Error::invalid("Ricci curvature needs two distinct letters"));
    }
    let (mu_x, _) = knn_measure(model, d, x, k)?;
    let (mu_y, _) = knn_measure(model, d, y, k)?;
    let w = wasserstein(&mu_x, &mu_y, d)?;
    Ok(1.0 - w / d.dist[(x, y)])
}

/// One directed edge measurement at one neighborhood size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EdgeCurvature {
    pub k: usize,
    pub from: usize,
    pub to: usize,
    pub kappa: f64,
}

/// Gauss curvature of one letter at one neighborhood size: the product of
/// the extreme edge curvatures over the letter's outgoing kNN edges.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussCurvature {
    pub k: usize,
    pub letter: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub gauss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub alphabet: Alphabet,
    pub k_range: (usize, usize),
    pub edges: Vec<EdgeCurvature>,
    pub gauss: Vec<GaussCurvature>,
    /// Arithmetic mean of the per-k Gauss curvature, one entry per letter.
    pub gauss_mean: Vec<f64>,
    /// True when some kNN measure fell back to uniform weights.
    pub uniform_fallback: bool,
}

impl CurvatureReport {
    /// `letter,k,kappa_min,kappa_max,gauss` rows in (k, letter) order.
    pub fn per_k_csv(&self) -> String {
        let mut out = String::from("letter,k,kappa_min,kappa_max,gauss\n");
        for g in &self.gauss {
            out.push_str(&format!(
                "{},{},{:.12},{:.12},{:.12}\n",
                self.alphabet.letter(g.letter),
                g.k,
                g.kappa_min,
                g.kappa_max,
                g.gauss
            ));
        }
        out
    }

    /// `letter,gauss_mean` rows in letter order.
    pub fn means_csv(&self) -> String {
        let mut out = String::from("letter,gauss_mean\n");
        for (i, mean) in self.gauss_mean.iter().enumerate() {
            out.push_str(&format!("{},{:.12}\n", self.alphabet.letter(i), mean));
        }
        out
    }
}

/// Per-letter Gauss curvature for each k in the range, plus the mean over
/// the range. Edges from a letter go to its k-1 nearest non-self neighbors,
/// the same neighborhood that defines the measures.
pub fn gauss_curvatures(
    model: &TransitionModel,
    d: &DistanceMatrix,
    k_range: std::ops::RangeInclusive<usize>,
    threads: usize,
) -> Result<CurvatureReport> {
    let n = model.len();
    let (k_lo, k_hi) = (*k_range.start(), *k_range.end());
    if k_lo < 2 || k_hi > n || k_lo > k_hi {
        return Err(Error::invalid(format!(
            "k range [{k_lo}, {k_hi}] must lie within [2, {n}]"
        )));
    }

    let tasks: Vec<(usize, usize)> = (k_lo..=k_hi)
        .flat_map(|k| (0..n).map(move |x| (k, x)))
        .collect();

    let compute = |&(k, x): &(usize, usize)| -> Result<(Vec<EdgeCurvature>, GaussCurvature, bool)> {
        let (mu_x, fb_x) = knn_measure(model, d, x, k)?;
        let mut edges = Vec::with_capacity(k - 1);
        let mut kappa_min = f64::INFINITY;
        let mut kappa_max = f64::NEG_INFINITY;
        let mut fallback = fb_x;
        for &y in nearest_letters(d, x, k).iter().filter(|&&y| y != x) {
            let (mu_y, fb_y) = knn_measure(model, d, y, k)?;
            fallback |= fb_y;
            let w = wasserstein(&mu_x, &mu_y, d)?;
            let kappa = 1.0 - w / d.dist[(x, y)];
            kappa_min = kappa_min.min(kappa);
            kappa_max = kappa_max.max(kappa);
            edges.push(EdgeCurvature {
                k,
                from: x,
                to: y,
                kappa,
            });
        }
        let gauss = GaussCurvature {
            k,
            letter: x,
            kappa_min,
            kappa_max,
            gauss: kappa_max * kappa_min,
        };
        Ok((edges, gauss, fallback))
    };

    let threads = threads.max(1);
    let results: Vec<Result<(Vec<EdgeCurvature>, GaussCurvature, bool)>> = if threads == 1 {
        tasks.iter().map(compute).collect()
    } else {
        let mut slots: Vec<Option<Result<_>>> = (0..tasks.len()).map(|_| None).collect();
        let chunk = tasks.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (tasks_chunk, slots_chunk) in
                tasks.chunks(chunk).zip(slots.chunks_mut(chunk))
            {
                scope.spawn(move || {
                    for (task, slot) in tasks_chunk.iter().zip(slots_chunk.iter_mut()) {
                        *slot = Some(compute(task));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("filled slot")).collect()
    };

    let mut edges = Vec::new();
    let mut gauss = Vec::new();
    let mut uniform_fallback = false;
    for r in results {
        let (e, g, fb) = r?;
        edges.extend(e);
        gauss.push(g);
        uniform_fallback |= fb;
    }

    let k_count = (k_hi - k_lo + 1) as f64;
    let mut gauss_mean = vec![0.0; n];
    for g in &gauss {
        gauss_mean[g.letter] += g.gauss / k_count;
    }

    Ok(CurvatureReport {
        alphabet: model.alphabet.clone(),
        k_range: (k_lo, k_hi),
        edges,
        gauss,
        gauss_mean,
        uniform_fallback,
    })
}
