//! Two-cluster alphabet partitions for two-handed typing: exact bitmask
//! enumeration of the inter-cluster transition objective, with a local
//! search fallback for alphabets too large to enumerate.

use serde::{Deserialize, Serialize};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Alphabet;
use crate::error::{Error, Result};
use crate::markov::TransitionModel;

pub const EXACT_SEARCH_MAX: usize = 26;

/// Number of fixed enumeration chunks. Chunk boundaries do not depend on the
/// thread count, so near-ties resolve identically however the work is split.
const ENUM_CHUNKS: u64 = 256;

/// A two-cluster split. Bit i set means letter i belongs to cluster A.
/// Canonical form keeps letter 0 in A; the objective is symmetric under
/// swapping the clusters, so this halves the search space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    alphabet: Alphabet,
    mask: u64,
}

impl Partition {
    pub fn new(alphabet: Alphabet, mask: u64) -> Result<Self> {
        let n = alphabet.len();
        if n > 64 {
            return Err(Error::invalid("partitions support at most 64 letters"));
        }
        let full = full_mask(n);
        let mask = mask & full;
        if mask == 0 || mask == full {
            return Err(Error::invalid("both clusters must be non-empty"));
        }
        let mask = if mask & 1 == 1 { mask } else { !mask & full };
        Ok(Partition { alphabet, mask })
    }

    /// Build from the letter indices of cluster A.
    pub fn from_cluster_a(alphabet: &Alphabet, letters: &[usize]) -> Result<Self> {
        let mut mask = 0u64;
        for &i in letters {
            if i >= alphabet.len() {
                return Err(Error::invalid(format!("letter index {i} out of range")));
            }
            mask |= 1 << i;
        }
        Partition::new(alphabet.clone(), mask)
    }

    /// Build from the characters of cluster A.
    pub fn from_letters_a(alphabet: &Alphabet, letters: &str) -> Result<Self> {
        let mut idx = Vec::new();
        for c in letters.chars() {
            match alphabet.index_of(c) {
                Some(i) => idx.push(i),
                None => return Err(Error::invalid(format!("letter {c:?} not in alphabet"))),
            }
        }
        Self::from_cluster_a(alphabet, &idx)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn contains_a(&self, letter: usize) -> bool {
        self.mask >> letter & 1 == 1
    }

    /// Letter indices in cluster A, ascending.
    pub fn cluster_a(&self) -> Vec<usize> {
        (0..self.alphabet.len()).filter(|&i| self.contains_a(i)).collect()
    }

    /// Letter indices in cluster B, ascending.
    pub fn cluster_b(&self) -> Vec<usize> {
        (0..self.alphabet.len()).filter(|&i| !self.contains_a(i)).collect()
    }

    pub fn letters_a(&self) -> String {
        self.cluster_a().iter().map(|&i| self.alphabet.letter(i)).collect()
    }

    pub fn letters_b(&self) -> String {
        self.cluster_b().iter().map(|&i| self.alphabet.letter(i)).collect()
    }
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Serialized form used by the CLI: clusters as letter strings plus the
/// objective value of the split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub alphabet: Alphabet,
    #[serde(rename = "A")]
    pub a: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

impl PartitionRecord {
    pub fn new(partition: &Partition, objective: Option<f64>) -> Self {
        PartitionRecord {
            alphabet: partition.alphabet().clone(),
            a: partition.letters_a(),
            b: partition.letters_b(),
            objective,
        }
    }

    pub fn to_partition(&self) -> Result<Partition> {
        Partition::from_letters_a(&self.alphabet, &self.a)
    }
}

/// Inter-cluster transition mass times the inverse-sqrt size penalty:
/// (pi_A P_AB 1 + pi_B P_BA 1) * (1/sqrt(pi_A 1) + 1/sqrt(pi_B 1)).
pub fn partition_objective(model: &TransitionModel, partition: &Partition) -> Result<f64> {
    if partition.alphabet() != &model.alphabet {
        return Err(Error::AlphabetMismatch);
    }
    let n = model.len();
    let mut cross = 0.0;
    let mut mass_a = 0.0;
    let mut mass_b = 0.0;
    for i in 0..n {
        if partition.contains_a(i) {
            mass_a += model.stationary[i];
        } else {
            mass_b += model.stationary[i];
        }
        for j in 0..n {
            if partition.contains_a(i) != partition.contains_a(j) {
                cross += model.stationary[i] * model.probs[(i, j)];
            }
        }
    }
    if mass_a <= 0.0 || mass_b <= 0.0 {
        return Err(Error::ZeroMassCluster);
    }
    Ok(cross * (1.0 / mass_a.sqrt() + 1.0 / mass_b.sqrt()))
}

/// Incremental enumeration state: cluster masses and directed cross mass,
/// updated in O(n) when one letter switches sides.
struct EnumState {
    in_a: Vec<bool>,
    size_a: usize,
    mass_a: f64,
    mass_b: f64,
    cross: f64,
}

impl EnumState {
    /// Fresh O(n^2) evaluation for the membership described by `mask` over
    /// letters 1..n (letter 0 is always in A).
    fn fresh(flow: &[f64], stationary: &[f64], n: usize, mask: u64) -> Self {
        let mut in_a = vec![false; n];
        in_a[0] = true;
        for i in 1..n {
            in_a[i] = mask >> (i - 1) & 1 == 1;
        }
        let mut size_a = 0;
        let mut mass_a = 0.0;
        let mut mass_b = 0.0;
        let mut cross = 0.0;
        for i in 0..n {
            if in_a[i] {
                size_a += 1;
                mass_a += stationary[i];
            } else {
                mass_b += stationary[i];
            }
            for j in 0..n {
                if in_a[i] != in_a[j] {
                    cross += flow[i * n + j];
                }
            }
        }
        EnumState {
            in_a,
            size_a,
            mass_a,
            mass_b,
            cross,
        }
    }

    /// Move `letter` to the other side.
    fn flip(&mut self, flow: &[f64], stationary: &[f64], n: usize, letter: usize) {
        let was_a = self.in_a[letter];
        // Pairs involving `letter` toggle between crossing and internal.
        let mut involving = 0.0;
        let mut crossing = 0.0;
        for other in 0..n {
            if other == letter {
                continue;
            }
            let both = flow[letter * n + other] + flow[other * n + letter];
            involving += both;
            if self.in_a[other] != was_a {
                crossing += both;
            }
        }
        self.cross += involving - 2.0 * crossing;
        if was_a {
            self.size_a -= 1;
            self.mass_a -= stationary[letter];
            self.mass_b += stationary[letter];
        } else {
            self.size_a += 1;
            self.mass_b -= stationary[letter];
            self.mass_a += stationary[letter];
        }
        self.in_a[letter] = !was_a;
    }

    fn objective(&self) -> Option<f64> {
        if self.mass_a <= 0.0 || self.mass_b <= 0.0 {
            return None;
        }
        Some(self.cross * (1.0 / self.mass_a.sqrt() + 1.0 / self.mass_b.sqrt()))
    }
}

fn gray(v: u64) -> u64 {
    v ^ (v >> 1)
}

/// Best partition over one contiguous range of enumeration indices,
/// visited in Gray-code order with incremental updates.
fn enumerate_range(
    flow: &[f64],
    stationary: &[f64],
    n: usize,
    lo: u64,
    hi: u64,
    invalid: u64,
    small_range: (usize, usize),
) -> Option<(f64, u64)> {
    let mut state = EnumState::fresh(flow, stationary, n, gray(lo));
    let mut best: Option<(f64, u64)> = None;
    let mut code = gray(lo);
    for idx in lo..hi {
        if idx > lo {
            let next = gray(idx);
            let bit = (code ^ next).trailing_zeros() as usize;
            state.flip(flow, stationary, n, bit + 1);
            code = next;
        }
        if code == invalid {
            continue;
        }
        let small = state.size_a.min(n - state.size_a);
        if small < small_range.0 || small > small_range.1 {
            continue;
        }
        if let Some(objective) = state.objective() {
            let better = match best {
                None => true,
                Some((b, m)) => objective > b || (objective == b && code < m),
            };
            if better {
                best = Some((objective, code));
            }
        }
    }
    best
}

/// Exhaustive search over all canonical partitions, Gray-code incremental,
/// optionally split across threads. Ties break toward the lowest mask value;
/// the result does not depend on the thread count.
pub fn best_partition_exact(
    model: &TransitionModel,
    threads: usize,
) -> Result<(Partition, f64)> {
    best_partition_exact_bounded(model, threads, 1)
}

/// Exact search with a floor on the size of both clusters. The default
/// floor of 1 reproduces the unconstrained objective; the two-handed
/// pipeline raises it so the clusters fit their sub-grids.
pub fn best_partition_exact_bounded(
    model: &TransitionModel,
    threads: usize,
    min_size: usize,
) -> Result<(Partition, f64)> {
    let n = model.len();
    best_partition_exact_in_range(model, threads, (min_size, n / 2))
}

/// Exact search with the size of the smaller cluster confined to a range.
/// Used by the two-handed pipeline, where both sub-grids cap their side.
pub fn best_partition_exact_in_range(
    model: &TransitionModel,
    threads: usize,
    small_range: (usize, usize),
) -> Result<(Partition, f64)> {
    let n = model.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 letters"));
    }
    if n > EXACT_SEARCH_MAX {
        return Err(Error::UseLocalSearch {
            n,
            max: EXACT_SEARCH_MAX,
        });
    }
    if small_range.0 < 1 || small_range.0 > small_range.1 || 2 * small_range.0 > n {
        return Err(Error::invalid(format!(
            "cluster size range [{}, {}] is infeasible for {n} letters",
            small_range.0, small_range.1
        )));
    }
    let flow: Vec<f64> = (0..n * n)
        .map(|k| model.stationary[k / n] * model.probs[(k / n, k % n)])
        .collect();

    let bits = (n - 1) as u32;
    let total = 1u64 << bits;
    let invalid = full_mask(n) >> 1; // all letters in A -> B empty

    let chunks: Vec<(u64, u64)> = {
        let count = ENUM_CHUNKS.min(total);
        (0..count)
            .map(|c| (total * c / count, total * (c + 1) / count))
            .collect()
    };

    let threads = threads.max(1);
    let mut results: Vec<Option<(f64, u64)>> = vec![None; chunks.len()];
    if threads == 1 || chunks.len() == 1 {
        for (slot, &(lo, hi)) in results.iter_mut().zip(&chunks) {
            *slot = enumerate_range(&flow, &model.stationary, n, lo, hi, invalid, small_range);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<(f64, u64)>>> =
            chunks.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..threads.min(chunks.len()) {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if c >= chunks.len() {
                        break;
                    }
                    let (lo, hi) = chunks[c];
                    let found =
                        enumerate_range(&flow, &model.stationary, n, lo, hi, invalid, small_range);
                    *slots[c].lock().unwrap() = found;
                });
            }
        });
        for (slot, cell) in results.iter_mut().zip(slots) {
            *slot = cell.into_inner().unwrap();
        }
    }

    let mut best: Option<(f64, u64)> = None;
    for found in results.into_iter().flatten() {
        let better = match best {
            None => true,
            Some((b, m)) => found.0 > b || (found.0 == b && found.1 < m),
        };
        if better {
            best = Some(found);
        }
    }
    let (objective, code) = best.ok_or(Error::ZeroMassCluster)?;
    // Enumeration masks cover letters 1..n; letter 0 is implicitly in A.
    let partition = Partition::new(model.alphabet.clone(), code << 1 | 1)?;
    Ok((partition, objective))
}

/// Hill climbing over single-letter moves and cross-cluster swaps from
/// random balanced starts. Deterministic for a fixed seed; more restarts
/// never return a worse split.
pub fn best_partition_local(
    model: &TransitionModel,
    restarts: usize,
    seed: u64,
) -> Result<(Partition, f64)> {
    let n = model.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 letters"));
    }
    if n > 64 {
        return Err(Error::invalid("local search supports at most 64 letters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = full_mask(n);
    let mut best: Option<(f64, u64)> = None;

    for _ in 0..restarts.max(1) {
        let mask = loop {
            let mut candidate = 0u64;
            for i in 0..n {
                if rng.gen_bool(0.5) {
                    candidate |= 1 << i;
                }
            }
            if candidate != 0 && candidate != full {
                break candidate;
            }
        };
        let mut current = match Partition::new(model.alphabet.clone(), mask) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let mut current_obj = match partition_objective(model, &current) {
            Ok(o) => o,
            Err(_) => continue,
        };

        loop {
            let mut improved: Option<(f64, u64)> = None;
            let mut consider = |mask: u64| {
                if mask == 0 || mask == full {
                    return;
                }
                if let Ok(p) = Partition::new(model.alphabet.clone(), mask) {
                    if let Ok(o) = partition_objective(model, &p) {
                        let better = match improved {
                            None => o > current_obj,
                            Some((b, m)) => o > b || (o == b && p.mask() < m),
                        };
                        if better {
                            improved = Some((o, p.mask()));
                        }
                    }
                }
            };
            for i in 0..n {
                consider(current.mask() ^ (1 << i));
            }
            for i in 0..n {
                if !current.contains_a(i) {
                    continue;
                }
                for j in 0..n {
                    if current.contains_a(j) {
                        continue;
                    }
                    consider(current.mask() ^ (1 << i) ^ (1 << j));
                }
            }
            match improved {
                Some((o, m)) => {
                    current = Partition::new(model.alphabet.clone(), m)?;
                    current_obj = o;
                }
                None => break,
            }
        }

        let better = match best {
            None => true,
            Some((b, m)) => current_obj > b || (current_obj == b && current.mask() < m),
        };
        if better {
            best = Some((current_obj, current.mask()));
        }
    }

    let (objective, mask) = best.ok_or(Error::ZeroMassCluster)?;
    Ok((Partition::new(model.alphabet.clone(), mask)?, objective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BigramCounts;
    use crate::markov::build_model;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand_chacha::ChaCha8Rng;

    fn alphabet(n: usize) -> Alphabet {
        Alphabet::from_letters(('a'..).take(n).collect()).unwrap()
    }

    fn random_model(n: usize, rng: &mut ChaCha8Rng) -> TransitionModel {
        let counts = BigramCounts {
            alphabet: alphabet(n),
            counts: DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0)),
        };
        build_model(&counts).unwrap()
    }

    /// From-scratch recomputation used as the enumeration oracle.
    fn naive_best(model: &TransitionModel) -> (u64, f64) {
        let n = model.len();
        let mut best = (0u64, f64::NEG_INFINITY);
        for code in 0..(1u64 << (n - 1)) - 1 {
            let mask = code << 1 | 1;
            let p = Partition::new(model.alphabet.clone(), mask).unwrap();
            let o = partition_objective(model, &p).unwrap();
            if o > best.1 || (o == best.1 && mask < best.0) {
                best = (mask, o);
            }
        }
        best
    }

    #[test]
    fn two_letter_objective_hand_computed() {
        let counts = BigramCounts {
            alphabet: alphabet(2),
            counts: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        };
        let model = build_model(&counts).unwrap();
        let p = Partition::from_cluster_a(&model.alphabet, &[0]).unwrap();
        let o = partition_objective(&model, &p).unwrap();
        assert_abs_diff_eq!(o, 2.0 * 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn objective_symmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(6, &mut rng);
        let p = Partition::from_cluster_a(&model.alphabet, &[0, 2, 4]).unwrap();
        let swapped = Partition::from_cluster_a(&model.alphabet, &[1, 3, 5]).unwrap();
        // Canonicalization maps both to the same mask.
        assert_eq!(p.mask(), swapped.mask());
        let o1 = partition_objective(&model, &p).unwrap();
        let o2 = partition_objective(&model, &swapped).unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn no_cross_mass_means_zero_objective() {
        // Two disconnected blocks joined by a sliver of mass so the chain
        // stays irreducible, then measured with a partition matching the
        // blocks: cross mass is tiny, objective near zero.
        let eps = 1e-12;
        let counts = BigramCounts {
            alphabet: alphabet(4),
            counts: DMatrix::from_row_slice(
                4,
                4,
                &[
                    0.0, 1.0, eps, eps, //
                    1.0, 0.0, eps, eps, //
                    eps, eps, 0.0, 1.0, //
                    eps, eps, 1.0, 0.0,
                ],
            ),
        };
        let model = build_model(&counts).unwrap();
        let p = Partition::from_cluster_a(&model.alphabet, &[0, 1]).unwrap();
        let o = partition_objective(&model, &p).unwrap();
        assert!(o < 1e-9);
    }

    #[test]
    fn exact_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [4usize, 7, 10] {
            let model = random_model(n, &mut rng);
            let (oracle_mask, oracle_obj) = naive_best(&model);
            let (found, objective) = best_partition_exact(&model, 1).unwrap();
            assert_eq!(found.mask(), oracle_mask);
            assert!((objective - oracle_obj).abs() <= 1e-10);
        }
    }

    #[test]
    fn exact_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let model = random_model(11, &mut rng);
        let single = best_partition_exact(&model, 1).unwrap();
        let multi = best_partition_exact(&model, 4).unwrap();
        assert_eq!(single.0.mask(), multi.0.mask());
        assert_eq!(single.1, multi.1);
    }

    #[test]
    fn heavy_inter_group_mass_is_separated() {
        // Two 3-letter groups where nearly all transitions jump between
        // groups: the best split puts the groups on opposite sides.
        let n = 6;
        let mut counts = DMatrix::from_element(n, n, 0.01);
        for i in 0..3 {
            for j in 3..6 {
                counts[(i, j)] = 10.0;
                counts[(j, i)] = 10.0;
            }
        }
        let model = build_model(&BigramCounts {
            alphabet: alphabet(n),
            counts,
        })
        .unwrap();
        let (best, _) = best_partition_exact(&model, 1).unwrap();
        assert_eq!(best.cluster_a(), vec![0, 1, 2]);
    }

    #[test]
    fn two_letters_have_unique_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = random_model(2, &mut rng);
        let (p, _) = best_partition_exact(&model, 1).unwrap();
        assert_eq!(p.cluster_a(), vec![0]);
        assert_eq!(p.cluster_b(), vec![1]);
        let (pl, _) = best_partition_local(&model, 4, 0).unwrap();
        assert_eq!(pl.mask(), p.mask());
    }

    #[test]
    fn local_search_monotone_in_restarts() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = random_model(9, &mut rng);
        let (_, o_small) = best_partition_local(&model, 2, 42).unwrap();
        let (_, o_large) = best_partition_local(&model, 8, 42).unwrap();
        assert!(o_large >= o_small);
    }

    #[test]
    fn local_search_often_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut hits = 0;
        let trials = 20;
        for _ in 0..trials {
            let model = random_model(8, &mut rng);
            let (_, exact_obj) = best_partition_exact(&model, 1).unwrap();
            let (_, local_obj) = best_partition_local(&model, 64, 7).unwrap();
            if (exact_obj - local_obj).abs() <= 1e-12 {
                hits += 1;
            }
        }
        assert!(hits * 10 >= trials * 9, "local search hit {hits}/{trials}");
    }

    #[test]
    fn incremental_updates_agree_with_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let model = random_model(10, &mut rng);
        let n = model.len();
        let flow: Vec<f64> = (0..n * n)
            .map(|k| model.stationary[k / n] * model.probs[(k / n, k % n)])
            .collect();
        let mut state = EnumState::fresh(&flow, &model.stationary, n, 0);
        let mut code = 0u64;
        for idx in 1..(1u64 << (n - 1)) {
            let next = gray(idx);
            let bit = (code ^ next).trailing_zeros() as usize;
            state.flip(&flow, &model.stationary, n, bit + 1);
            code = next;
            let fresh = EnumState::fresh(&flow, &model.stationary, n, code);
            assert_abs_diff_eq!(state.cross, fresh.cross, epsilon = 1e-10);
            assert_abs_diff_eq!(state.mass_a, fresh.mass_a, epsilon = 1e-12);
            if let (Some(a), Some(b)) = (state.objective(), fresh.objective()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn objective_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let model = random_model(6, &mut rng);
        let n = model.len();
        let sigma = [4usize, 0, 5, 2, 1, 3]; // new index of each old letter
        let inv = |i: usize| sigma.iter().position(|&x| x == i).unwrap();
        let permuted = TransitionModel {
            alphabet: alphabet(n),
            probs: DMatrix::from_fn(n, n, |i, j| model.probs[(inv(i), inv(j))]),
            stationary: (0..n).map(|i| model.stationary[inv(i)]).collect(),
        };
        let original = Partition::from_cluster_a(&model.alphabet, &[0, 2, 3]).unwrap();
        let relabeled: Vec<usize> = [0usize, 2, 3].iter().map(|&i| sigma[i]).collect();
        let twin = Partition::from_cluster_a(&permuted.alphabet, &relabeled).unwrap();
        let o1 = partition_objective(&model, &original).unwrap();
        let o2 = partition_objective(&permuted, &twin).unwrap();
        assert_abs_diff_eq!(o1, o2, epsilon = 1e-12);
    }

    #[test]
    fn record_round_trips() {
        let a = alphabet(5);
        let p = Partition::from_cluster_a(&a, &[0, 3]).unwrap();
        let rec = PartitionRecord::new(&p, Some(1.5));
        let json = serde_json::to_string(&rec).unwrap();
        let back: PartitionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_partition().unwrap().mask(), p.mask());
    }
}
