//! Exact discrete optimal transport via successive shortest augmenting
//! paths. The instances here are tiny (kNN supports of at most a handful of
//! letters, or one alphabet row), so paths are found with plain
//! Bellman-Ford on true residual costs, which is exact and handles the
//! negative backward arcs directly.

use crate::error::{Error, Result};

const MASS_EPS: f64 = 1e-15;
const MAX_AUGMENTATIONS: usize = 100_000;

/// Minimal total cost of moving `supply` onto `demand` under the given
/// per-pair cost. Both marginals must be nonnegative with equal totals
/// (up to round-off; demand is rescaled to match exactly).
pub fn transport_cost<F>(supply: &[f64], demand: &[f64], cost: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    let p = supply.len();
    let q = demand.len();
    if p == 0 || q == 0 {
        return Err(Error::invalid("empty transport marginals"));
    }
    if supply.iter().chain(demand).any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::invalid("transport marginals must be nonnegative"));
    }
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    if total_supply <= 0.0 || total_demand <= 0.0 {
        return Err(Error::invalid("transport marginals must carry mass"));
    }
    if ((total_supply - total_demand) / total_supply).abs() > 1e-6 {
        return Err(Error::invalid("transport marginals must balance"));
    }

    let mut remaining_supply = supply.to_vec();
    let scale = total_supply / total_demand;
    let mut remaining_demand: Vec<f64> = demand.iter().map(|&m| m * scale).collect();

    // flow[i * q + j] currently shipped on arc i -> j.
    let mut flow = vec![0.0f64; p * q];
    let mut total_cost = 0.0;
    let mut left = total_supply;

    // Node layout: 0..p are sources, p..p+q are sinks.
    let node_count = p + q;
    let mut dist = vec![0.0f64; node_count];
    let mut parent = vec![usize::MAX; node_count];

    let mut augmentations = 0usize;
    while left > MASS_EPS {
        augmentations += 1;
        if augmentations > MAX_AUGMENTATIONS {
            return Err(Error::invalid("transport failed to converge"));
        }

        // Bellman-Ford from every source that still has supply. Residual
        // arcs: forward source->sink at +cost (unlimited capacity) and
        // backward sink->source at -cost where flow can be withdrawn.
        for v in 0..node_count {
            dist[v] = f64::INFINITY;
            parent[v] = usize::MAX;
        }
        for (i, &s) in remaining_supply.iter().enumerate() {
            if s > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..node_count {
            let mut changed = false;
            for i in 0..p {
                if !dist[i].is_finite() {
                    continue;
                }
                for j in 0..q {
                    let cand = dist[i] + cost(i, j);
                    if cand < dist[p + j] - 1e-15 {
                        dist[p + j] = cand;
                        parent[p + j] = i;
                        changed = true;
                    }
                }
            }
            for j in 0..q {
                if !dist[p + j].is_finite() {
                    continue;
                }
                for i in 0..p {
                    if flow[i * q + j] <= MASS_EPS {
                        continue;
                    }
                    let cand = dist[p + j] - cost(i, j);
                    if cand < dist[i] - 1e-15 {
                        dist[i] = cand;
                        parent[i] = p + j;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Cheapest reachable sink with demand left; ties to the lowest index.
        let mut sink = usize::MAX;
        for j in 0..q {
            if remaining_demand[j] > MASS_EPS
                && dist[p + j].is_finite()
                && (sink == usize::MAX || dist[p + j] < dist[p + sink])
            {
                sink = j;
            }
        }
        if sink == usize::MAX {
            return Err(Error::invalid(
                "transport failed to route all mass (unbalanced marginals)",
            ));
        }

        // Walk back to find the bottleneck, then augment.
        let mut bottleneck = remaining_demand[sink].min(left);
        let mut node = p + sink;
        while parent[node] != usize::MAX {
            let prev = parent[node];
            if prev >= p {
                // Backward arc prev(sink) -> node(source): limited by flow.
                bottleneck = bottleneck.min(flow[node * q + (prev - p)]);
            }
            node = prev;
        }
        let start = node;
        debug_assert!(start < p);
        bottleneck = bottleneck.min(remaining_supply[start]);

        let mut node = p + sink;
        while parent[node] != usize::MAX {
            let prev = parent[node];
            if prev < p {
                // Forward arc prev(source) -> node(sink).
                let j = node - p;
                flow[prev * q + j] += bottleneck;
                total_cost += bottleneck * cost(prev, j);
            } else {
                // Backward arc prev(sink) -> node(source): withdraw flow.
                let j = prev - p;
                flow[node * q + j] -= bottleneck;
                total_cost -= bottleneck * cost(node, j);
            }
            node = prev;
        }
        remaining_supply[start] -= bottleneck;
        remaining_demand[sink] -= bottleneck;
        left -= bottleneck;
    }

    Ok(total_cost)
}
