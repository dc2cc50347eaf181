//! Exact discrete optimal transport by successive shortest augmenting paths.
//!
//! The transportation problem between two finite weight vectors is solved as a
//! min-cost flow on the complete bipartite graph. Each augmentation runs a dense
//! Dijkstra on reduced costs (node potentials keep them nonnegative), so a
//! solve costs O((n + m)^3) in the worst case, which is negligible at the atom
//! counts the measures module accepts.

/// Residual capacities below this are treated as exhausted.
const FLOW_EPS: f64 = 1e-15;

/// An optimal coupling and its cost.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub cost: f64,
    /// Row-major `supply.len() x demand.len()` matrix of transported mass.
    pub flow: Vec<f64>,
}

/// Solves `min <C, P>` over couplings `P` of `supply` and `demand`.
///
/// `cost` is row-major with one row per supply atom. Both weight vectors must
/// carry (numerically) the same total mass; any leftover below rounding level
/// is left unassigned.
pub fn optimal_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> TransportPlan {
    let n = supply.len();
    let m = demand.len();
    assert_eq!(cost.len(), n * m, "cost matrix shape");

    let mut flow = vec![0.0; n * m];
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    // Potentials: sources 0..n, sinks n..n+m.
    let mut pot = vec![0.0; n + m];
    let mut dist = vec![0.0; n + m];
    let mut parent = vec![usize::MAX; n + m];
    let mut done = vec![false; n + m];

    loop {
        if !sup.iter().any(|&s| s > FLOW_EPS) || !dem.iter().any(|&d| d > FLOW_EPS) {
            break;
        }

        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if sup[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }

        for _ in 0..(n + m) {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (v, (&d, &fin)) in dist.iter().zip(&done).enumerate() {
                if !fin && d < best {
                    best = d;
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < n {
                // forward arcs source -> sink
                let row = &cost[u * m..(u + 1) * m];
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (row[j] + pot[u] - pot[v]).max(0.0);
                    let cand = best + rc;
                    if cand < dist[v] {
                        dist[v] = cand;
                        parent[v] = u;
                    }
                }
            } else {
                // reverse arcs sink -> source, only where mass already flows
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= FLOW_EPS {
                        continue;
                    }
                    let rc = (-cost[i * m + j] + pot[u] - pot[i]).max(0.0);
                    let cand = best + rc;
                    if cand < dist[i] {
                        dist[i] = cand;
                        parent[i] = u;
                    }
                }
            }
        }

        // Cheapest reachable sink with open demand, by true path length.
        let mut sink = usize::MAX;
        let mut best_true = f64::INFINITY;
        for j in 0..m {
            let v = n + j;
            if dem[j] > FLOW_EPS && dist[v].is_finite() {
                let true_len = dist[v] + pot[v];
                if true_len < best_true {
                    best_true = true_len;
                    sink = v;
                }
            }
        }
        if sink == usize::MAX {
            break;
        }

        let reach = dist
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max);
        for (p, &d) in pot.iter_mut().zip(&dist) {
            *p += if d.is_finite() { d } else { reach };
        }

        // Bottleneck along the path.
        let mut bottleneck = dem[sink - n];
        let mut v = sink;
        let source;
        loop {
            let u = parent[v];
            if u == usize::MAX {
                source = v;
                break;
            }
            if u >= n {
                // arc sink u -> source v undoes flow on (v, u)
                bottleneck = bottleneck.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        bottleneck = bottleneck.min(sup[source]);

        let mut v = sink;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < n {
                flow[u * m + (v - n)] += bottleneck;
            } else {
                let f = &mut flow[v * m + (u - n)];
                *f = (*f - bottleneck).max(0.0);
            }
            v = u;
        }
        sup[source] -= bottleneck;
        dem[sink - n] -= bottleneck;
    }

    let cost_total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    TransportPlan {
        cost: cost_total,
        flow,
    }
}
