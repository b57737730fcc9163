//! Exact optimal transport between uniform discrete measures.
//!
//! Front `a` (n points) and front `b` (m points) become a transportation
//! problem with integer masses: every point of `a` supplies `m/g` units and
//! every point of `b` demands `n/g` units, `g = gcd(n, m)`. It is solved by
//! successive shortest paths with Johnson potentials on the dense bipartite
//! graph, so the optimum is exact up to floating point summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GroundCost {
    /// Squared Euclidean cost, square root of the optimum.
    #[default]
    W2,
    /// Euclidean cost.
    W1,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lex_cmp(a: &[Vec<f64>], b: &[Vec<f64>]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        for (x, y) in p.iter().zip(q) {
            let c = x.total_cmp(y);
            if c.is_ne() {
                return c;
            }
        }
    }
    a.len().cmp(&b.len())
}

/// 2-Wasserstein distance between the uniform measures on two fronts.
pub fn wasserstein_2d(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    wasserstein(a, b, GroundCost::W2)
}

pub fn wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], ground: GroundCost) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("transport needs two nonempty point sets".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(Error::Contract("all points must have the same dimension".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let sort = |v: &mut Vec<Vec<f64>>| v.sort_by(|p, q| lex_cmp(std::slice::from_ref(p), std::slice::from_ref(q)));
    sort(&mut a);
    sort(&mut b);
    match lex_cmp(&a, &b) {
        std::cmp::Ordering::Equal => return Ok(0.0),
        std::cmp::Ordering::Greater => std::mem::swap(&mut a, &mut b),
        std::cmp::Ordering::Less => {}
    }

    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let sq: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
                    match ground {
                        GroundCost::W2 => sq,
                        GroundCost::W1 => sq.sqrt(),
                    }
                })
                .collect()
        })
        .collect();
    let units = (a.len() * b.len() / gcd(a.len(), b.len())) as f64;
    let total = min_cost_transport(&cost, b.len() / gcd(a.len(), b.len()), a.len() / gcd(a.len(), b.len()));
    let mean = (total / units).max(0.0);
    Ok(match ground {
        GroundCost::W2 => mean.sqrt(),
        GroundCost::W1 => mean,
    })
}

/// Minimum total cost of shipping `supply` units from each row node to
/// `demand` units at each column node.
fn min_cost_transport(cost: &[Vec<f64>], supply: usize, demand: usize) -> f64 {
    let n = cost.len();
    let m = cost[0].len();
    // Node layout: rows 0..n, columns n..n+m, sink n+m. The source is
    // implicit with potential 0.
    let v = n + m + 1;
    let sink = n + m;
    let mut supply_left = vec![supply; n];
    let mut demand_left = vec![demand; m];
    let mut flow = vec![vec![0usize; m]; n];
    let mut pot = vec![0.0f64; v];
    let mut remaining = n * supply;

    let mut dist = vec![f64::INFINITY; v];
    let mut prev = vec![usize::MAX; v];
    let mut done = vec![false; v];
    while remaining > 0 {
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for i in 0..n {
            if supply_left[i] > 0 {
                dist[i] = (-pot[i]).max(0.0);
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (w, &d) in dist.iter().enumerate() {
                if !done[w] && d < best {
                    best = d;
                    u = w;
                }
            }
            if u == usize::MAX || u == sink {
                break;
            }
            done[u] = true;
            if u < n {
                for j in 0..m {
                    let w = n + j;
                    let nd = best + (cost[u][j] + pot[u] - pot[w]).max(0.0);
                    if nd < dist[w] {
                        dist[w] = nd;
                        prev[w] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[i][j] > 0 {
                        let nd = best + (-cost[i][j] + pot[u] - pot[i]).max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = u;
                        }
                    }
                }
                if demand_left[j] > 0 {
                    let nd = best + (pot[u] - pot[sink]).max(0.0);
                    if nd < dist[sink] {
                        dist[sink] = nd;
                        prev[sink] = u;
                    }
                }
            }
        }
        let d_sink = dist[sink];
        debug_assert!(d_sink.is_finite());
        for w in 0..v {
            pot[w] += dist[w].min(d_sink);
        }

        // Walk the path back to its starting row to find the bottleneck.
        let mut delta = usize::MAX;
        let mut w = sink;
        while prev[w] != usize::MAX {
            let u = prev[w];
            if w == sink {
                delta = delta.min(demand_left[u - n]);
            } else if u >= n {
                delta = delta.min(flow[w][u - n]);
            }
            w = u;
        }
        delta = delta.min(supply_left[w]);

        let mut w = sink;
        while prev[w] != usize::MAX {
            let u = prev[w];
            if w == sink {
                demand_left[u - n] -= delta;
            } else if u < n {
                flow[u][w - n] += delta;
            } else {
                flow[w][u - n] -= delta;
            }
            w = u;
        }
        supply_left[w] -= delta;
        remaining -= delta;
    }

    flow.iter()
        .zip(cost)
        .map(|(fr, cr)| fr.iter().zip(cr).map(|(&f, &c)| f as f64 * c).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force_equal_size(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        fn rec(a: &[Vec<f64>], b: &[Vec<f64>], used: &mut Vec<bool>, i: usize) -> f64 {
            if i == a.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    let c: f64 = a[i].iter().zip(&b[j]).map(|(x, y)| (x - y) * (x - y)).sum();
                    best = best.min(c + rec(a, b, used, i + 1));
                    used[j] = false;
                }
            }
            best
        }
        (rec(a, b, &mut vec![false; b.len()], 0) / a.len() as f64).sqrt()
    }

    #[test]
    fn examples() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!((wasserstein_2d(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(wasserstein_2d(&a, &a).unwrap(), 0.0);
        let t: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 3.0, p[1] + 4.0]).collect();
        assert!((wasserstein_2d(&a, &t).unwrap() - 5.0).abs() < 1e-12);
        assert!((wasserstein(&a, &t, GroundCost::W1).unwrap() - 5.0).abs() < 1e-12);
        assert!(wasserstein_2d(&a, &[]).is_err());
    }

    #[test]
    fn unequal_sizes() {
        // One point against two: all mass of the singleton splits evenly.
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert!((wasserstein_2d(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        // Two points against three on a line, W1 by the quantile formula.
        let a = vec![vec![0.0, 0.0], vec![3.0, 0.0]];
        let b = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        let w1 = wasserstein(&a, &b, GroundCost::W1).unwrap();
        // Quantiles: a = 0 on [0,1/2), 3 on [1/2,1); b = 0,1,2 on thirds.
        let expected = (1.0 / 6.0) * 1.0 + (1.0 / 6.0) * 2.0 + (1.0 / 3.0) * 1.0;
        assert!((w1 - expected).abs() < 1e-12, "{w1} vs {expected}");
    }

    #[test]
    fn matches_assignment_enumeration() {
        let mut rng = seed::rng(5);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let a: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
            let b: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
            let w = wasserstein_2d(&a, &b).unwrap();
            assert!((w - brute_force_equal_size(&a, &b)).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn symmetric_and_permutation_invariant(
            a in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..10),
            b in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..10),
        ) {
            let ab = wasserstein_2d(&a, &b).unwrap();
            prop_assert_eq!(ab, wasserstein_2d(&b, &a).unwrap());
            let mut r = a.clone();
            r.reverse();
            prop_assert_eq!(ab, wasserstein_2d(&r, &b).unwrap());
        }
    }
}
