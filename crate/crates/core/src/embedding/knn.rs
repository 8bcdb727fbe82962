//! k-nearest-neighbor graphs: exact brute force and seeded NN-descent.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Row count above which [`knn_graph`] switches to NN-descent.
pub const EXACT_KNN_LIMIT: usize = 20_000;

/// Neighbors of one point, nearest first, self excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// The `k` nearest rows of `rows` to `query`, ties broken by row index.
/// `exclude` removes one row (the query itself when it belongs to `rows`).
pub fn nearest<R: AsRef<[f64]> + Sync>(
    rows: &[R],
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Neighbors {
    let mut all: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(j, r)| (euclidean(query, r.as_ref()), j))
        .collect();
    let k = k.min(all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k, by_distance);
        all.truncate(k);
    }
    all.sort_by(by_distance);
    Neighbors {
        indices: all.iter().map(|p| p.1).collect(),
        distances: all.iter().map(|p| p.0).collect(),
    }
}

/// Exact k-NN for every row, computed in parallel with deterministic output.
pub fn exact_knn<R: AsRef<[f64]> + Sync>(rows: &[R], k: usize) -> Vec<Neighbors> {
    (0..rows.len())
        .into_par_iter()
        .map(|i| nearest(rows, rows[i].as_ref(), k, Some(i)))
        .collect()
}

/// Approximate k-NN by neighbor-of-neighbor refinement from a seeded random graph.
pub fn nn_descent<R: AsRef<[f64]>>(rows: &[R], k: usize, seed: u64) -> Vec<Neighbors> {
    let n = rows.len();
    let k = k.min(n.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = |i: usize, j: usize| euclidean(rows[i].as_ref(), rows[j].as_ref());

    // sorted (distance, index) lists, nearest first
    let mut heaps: Vec<Vec<(f64, usize)>> = (0..n)
        .map(|i| {
            let mut picks: Vec<(f64, usize)> = sample(&mut rng, n - 1, k)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .map(|j| (dist(i, j), j))
                .collect();
            picks.sort_by(by_distance);
            picks
        })
        .collect();

    let insert = |heap: &mut Vec<(f64, usize)>, cand: (f64, usize)| -> bool {
        if heap.iter().any(|&(_, j)| j == cand.1) {
            return false;
        }
        if heap.len() == k && by_distance(&cand, &heap[k - 1]) != Ordering::Less {
            return false;
        }
        let pos = heap
            .binary_search_by(|probe| by_distance(probe, &cand))
            .unwrap_or_else(|p| p);
        heap.insert(pos, cand);
        heap.truncate(k);
        true
    };

    for _ in 0..12 {
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, heap) in heaps.iter().enumerate() {
            for &(_, j) in heap {
                reverse[j].push(i);
            }
        }
        let mut updates = 0usize;
        for i in 0..n {
            let mut local: Vec<usize> = heaps[i].iter().map(|p| p.1).collect();
            let rev = &reverse[i];
            // cap reverse neighbors to keep the join bounded
            if rev.len() > k {
                for idx in sample(&mut rng, rev.len(), k) {
                    local.push(rev[idx]);
                }
            } else {
                local.extend_from_slice(rev);
            }
            local.sort_unstable();
            local.dedup();
            for a in 0..local.len() {
                for b in a + 1..local.len() {
                    let (p, q) = (local[a], local[b]);
                    let d = dist(p, q);
                    if insert(&mut heaps[p], (d, q)) {
                        updates += 1;
                    }
                    if insert(&mut heaps[q], (d, p)) {
                        updates += 1;
                    }
                }
            }
        }
        if (updates as f64) < 0.001 * (n * k) as f64 {
            break;
        }
        // keep rng advancing deterministically between rounds
        let _: u64 = rng.random();
    }

    heaps
        .into_iter()
        .map(|h| Neighbors {
            indices: h.iter().map(|p| p.1).collect(),
            distances: h.iter().map(|p| p.0).collect(),
        })
        .collect()
}

/// Exact below [`EXACT_KNN_LIMIT`] rows, NN-descent above.
pub fn knn_graph<R: AsRef<[f64]> + Sync>(rows: &[R], k: usize, seed: u64) -> Vec<Neighbors> {
    if rows.len() <= EXACT_KNN_LIMIT {
        exact_knn(rows, k)
    } else {
        nn_descent(rows, k, seed)
    }
}
