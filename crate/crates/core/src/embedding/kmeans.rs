//! k-means++ seeding, representative subsampling and Lloyd clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingError;

const MAX_ITERATIONS: usize = 300;
const SHIFT_TOLERANCE: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: the first row uniformly, each next row with probability
/// proportional to its squared distance to the nearest row already chosen.
/// Returns `k` distinct row indices.
fn kmeanspp<R: AsRef<[f64]>>(rows: &[R], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rows.len();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    if k == 0 {
        return chosen;
    }
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut nearest: Vec<f64> = rows
        .iter()
        .map(|r| sq_dist(r.as_ref(), rows[first].as_ref()))
        .collect();

    while chosen.len() < k {
        let total: f64 = nearest
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(d, _)| d)
            .sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, (&d, &t)) in nearest.iter().zip(&taken).enumerate() {
                if t || d == 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive mass implies a candidate")
        } else {
            // only duplicates of chosen rows remain
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, r) in rows.iter().enumerate() {
            let d = sq_dist(r.as_ref(), rows[next].as_ref());
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    chosen
}

/// Evenly spread subset of `k` rows chosen by k-means++ seeding.
pub fn select_representatives<R: AsRef<[f64]>>(
    rows: &[R],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, EmbeddingError> {
    if k > rows.len() {
        return Err(EmbeddingError::TooManyClusters { k, n: rows.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(kmeanspp(rows, k, &mut rng))
}

/// Largest distance from any row to its nearest selected row.
pub fn coverage_radius<R: AsRef<[f64]>>(rows: &[R], selected: &[usize]) -> f64 {
    rows.iter()
        .map(|r| {
            selected
                .iter()
                .map(|&s| sq_dist(r.as_ref(), rows[s].as_ref()))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ initialisation.
pub fn cluster_map<R: AsRef<[f64]>>(
    rows: &[R],
    k: usize,
    seed: u64,
) -> Result<Clustering, EmbeddingError> {
    let n = rows.len();
    if k == 0 || k > n {
        return Err(EmbeddingError::TooManyClusters { k, n });
    }
    let dim = rows[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = kmeanspp(rows, k, &mut rng)
        .into_iter()
        .map(|i| rows[i].as_ref().to_vec())
        .collect();
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        iterations += 1;
        let mut inertia = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(c, cen)| (c, sq_dist(r.as_ref(), cen)))
                .fold(
                    (0, f64::INFINITY),
                    |acc, x| if x.1 < acc.1 { x } else { acc },
                );
            labels[i] = best;
            inertia += d;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r.as_ref()) {
                *s += v;
            }
        }
        // refill empty clusters with the worst-fit rows
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let (far, _) = rows
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[labels[*i]] > 1)
                .map(|(i, r)| (i, sq_dist(r.as_ref(), &centroids[labels[i]])))
                .fold(
                    (usize::MAX, -1.0),
                    |acc, x| if x.1 > acc.1 { x } else { acc },
                );
            if far == usize::MAX {
                continue;
            }
            let old = labels[far];
            let d = sq_dist(rows[far].as_ref(), &centroids[old]);
            inertia -= d;
            counts[old] -= 1;
            for (s, v) in sums[old].iter_mut().zip(rows[far].as_ref()) {
                *s -= v;
            }
            labels[far] = c;
            counts[c] = 1;
            sums[c] = rows[far].as_ref().to_vec();
        }
        history.push(inertia);

        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < SHIFT_TOLERANCE || iterations >= MAX_ITERATIONS {
            break;
        }
    }

    let inertia = rows
        .iter()
        .zip(&labels)
        .map(|(r, &l)| sq_dist(r.as_ref(), &centroids[l]))
        .sum();
    Ok(Clustering {
        labels,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    })
}
