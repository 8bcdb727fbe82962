//! Structure-preservation metrics for embeddings.

use rayon::prelude::*;

use super::knn::euclidean;
use super::EmbeddingError;

/// Trustworthiness of `low` as an embedding of `high` at neighborhood size `k`.
///
/// `1 − 2/(N·k·(2N−3k−1)) · Σᵢ Σ_{j∈Uᵢ} (r(i,j) − k)` where `Uᵢ` are the
/// low-space neighbors of `i` missing from its high-space neighbors and
/// `r(i,j)` is the rank of `j` among `i`'s high-space neighbors (1 = nearest).
/// Distance ties are ranked by row index.
pub fn trustworthiness<H, L>(high: &[H], low: &[L], k: usize) -> Result<f64, EmbeddingError>
where
    H: AsRef<[f64]> + Sync,
    L: AsRef<[f64]> + Sync,
{
    let n = high.len();
    if low.len() != n {
        return Err(EmbeddingError::RowMismatch {
            expected: n,
            got: low.len(),
        });
    }
    if k == 0 || 2 * n <= 3 * k + 1 {
        return Err(EmbeddingError::InvalidParams(format!(
            "trustworthiness needs 0 < k and 3k + 1 < 2N (k = {k}, N = {n})"
        )));
    }
    let penalties: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let high_order = ranked(high, i);
            let mut rank = vec![0usize; n];
            for (r, &j) in high_order.iter().enumerate() {
                rank[j] = r + 1;
            }
            let low_order = ranked(low, i);
            low_order[..k]
                .iter()
                .filter(|&&j| rank[j] > k)
                .map(|&j| (rank[j] - k) as f64)
                .sum()
        })
        .collect();
    let total: f64 = penalties.iter().sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * total)
}

fn ranked<R: AsRef<[f64]>>(rows: &[R], i: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, r)| (euclidean(rows[i].as_ref(), r.as_ref()), j))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    order.into_iter().map(|p| p.1).collect()
}

/// Fraction of rows whose predicted cluster's majority truth label matches theirs.
pub fn purity(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if predicted.is_empty() {
        return 1.0;
    }
    let k = predicted.iter().max().map_or(0, |m| m + 1);
    let t = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; t]; k];
    for (&p, &q) in predicted.iter().zip(truth) {
        counts[p][q] += 1;
    }
    let hits: usize = counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / predicted.len() as f64
}
