//! The 2D exploration map.
//!
//! [`fit_embedding`] is a from-scratch UMAP: a k-nearest-neighbor graph,
//! per-point bandwidth calibration, fuzzy-union symmetrization, a fitted
//! low-dimensional similarity curve, and a seeded single-threaded SGD layout
//! with negative sampling. Fitted models place new shapes on the map with
//! [`EmbeddingModel::transform`].

mod curve;
mod kmeans;
mod knn;
mod metrics;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use curve::fit_curve;
pub use kmeans::{cluster_map, coverage_radius, select_representatives, Clustering};
pub use knn::{euclidean, exact_knn, knn_graph, nearest, nn_descent, Neighbors, EXACT_KNN_LIMIT};
pub use metrics::{purity, trustworthiness};

/// A 2D map coordinate.
pub type MapPoint = [f64; 2];

const SMOOTH_K_TOLERANCE: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;
const BANDWIDTH_ITERATIONS: usize = 64;
const NEGATIVE_SAMPLE_RATE: usize = 5;
const REPULSION_STRENGTH: f64 = 1.0;
const GRAD_CLIP: f64 = 4.0;
const INIT_EXTENT: f64 = 10.0;
/// Distance at or below which a query is treated as a copy of a training row.
pub const ZERO_DISTANCE: f64 = 1e-12;
/// Transform results whose strongest training-side membership falls below
/// this are flagged as low confidence.
pub const LOW_CONFIDENCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("need more rows than n_neighbors ({n_neighbors}), got {rows}")]
    TooFewRows { rows: usize, n_neighbors: usize },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("row {row} has dimension {got}, expected {expected}")]
    Dimension {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} rows, got {got}")]
    RowMismatch { expected: usize, got: usize },
    #[error("k = {k} must be between 1 and the row count {n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training data digest mismatch: model expects {expected}, data hashes to {got}")]
    DigestMismatch { expected: String, got: String },
    #[error("embedding artifact: {0}")]
    Artifact(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub seed: u64,
    pub metric: Metric,
    pub n_epochs: usize,
    /// Always 2.
    pub n_components: usize,
    /// SGD epochs used by [`EmbeddingModel::transform`].
    #[serde(default = "default_transform_epochs")]
    pub transform_epochs: usize,
}

fn default_transform_epochs() -> usize {
    30
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams {
            n_neighbors: 50,
            min_dist: 0.5,
            seed: 12,
            metric: Metric::Euclidean,
            n_epochs: 200,
            n_components: 2,
            transform_epochs: default_transform_epochs(),
        }
    }
}

impl EmbeddingParams {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.n_neighbors < 2 {
            return Err(EmbeddingError::InvalidParams(
                "n_neighbors must be at least 2".into(),
            ));
        }
        if !(self.min_dist >= 0.0 && self.min_dist.is_finite()) {
            return Err(EmbeddingError::InvalidParams(
                "min_dist must be non-negative".into(),
            ));
        }
        if self.n_epochs == 0 {
            return Err(EmbeddingError::InvalidParams(
                "n_epochs must be positive".into(),
            ));
        }
        if self.n_components != 2 {
            return Err(EmbeddingError::InvalidParams(
                "n_components is fixed at 2".into(),
            ));
        }
        Ok(())
    }
}

/// Placement of a new shape on the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub position: MapPoint,
    /// Strongest membership any of the nearest training points assigns to the query.
    pub confidence: f64,
    pub low_confidence: bool,
}

/// A fitted map. Immutable once built.
#[derive(Clone, Debug)]
pub struct EmbeddingModel {
    pub params: EmbeddingParams,
    training: Vec<Vec<f64>>,
    positions: Vec<MapPoint>,
    rhos: Vec<f64>,
    sigmas: Vec<f64>,
    pub curve_a: f64,
    pub curve_b: f64,
}

/// Persisted form of an [`EmbeddingModel`]; training rows are referenced by digest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingArtifact {
    pub params: EmbeddingParams,
    pub positions: Vec<MapPoint>,
    pub curve_a: f64,
    pub curve_b: f64,
    pub rhos: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub training_rows: usize,
    pub training_dim: usize,
    pub training_digest: String,
}

/// SHA-256 over the row count, dimension and little-endian values.
pub fn training_digest(rows: &[Vec<f64>]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((rows.len() as u64).to_le_bytes());
    hasher.update((rows.first().map_or(0, |r| r.len()) as u64).to_le_bytes());
    for r in rows {
        for v in r {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize, EmbeddingError> {
    let dim = rows.first().map_or(0, |r| r.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(EmbeddingError::Dimension {
                row: i,
                expected: dim,
                got: r.len(),
            });
        }
        if !r.iter().all(|v| v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
    }
    Ok(dim)
}

/// Solve `Σⱼ exp(−max(0, dⱼ − ρ)/σ) = log₂(k)` for σ by bisection.
/// Returns `(ρ, σ)`; `mean_all` floors σ when every neighbor is a duplicate.
fn smooth_knn_bandwidth(distances: &[f64], mean_all: f64) -> (f64, f64) {
    let k = distances.len();
    let target = (k as f64).log2();
    let rho = distances.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..BANDWIDTH_ITERATIONS {
        let psum: f64 = distances
            .iter()
            .map(|&d| {
                let gap = d - rho;
                if gap > 0.0 {
                    (-gap / mid).exp()
                } else {
                    1.0
                }
            })
            .sum();
        if (psum - target).abs() < SMOOTH_K_TOLERANCE {
            break;
        }
        if psum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() {
                mid * 2.0
            } else {
                (lo + hi) / 2.0
            };
        }
    }
    let mean_local = distances.iter().sum::<f64>() / k.max(1) as f64;
    let floor = if rho > 0.0 {
        MIN_K_DIST_SCALE * mean_local
    } else {
        MIN_K_DIST_SCALE * mean_all
    };
    (rho, mid.max(floor))
}

fn membership(d: f64, rho: f64, sigma: f64) -> f64 {
    let gap = d - rho;
    if gap <= 0.0 {
        1.0
    } else {
        (-gap / sigma).exp()
    }
}

/// Top-2 principal-component projection, scaled to `[0, 10]` per axis.
fn pca_init(rows: &[Vec<f64>]) -> Vec<MapPoint> {
    let n = rows.len();
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for r in rows {
        let centered =
            nalgebra::DVector::from_iterator(dim, r.iter().zip(&mean).map(|(v, m)| v - m));
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            // sign convention: largest-magnitude component positive
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let projected: Vec<MapPoint> = rows
        .iter()
        .map(|r| {
            let mut p = [0.0; 2];
            for (out, axis) in p.iter_mut().zip(&axes) {
                *out = r
                    .iter()
                    .zip(&mean)
                    .zip(axis)
                    .map(|((v, m), a)| (v - m) * a)
                    .sum();
            }
            p
        })
        .collect();
    rescale(projected)
}

fn rescale(mut points: Vec<MapPoint>) -> Vec<MapPoint> {
    for axis in 0..2 {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[axis]), hi.max(p[axis]))
            });
        let span = hi - lo;
        for p in points.iter_mut() {
            p[axis] = if span > 0.0 {
                INIT_EXTENT * (p[axis] - lo) / span
            } else {
                0.0
            };
        }
    }
    points
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

struct Edge {
    head: usize,
    tail: usize,
    epochs_per_sample: f64,
}

struct LayoutTerms {
    a: f64,
    b: f64,
}

impl LayoutTerms {
    fn attraction(&self, dist2: f64) -> f64 {
        if dist2 > 0.0 {
            -2.0 * self.a * self.b * dist2.powf(self.b - 1.0) / (self.a * dist2.powf(self.b) + 1.0)
        } else {
            0.0
        }
    }

    fn repulsion(&self, dist2: f64) -> f64 {
        2.0 * REPULSION_STRENGTH * self.b / ((0.001 + dist2) * (self.a * dist2.powf(self.b) + 1.0))
    }
}

/// Seeded SGD over the edge list.
///
/// When `anchors` is `Some`, edge tails and negative samples index into the
/// fixed anchor positions and only heads move; otherwise both ends move.
#[allow(clippy::too_many_arguments)]
fn optimize_layout(
    moving: &mut [MapPoint],
    anchors: Option<&[MapPoint]>,
    edges: &[Edge],
    terms: &LayoutTerms,
    n_epochs: usize,
    initial_alpha: f64,
    rng: &mut ChaCha8Rng,
) {
    let n_vertices = anchors.map_or(moving.len(), |a| a.len());
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.epochs_per_sample).collect();
    let neg_period: Vec<f64> = edges
        .iter()
        .map(|e| e.epochs_per_sample / NEGATIVE_SAMPLE_RATE as f64)
        .collect();
    let mut next_negative = neg_period.clone();
    let mut order: Vec<usize> = (0..edges.len()).collect();

    for epoch in 0..n_epochs {
        let alpha = initial_alpha * (1.0 - epoch as f64 / n_epochs as f64);
        let now = epoch as f64;
        order.shuffle(rng);
        for &e in &order {
            if next_sample[e] > now {
                continue;
            }
            let edge = &edges[e];
            let (head, tail) = (edge.head, edge.tail);
            let other = match anchors {
                Some(a) => a[tail],
                None => moving[tail],
            };
            let current = moving[head];
            let dist2 = (current[0] - other[0]).powi(2) + (current[1] - other[1]).powi(2);
            let coeff = terms.attraction(dist2);
            for d in 0..2 {
                let grad = clip(coeff * (current[d] - other[d]));
                moving[head][d] += grad * alpha;
                if anchors.is_none() {
                    moving[tail][d] -= grad * alpha;
                }
            }
            next_sample[e] += edge.epochs_per_sample;

            let n_neg = ((now - next_negative[e]) / neg_period[e]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let k = rng.random_range(0..n_vertices);
                if anchors.is_none() && k == head {
                    continue;
                }
                let current = moving[head];
                let other = match anchors {
                    Some(a) => a[k],
                    None => moving[k],
                };
                let dist2 = (current[0] - other[0]).powi(2) + (current[1] - other[1]).powi(2);
                let coeff = if dist2 > 0.0 {
                    terms.repulsion(dist2)
                } else {
                    0.0
                };
                for d in 0..2 {
                    let grad = if coeff > 0.0 {
                        clip(coeff * (current[d] - other[d]))
                    } else {
                        GRAD_CLIP
                    };
                    moving[head][d] += grad * alpha;
                }
            }
            next_negative[e] += n_neg as f64 * neg_period[e];
        }
    }
}

/// Fit the exploration map.
pub fn fit_embedding(
    rows: &[Vec<f64>],
    params: &EmbeddingParams,
) -> Result<EmbeddingModel, EmbeddingError> {
    params.validate()?;
    let n = rows.len();
    if n <= params.n_neighbors {
        return Err(EmbeddingError::TooFewRows {
            rows: n,
            n_neighbors: params.n_neighbors,
        });
    }
    check_rows(rows)?;
    let k = params.n_neighbors;
    let graph = knn_graph(rows, k, params.seed);
    let mean_all = graph.iter().flat_map(|g| g.distances.iter()).sum::<f64>() / (n * k) as f64;

    let (rhos, sigmas): (Vec<f64>, Vec<f64>) = graph
        .iter()
        .map(|g| smooth_knn_bandwidth(&g.distances, mean_all))
        .unzip();

    // fuzzy union w = a + b − a·b, keyed by unordered pair
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, g) in graph.iter().enumerate() {
        for (&j, &d) in g.indices.iter().zip(&g.distances) {
            directed.insert((i, j), membership(d, rhos[i], sigmas[i]));
        }
    }
    let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        if weights.contains_key(&(lo, hi)) {
            continue;
        }
        let reverse = directed.get(&(j, i)).copied().unwrap_or(0.0);
        weights.insert((lo, hi), w + reverse - w * reverse);
    }
    let max_w = weights.values().copied().fold(0.0, f64::max);
    let min_keep = max_w / params.n_epochs as f64;
    let mut edges = Vec::with_capacity(weights.len() * 2);
    for (&(i, j), &w) in &weights {
        if w < min_keep || w <= 0.0 {
            continue;
        }
        let eps = max_w / w;
        edges.push(Edge {
            head: i,
            tail: j,
            epochs_per_sample: eps,
        });
        edges.push(Edge {
            head: j,
            tail: i,
            epochs_per_sample: eps,
        });
    }

    let (curve_a, curve_b) = fit_curve(params.min_dist, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut positions = pca_init(rows);
    for p in positions.iter_mut() {
        p[0] += rng.random_range(-1e-4..1e-4);
        p[1] += rng.random_range(-1e-4..1e-4);
    }
    let terms = LayoutTerms {
        a: curve_a,
        b: curve_b,
    };
    optimize_layout(
        &mut positions,
        None,
        &edges,
        &terms,
        params.n_epochs,
        1.0,
        &mut rng,
    );

    if let Some(i) = positions
        .iter()
        .position(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(EmbeddingError::NonFinite(i));
    }
    Ok(EmbeddingModel {
        params: params.clone(),
        training: rows.to_vec(),
        positions,
        rhos,
        sigmas,
        curve_a,
        curve_b,
    })
}

impl EmbeddingModel {
    pub fn positions(&self) -> &[MapPoint] {
        &self.positions
    }

    pub fn training_vectors(&self) -> &[Vec<f64>] {
        &self.training
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Axis-aligned bounds of the training positions as `(min, max)`.
    pub fn bounds(&self) -> (MapPoint, MapPoint) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.positions {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Diagonal length of [`EmbeddingModel::bounds`].
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Place a new vector on the map.
    ///
    /// A query at zero distance from a training row returns that row's
    /// position exactly. Otherwise the query starts at the membership-weighted
    /// mean of its neighbors and is refined by a short seeded SGD against the
    /// fixed training layout.
    pub fn transform(&self, vector: &[f64]) -> Result<Placement, EmbeddingError> {
        let dim = self.training[0].len();
        if vector.len() != dim {
            return Err(EmbeddingError::Dimension {
                row: 0,
                expected: dim,
                got: vector.len(),
            });
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(EmbeddingError::NonFinite(0));
        }
        let k = self.params.n_neighbors.min(self.training.len());
        let nb = nearest(&self.training, vector, k, None);
        if nb.distances[0] <= ZERO_DISTANCE {
            return Ok(Placement {
                position: self.positions[nb.indices[0]],
                confidence: 1.0,
                low_confidence: false,
            });
        }

        let mean_all = nb.distances.iter().sum::<f64>() / k as f64;
        let (rho, sigma) = smooth_knn_bandwidth(&nb.distances, mean_all);
        let weights: Vec<f64> = nb
            .distances
            .iter()
            .map(|&d| membership(d, rho, sigma))
            .collect();
        let confidence = nb
            .indices
            .iter()
            .zip(&nb.distances)
            .map(|(&j, &d)| membership(d, self.rhos[j], self.sigmas[j]))
            .fold(0.0, f64::max);

        let total: f64 = weights.iter().sum();
        let mut start = [0.0; 2];
        for (&j, &w) in nb.indices.iter().zip(&weights) {
            start[0] += w * self.positions[j][0] / total;
            start[1] += w * self.positions[j][1] / total;
        }

        let max_w = weights.iter().copied().fold(0.0, f64::max);
        let epochs = self.params.transform_epochs;
        let edges: Vec<Edge> = nb
            .indices
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w >= max_w / epochs.max(1) as f64)
            .map(|(&j, &w)| Edge {
                head: 0,
                tail: j,
                epochs_per_sample: max_w / w,
            })
            .collect();
        let mut moving = [start];
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ vector_seed(vector));
        let terms = LayoutTerms {
            a: self.curve_a,
            b: self.curve_b,
        };
        optimize_layout(
            &mut moving,
            Some(&self.positions),
            &edges,
            &terms,
            epochs,
            0.25,
            &mut rng,
        );

        Ok(Placement {
            position: moving[0],
            confidence,
            low_confidence: confidence < LOW_CONFIDENCE,
        })
    }

    pub fn to_artifact(&self) -> EmbeddingArtifact {
        EmbeddingArtifact {
            params: self.params.clone(),
            positions: self.positions.clone(),
            curve_a: self.curve_a,
            curve_b: self.curve_b,
            rhos: self.rhos.clone(),
            sigmas: self.sigmas.clone(),
            training_rows: self.training.len(),
            training_dim: self.training.first().map_or(0, |r| r.len()),
            training_digest: training_digest(&self.training),
        }
    }

    /// Rebuild a model from its artifact and the training rows it was fit on.
    pub fn from_artifact(
        artifact: EmbeddingArtifact,
        rows: Vec<Vec<f64>>,
    ) -> Result<EmbeddingModel, EmbeddingError> {
        let got = training_digest(&rows);
        if got != artifact.training_digest {
            return Err(EmbeddingError::DigestMismatch {
                expected: artifact.training_digest,
                got,
            });
        }
        let n = rows.len();
        for len in [
            artifact.positions.len(),
            artifact.rhos.len(),
            artifact.sigmas.len(),
        ] {
            if len != n {
                return Err(EmbeddingError::RowMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(EmbeddingModel {
            params: artifact.params,
            training: rows,
            positions: artifact.positions,
            rhos: artifact.rhos,
            sigmas: artifact.sigmas,
            curve_a: artifact.curve_a,
            curve_b: artifact.curve_b,
        })
    }
}

fn vector_seed(v: &[f64]) -> u64 {
    v.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, x| {
        (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian_clusters(per: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..per {
                let mut r: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
                r[c] += 6.0;
                rows.push(r);
                labels.push(c);
            }
        }
        (rows, labels)
    }

    fn small_params() -> EmbeddingParams {
        EmbeddingParams {
            n_neighbors: 10,
            n_epochs: 100,
            ..EmbeddingParams::default()
        }
    }

    #[test]
    fn defaults_match_map_settings() {
        let p = EmbeddingParams::default();
        assert_eq!(
            (p.n_neighbors, p.min_dist, p.seed, p.n_epochs),
            (50, 0.5, 12, 200)
        );
        assert_eq!(p.metric, Metric::Euclidean);
    }

    #[test]
    fn bandwidth_solves_target_sum() {
        let d = [0.5, 0.7, 0.8, 1.0, 1.1, 1.5, 2.0, 2.2];
        let (rho, sigma) = smooth_knn_bandwidth(&d, 1.0);
        assert_eq!(rho, 0.5);
        let sum: f64 = d.iter().map(|&x| membership(x, rho, sigma)).sum();
        assert!((sum - 3.0).abs() < 1e-4, "{sum}");
    }

    #[test]
    fn too_few_rows() {
        let rows = vec![vec![0.0, 1.0]; 10];
        assert!(matches!(
            fit_embedding(&rows, &small_params()),
            Err(EmbeddingError::TooFewRows { .. })
        ));
    }

    #[test]
    fn non_finite_rows_rejected() {
        let (mut rows, _) = gaussian_clusters(10, 4, 1);
        rows[5][2] = f64::NAN;
        assert!(matches!(
            fit_embedding(&rows, &small_params()),
            Err(EmbeddingError::NonFinite(5))
        ));
    }

    #[test]
    fn separates_gaussian_clusters() {
        let (rows, labels) = gaussian_clusters(40, 8, 2);
        let model = fit_embedding(&rows, &small_params()).unwrap();
        let c = cluster_map(model.positions(), 3, 0).unwrap();
        assert!(purity(&c.labels, &labels) > 0.95);
        assert!(trustworthiness(&rows, model.positions(), 5).unwrap() > 0.9);
    }

    #[test]
    fn fit_is_deterministic() {
        let (rows, _) = gaussian_clusters(20, 5, 3);
        let a = fit_embedding(&rows, &small_params()).unwrap();
        let b = fit_embedding(&rows, &small_params()).unwrap();
        assert_eq!(a.positions(), b.positions());
    }

    #[test]
    fn transform_of_training_row_is_exact() {
        let (rows, _) = gaussian_clusters(20, 5, 4);
        let model = fit_embedding(&rows, &small_params()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let p = model.transform(r).unwrap();
            assert_eq!(p.position, model.positions()[i]);
            assert!(!p.low_confidence);
        }
    }

    #[test]
    fn far_query_is_low_confidence() {
        let (rows, _) = gaussian_clusters(20, 5, 5);
        let model = fit_embedding(&rows, &small_params()).unwrap();
        let far = vec![60.0; 5];
        let p = model.transform(&far).unwrap();
        assert!(p.position.iter().all(|v| v.is_finite()));
        assert!(p.low_confidence && p.confidence < 0.1);
        assert!(model.transform(&[f64::NAN; 5]).is_err());
        assert!(model.transform(&[0.0; 3]).is_err());
    }

    #[test]
    fn artifact_round_trip_requires_matching_rows() {
        let (rows, _) = gaussian_clusters(20, 5, 6);
        let model = fit_embedding(&rows, &small_params()).unwrap();
        let json = serde_json::to_string(&model.to_artifact()).unwrap();
        let artifact: EmbeddingArtifact = serde_json::from_str(&json).unwrap();
        let restored = EmbeddingModel::from_artifact(artifact.clone(), rows.clone()).unwrap();
        assert_eq!(restored.positions(), model.positions());
        let probe = vec![0.5; 5];
        assert_eq!(
            restored.transform(&probe).unwrap(),
            model.transform(&probe).unwrap()
        );
        let mut other = rows;
        other[0][0] += 1.0;
        assert!(matches!(
            EmbeddingModel::from_artifact(artifact, other),
            Err(EmbeddingError::DigestMismatch { .. })
        ));
    }
}
