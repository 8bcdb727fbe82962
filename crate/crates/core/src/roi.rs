//! Region-of-interest inference from choice events.
//!
//! Every generation round in which the user picks one design yields a
//! [`ChoiceEvent`]: one chosen option and the options passed over. A latent
//! goodness `g` over map coordinates gets a zero-mean squared-exponential GP
//! prior, each event contributes one Bradley-Terry-Luce softmax term, and the
//! latent values at the distinct option positions are fit at their MAP by
//! damped Newton iterations. The predicted mean of `g` is the ROI field shown
//! on the map.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blobshape::ShapeId;
use crate::embedding::MapPoint;

/// Support points closer than this are merged.
pub const MERGE_DISTANCE: f64 = 1e-9;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_NEWTON_ITERATIONS: usize = 100;
const NEWTON_BASIN: f64 = 1e-4;
/// Default length scale as a fraction of the map diameter.
pub const LENGTH_SCALE_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoiError {
    #[error("a choice needs at least one other option")]
    NoOthers,
    #[error("chosen option {0} also appears among the others")]
    ChosenInOthers(ShapeId),
    #[error("option {0} appears more than once")]
    DuplicateOption(ShapeId),
    #[error("no position recorded for {0}")]
    MissingPosition(ShapeId),
    #[error("position of {0} is not finite")]
    NonFinitePosition(ShapeId),
    #[error("a BTL event needs at least 2 options, got {0}")]
    TooFewOptions(usize),
    #[error("chosen index {index} out of range for {len} options")]
    ChosenIndex { index: usize, len: usize },
    #[error("at least one choice event is required")]
    NoEvents,
    #[error("kernel parameters must be positive and finite")]
    InvalidKernel,
    #[error("kernel matrix is not positive definite after jitter")]
    NotPositiveDefinite,
    #[error("field resolution must be at least 2 per axis")]
    Resolution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_jitter: f64,
}

impl KernelParams {
    /// Unit signal variance, length scale `0.15 × diameter`, jitter `1e-6`.
    pub fn for_map(diameter: f64) -> Self {
        KernelParams {
            signal_variance: 1.0,
            length_scale: LENGTH_SCALE_FRACTION * diameter,
            noise_jitter: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), RoiError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.signal_variance) && ok(self.length_scale) && ok(self.noise_jitter) {
            Ok(())
        } else {
            Err(RoiError::InvalidKernel)
        }
    }

    /// Squared-exponential covariance between two map points.
    pub fn covariance(&self, a: &MapPoint, b: &MapPoint) -> f64 {
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        self.signal_variance * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }
}

/// One generation-round choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceEvent {
    #[serde(rename = "seq")]
    pub sequence_no: u64,
    pub chosen: ShapeId,
    pub others: Vec<ShapeId>,
    pub positions: BTreeMap<ShapeId, MapPoint>,
}

impl ChoiceEvent {
    pub fn new(
        sequence_no: u64,
        chosen: ShapeId,
        others: Vec<ShapeId>,
        positions: BTreeMap<ShapeId, MapPoint>,
    ) -> Result<Self, RoiError> {
        let event = ChoiceEvent {
            sequence_no,
            chosen,
            others,
            positions,
        };
        event.validate()?;
        Ok(event)
    }

    pub fn validate(&self) -> Result<(), RoiError> {
        if self.others.is_empty() {
            return Err(RoiError::NoOthers);
        }
        if self.others.contains(&self.chosen) {
            return Err(RoiError::ChosenInOthers(self.chosen.clone()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in self.options() {
            if !seen.insert(id) {
                return Err(RoiError::DuplicateOption(id.clone()));
            }
            let p = self
                .positions
                .get(id)
                .ok_or_else(|| RoiError::MissingPosition(id.clone()))?;
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(RoiError::NonFinitePosition(id.clone()));
            }
        }
        Ok(())
    }

    /// Chosen option first, then the others in order.
    pub fn options(&self) -> impl Iterator<Item = &ShapeId> {
        std::iter::once(&self.chosen).chain(self.others.iter())
    }
}

fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `g[chosen] − logsumexp(g)`.
pub fn btl_log_likelihood(g: &[f64], chosen: usize) -> Result<f64, RoiError> {
    if g.len() < 2 {
        return Err(RoiError::TooFewOptions(g.len()));
    }
    if chosen >= g.len() {
        return Err(RoiError::ChosenIndex {
            index: chosen,
            len: g.len(),
        });
    }
    Ok(g[chosen] - logsumexp(g))
}

/// Choice probabilities of every option under the BTL softmax.
pub fn btl_probabilities(g: &[f64]) -> Vec<f64> {
    let lse = logsumexp(g);
    g.iter().map(|v| (v - lse).exp()).collect()
}

/// The MAP objective over latent values at the support points:
/// `Σₑ log P(chosenₑ | g) − ½ gᵀ K⁻¹ g`.
#[derive(Clone, Debug)]
pub struct MapObjective {
    support: Vec<MapPoint>,
    /// Per event: support indices of its options, chosen first.
    options: Vec<Vec<usize>>,
    kernel_chol: Cholesky<f64, Dyn>,
    kernel_matrix: DMatrix<f64>,
}

impl MapObjective {
    pub fn new(events: &[ChoiceEvent], kernel: &KernelParams) -> Result<Self, RoiError> {
        kernel.validate()?;
        if events.is_empty() {
            return Err(RoiError::NoEvents);
        }
        let mut support: Vec<MapPoint> = Vec::new();
        let mut options = Vec::with_capacity(events.len());
        for event in events {
            event.validate()?;
            let idx = event
                .options()
                .map(|id| {
                    let p = event.positions[id];
                    match support
                        .iter()
                        .position(|s| distance(s, &p) <= MERGE_DISTANCE)
                    {
                        Some(i) => i,
                        None => {
                            support.push(p);
                            support.len() - 1
                        }
                    }
                })
                .collect();
            options.push(idx);
        }
        let m = support.len();
        let kernel_matrix = DMatrix::from_fn(m, m, |i, j| {
            let base = kernel.covariance(&support[i], &support[j]);
            if i == j {
                base + kernel.noise_jitter
            } else {
                base
            }
        });
        let kernel_chol =
            Cholesky::new(kernel_matrix.clone()).ok_or(RoiError::NotPositiveDefinite)?;
        Ok(MapObjective {
            support,
            options,
            kernel_chol,
            kernel_matrix,
        })
    }

    pub fn dimension(&self) -> usize {
        self.support.len()
    }

    pub fn support(&self) -> &[MapPoint] {
        &self.support
    }

    fn event_values(&self, g: &DVector<f64>, opts: &[usize]) -> Vec<f64> {
        opts.iter().map(|&i| g[i]).collect()
    }

    pub fn value(&self, g: &DVector<f64>) -> f64 {
        let likelihood: f64 = self
            .options
            .iter()
            .map(|opts| {
                let vals = self.event_values(g, opts);
                vals[0] - logsumexp(&vals)
            })
            .sum();
        let alpha = self.kernel_chol.solve(g);
        likelihood - 0.5 * g.dot(&alpha)
    }

    /// Analytic gradient: `Σₑ (e_chosen − pₑ) − K⁻¹ g`.
    pub fn gradient(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut grad = -self.kernel_chol.solve(g);
        for opts in &self.options {
            let p = btl_probabilities(&self.event_values(g, opts));
            grad[opts[0]] += 1.0;
            for (&i, pi) in opts.iter().zip(&p) {
                grad[i] -= pi;
            }
        }
        grad
    }

    /// Negative Hessian of the likelihood part: `Σₑ (diag(pₑ) − pₑ pₑᵀ)` scattered.
    fn likelihood_curvature(&self, g: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dimension();
        let mut w = DMatrix::zeros(m, m);
        for opts in &self.options {
            let p = btl_probabilities(&self.event_values(g, opts));
            for (a, &i) in opts.iter().enumerate() {
                w[(i, i)] += p[a];
                for (b, &j) in opts.iter().enumerate() {
                    w[(i, j)] -= p[a] * p[b];
                }
            }
        }
        w
    }
}

fn distance(a: &MapPoint, b: &MapPoint) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// MAP latent goodness with its cached kernel factorization.
#[derive(Clone, Debug)]
pub struct GoodnessModel {
    pub kernel: KernelParams,
    pub events: Vec<ChoiceEvent>,
    objective: MapObjective,
    g_map: DVector<f64>,
    /// `K⁻¹ g_map`.
    alpha: DVector<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Fit the MAP latent goodness with damped Newton steps from `g = 0`.
pub fn fit_map(events: &[ChoiceEvent], kernel: &KernelParams) -> Result<GoodnessModel, RoiError> {
    let objective = MapObjective::new(events, kernel)?;
    let m = objective.dimension();
    let mut g = DVector::zeros(m);
    let mut value = objective.value(&g);
    let mut grad = objective.gradient(&g);
    let mut iterations = 0;

    while iterations < MAX_NEWTON_ITERATIONS && grad.amax() >= GRADIENT_TOLERANCE {
        iterations += 1;
        // (K⁻¹ + W) δ = ∇  ⇔  (I + K W) δ = K ∇
        let w = objective.likelihood_curvature(&g);
        let system = DMatrix::identity(m, m) + &objective.kernel_matrix * w;
        let rhs = &objective.kernel_matrix * &grad;
        let Some(step) = system.lu().solve(&rhs) else {
            break;
        };
        // inside the quadratic basin objective differences fall below rounding
        if grad.amax() < NEWTON_BASIN {
            g += &step;
            value = objective.value(&g);
            grad = objective.gradient(&g);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let candidate = &g + &step * t;
            let candidate_value = objective.value(&candidate);
            if candidate_value >= value {
                g = candidate;
                value = candidate_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        grad = objective.gradient(&g);
        if !accepted {
            break;
        }
    }
    let alpha = objective.kernel_chol.solve(&g);
    Ok(GoodnessModel {
        kernel: *kernel,
        events: events.to_vec(),
        objective,
        gradient_norm: grad.amax(),
        g_map: g,
        alpha,
        iterations,
    })
}

impl GoodnessModel {
    pub fn support_points(&self) -> &[MapPoint] {
        self.objective.support()
    }

    pub fn g_map(&self) -> &[f64] {
        self.g_map.as_slice()
    }

    pub fn objective(&self) -> &MapObjective {
        &self.objective
    }

    /// `k(x, X) · K⁻¹ · g_map`. A query coinciding with a support point
    /// uses that point's jittered self-covariance, so it interpolates exactly.
    pub fn predict_mean(&self, x: &MapPoint) -> f64 {
        self.objective
            .support
            .iter()
            .zip(self.alpha.iter())
            .map(|(s, a)| {
                let mut k = self.kernel.covariance(x, s);
                if distance(x, s) <= MERGE_DISTANCE {
                    k += self.kernel.noise_jitter;
                }
                k * a
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapBounds {
    pub min: MapPoint,
    pub max: MapPoint,
}

impl MapBounds {
    pub fn diameter(&self) -> f64 {
        distance(&self.min, &self.max)
    }

    pub fn center(&self) -> MapPoint {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn contains(&self, p: &MapPoint) -> bool {
        (0..2).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }

    /// Grid node `i` of `n` along `axis`, endpoints included.
    pub fn node(&self, axis: usize, i: usize, n: usize) -> f64 {
        let t = i as f64 / (n - 1) as f64;
        self.min[axis] + t * (self.max[axis] - self.min[axis])
    }
}

/// Predicted mean goodness sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessField {
    pub bounds: MapBounds,
    pub resolution: [usize; 2],
    /// `values[ix][iy]`.
    pub values: Vec<Vec<f64>>,
    pub vmin: f64,
    pub vmax: f64,
}

impl GoodnessField {
    pub fn node(&self, ix: usize, iy: usize) -> MapPoint {
        [
            self.bounds.node(0, ix, self.resolution[0]),
            self.bounds.node(1, iy, self.resolution[1]),
        ]
    }

    /// Grid index of the largest value; the first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for (ix, col) in self.values.iter().enumerate() {
            for (iy, &v) in col.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = (ix, iy);
                }
            }
        }
        best
    }

    /// Map position of the argmax node. A constant field reports the map center.
    pub fn argmax_point(&self) -> MapPoint {
        if self.vmax <= self.vmin {
            return self.bounds.center();
        }
        let (ix, iy) = self.argmax();
        self.node(ix, iy)
    }
}

/// Evaluate the predicted mean on a grid with nodes on the bounds.
/// Without a model the field is identically zero.
pub fn compute_field(
    model: Option<&GoodnessModel>,
    bounds: MapBounds,
    resolution: [usize; 2],
) -> Result<GoodnessField, RoiError> {
    let [nx, ny] = resolution;
    if nx < 2 || ny < 2 {
        return Err(RoiError::Resolution);
    }
    let values: Vec<Vec<f64>> = (0..nx)
        .map(|ix| {
            let x = bounds.node(0, ix, nx);
            (0..ny)
                .map(|iy| {
                    let y = bounds.node(1, iy, ny);
                    model.map_or(0.0, |m| m.predict_mean(&[x, y]))
                })
                .collect()
        })
        .collect();
    let (vmin, vmax) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(GoodnessField {
        bounds,
        resolution,
        values,
        vmin,
        vmax,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: ShapeId,
    pub position: MapPoint,
    pub score: f64,
}

/// Sort candidates by predicted goodness, highest first, ties by id.
/// Without a model the input order is kept.
pub fn rank_candidates(
    model: Option<&GoodnessModel>,
    candidates: &[(ShapeId, MapPoint)],
) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = candidates
        .iter()
        .map(|(id, p)| RankedCandidate {
            id: id.clone(),
            position: *p,
            score: model.map_or(0.0, |m| m.predict_mean(p)),
        })
        .collect();
    if model.is_some() {
        ranked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.id.cmp(&b.id))
        });
    }
    ranked
}

/// Event history plus the model fit to it.
#[derive(Clone, Debug)]
pub struct RoiState {
    pub kernel: KernelParams,
    events: Vec<ChoiceEvent>,
    model: Option<GoodnessModel>,
}

impl RoiState {
    pub fn new(kernel: KernelParams) -> Self {
        RoiState {
            kernel,
            events: Vec::new(),
            model: None,
        }
    }

    pub fn events(&self) -> &[ChoiceEvent] {
        &self.events
    }

    pub fn model(&self) -> Option<&GoodnessModel> {
        self.model.as_ref()
    }

    pub fn next_sequence(&self) -> u64 {
        self.events.last().map_or(1, |e| e.sequence_no + 1)
    }

    /// Append a choice and refit, returning the new state.
    pub fn record_choice(
        &self,
        chosen: ShapeId,
        others: Vec<ShapeId>,
        positions: BTreeMap<ShapeId, MapPoint>,
    ) -> Result<RoiState, RoiError> {
        let event = ChoiceEvent::new(self.next_sequence(), chosen, others, positions)?;
        let mut events = self.events.clone();
        events.push(event);
        let model = fit_map(&events, &self.kernel)?;
        Ok(RoiState {
            kernel: self.kernel,
            events,
            model: Some(model),
        })
    }

    /// Rebuild from a persisted event log.
    pub fn replay(kernel: KernelParams, events: Vec<ChoiceEvent>) -> Result<RoiState, RoiError> {
        let model = if events.is_empty() {
            None
        } else {
            Some(fit_map(&events, &kernel)?)
        };
        Ok(RoiState {
            kernel,
            events,
            model,
        })
    }
}
