//! Synthetic-user convergence harness.
//!
//! A simulated user with a hidden goodness function over the map steers a
//! live session through generation rounds. After every round the inferred
//! field's argmax is compared to the hidden target.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use blobspace_core::blobshape::{PartGroup, Shape, ShapeId};
use blobspace_core::embedding::MapPoint;
use blobspace_core::versioning::ROUND_SIZE;
use blobspace_service::{Engine, ServiceError};

/// Width of the hidden goodness bump, as a fraction of the squared map diameter.
pub const TARGET_WIDTH: f64 = 0.05;
/// Success radius, as a fraction of the map diameter.
pub const SUCCESS_RADIUS: f64 = 0.1;
/// Carries no archetype or adjective, so the designs returned span the map clusters.
pub const START_PROMPT: &str = "chair";

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("target ({0}, {1}) lies outside the map bounds")]
    TargetOutOfBounds(f64, f64),
    #[error("options per round must be {expected}, got {got}")]
    OptionsPerRound { expected: usize, got: usize },
    #[error("noise must be positive, got {0}")]
    Noise(f64),
    #[error("session: {0}")]
    Session(#[from] ServiceError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub rounds: usize,
    pub options_per_round: usize,
    /// Fixed target; when absent each seed draws a corpus design's position.
    pub target: Option<MapPoint>,
    /// Inverse softmax temperature; `None` is the noiseless argmax user.
    pub noise: Option<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            rounds: 15,
            options_per_round: 1 + ROUND_SIZE,
            target: None,
            noise: None,
            seeds: (0..50).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub target: MapPoint,
    /// Entry `r` is measured after `r` rounds; entry 0 is the empty field.
    pub per_round_distance: Vec<f64>,
    pub final_regret: f64,
    /// Distance from the recommended design to the target.
    pub recommended_distance: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean over seeds of `per_round_distance`.
    pub mean_distance: Vec<f64>,
    pub success_rate: f64,
    pub mean_final_regret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map_diameter: f64,
    pub success_radius: f64,
    pub seeds: Vec<SeedMetrics>,
    pub aggregate: Aggregate,
}

/// The simulated user's hidden preference.
#[derive(Clone, Copy, Debug)]
pub struct HiddenGoodness {
    pub target: MapPoint,
    pub diameter: f64,
}

impl HiddenGoodness {
    pub fn at(&self, p: &MapPoint) -> f64 {
        let d2 = (p[0] - self.target[0]).powi(2) + (p[1] - self.target[1]).powi(2);
        (-d2 / (2.0 * TARGET_WIDTH * self.diameter * self.diameter)).exp()
    }
}

fn distance(a: &MapPoint, b: &MapPoint) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Index of the option the user picks: the best under `g*`, or a softmax draw.
fn pick(values: &[f64], noise: Option<f64>, rng: &mut ChaCha8Rng) -> usize {
    match noise {
        None => {
            values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        }
        Some(beta) => {
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = values.iter().map(|v| (beta * (v - max)).exp()).collect();
            WeightedIndex::new(&weights)
                .expect("weights are positive")
                .sample(rng)
        }
    }
}

/// Part groups the user can meaningfully edit on `shape`.
fn editable_groups(shape: &Shape) -> Vec<PartGroup> {
    PartGroup::ALL
        .into_iter()
        .filter(|g| g.indices().any(|i| shape.parts()[i].blend_weight > 0.0))
        .collect()
}

impl SimulationConfig {
    pub fn validate(&self, engine: &Engine) -> Result<(), SimulationError> {
        if self.options_per_round != 1 + ROUND_SIZE {
            return Err(SimulationError::OptionsPerRound {
                expected: 1 + ROUND_SIZE,
                got: self.options_per_round,
            });
        }
        if let Some(beta) = self.noise {
            if beta.is_nan() || beta <= 0.0 {
                return Err(SimulationError::Noise(beta));
            }
        }
        if let Some(t) = self.target {
            if !engine.atlas.bounds().contains(&t) {
                return Err(SimulationError::TargetOutOfBounds(t[0], t[1]));
            }
        }
        Ok(())
    }
}

/// Simulate one seed against a fresh session.
pub fn simulate_seed(
    engine: &Engine,
    config: &SimulationConfig,
    seed: u64,
) -> Result<SeedMetrics, SimulationError> {
    let atlas = &engine.atlas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = config
        .target
        .unwrap_or_else(|| atlas.positions()[rng.random_range(0..atlas.len())]);
    let hidden = HiddenGoodness {
        target,
        diameter: atlas.diameter(),
    };
    let mut session = engine.new_session(format!("sim-{seed}"));

    // the user prompts, then opens whichever returned design looks best to them;
    // opening a design is not evidence for the model
    let designs = engine.prompt(&mut session, START_PROMPT)?.designs;
    let values: Vec<f64> = designs.iter().map(|d| hidden.at(&d.position)).collect();
    let start = &designs[pick(&values, config.noise, &mut rng)];
    let mut current: ShapeId = start.shape_id.clone();
    let mut seen: Vec<(ShapeId, MapPoint)> = vec![(current.clone(), start.position)];

    let mut per_round_distance = Vec::with_capacity(config.rounds + 1);
    per_round_distance.push(distance(&session.field(engine)?.argmax_point(), &target));

    for round in 1..=config.rounds {
        let shape = session
            .resolve(engine, &current)
            .expect("current design resolves")
            .clone();
        let groups = editable_groups(&shape);
        let group = groups[rng.random_range(0..groups.len())];
        let parts: Vec<usize> = group.indices().collect();
        let round_seed = seed.wrapping_mul(1_000_003).wrapping_add(round as u64);
        let outcome = engine.generate(&mut session, &current, &parts, Some(round_seed))?;

        let mut options: Vec<(ShapeId, MapPoint)> = vec![(
            current.clone(),
            session
                .position(engine, &current)
                .expect("current design is placed"),
        )];
        options.extend(
            outcome
                .children
                .iter()
                .map(|c| (c.shape_id.clone(), c.position)),
        );
        let values: Vec<f64> = options.iter().map(|(_, p)| hidden.at(p)).collect();
        let chosen = pick(&values, config.noise, &mut rng);
        let others: Vec<ShapeId> = options
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != chosen)
            .map(|(_, o)| o.0.clone())
            .collect();
        engine.choose(&mut session, &options[chosen].0, &others)?;
        current = options[chosen].0.clone();
        seen.extend(options.into_iter().skip(1));

        let field = session.field(engine)?;
        per_round_distance.push(distance(&field.argmax_point(), &target));
    }

    // the system recommends the seen design with the highest inferred goodness
    let recommended = match session.roi().model() {
        Some(model) => {
            seen.iter()
                .map(|(_, p)| (model.predict_mean(p), *p))
                .fold((f64::NEG_INFINITY, seen[0].1), |best, x| {
                    if x.0 > best.0 {
                        x
                    } else {
                        best
                    }
                })
                .1
        }
        None => seen[0].1,
    };
    let final_regret = 1.0 - hidden.at(&recommended);
    let success =
        *per_round_distance.last().expect("at least one entry") <= SUCCESS_RADIUS * hidden.diameter;
    Ok(SeedMetrics {
        seed,
        target,
        per_round_distance,
        final_regret,
        recommended_distance: distance(&recommended, &target),
        success,
    })
}

/// Simulate every seed (in parallel) and aggregate.
pub fn simulate(engine: &Engine, config: &SimulationConfig) -> Result<Metrics, SimulationError> {
    config.validate(engine)?;
    let seeds: Vec<SeedMetrics> = config
        .seeds
        .par_iter()
        .map(|&s| simulate_seed(engine, config, s))
        .collect::<Result<_, _>>()?;
    let n = seeds.len().max(1) as f64;
    let mean_distance = (0..=config.rounds)
        .map(|r| seeds.iter().map(|s| s.per_round_distance[r]).sum::<f64>() / n)
        .collect();
    let aggregate = Aggregate {
        mean_distance,
        success_rate: seeds.iter().filter(|s| s.success).count() as f64 / n,
        mean_final_regret: seeds.iter().map(|s| s.final_regret).sum::<f64>() / n,
    };
    Ok(Metrics {
        map_diameter: engine.atlas.diameter(),
        success_radius: SUCCESS_RADIUS * engine.atlas.diameter(),
        seeds,
        aggregate,
    })
}

/// Line plot of the mean argmax-to-target distance per round, with the
/// success radius drawn as a dashed line.
pub fn convergence_svg(metrics: &Metrics) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let series = &metrics.aggregate.mean_distance;
    let y_max = series
        .iter()
        .copied()
        .chain([metrics.success_radius])
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.1;
    let x_of = |r: usize| PAD + (W - 2.0 * PAD) * r as f64 / (series.len().max(2) - 1) as f64;
    let y_of = |d: f64| H - PAD - (H - 2.0 * PAD) * d / y_max;
    let points: Vec<String> = series
        .iter()
        .enumerate()
        .map(|(r, &d)| format!("{:.2},{:.2}", x_of(r), y_of(d)))
        .collect();
    let radius = y_of(metrics.success_radius);
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="100%" height="100%" fill="white"/>
<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>
<line x1="{PAD}" y1="{radius:.2}" x2="{r}" y2="{radius:.2}" stroke="#c33" stroke-dasharray="4 3"/>
<polyline fill="none" stroke="#236" stroke-width="2" points="{pts}"/>
<text x="{cx}" y="{tb}" text-anchor="middle" font-size="12">round</text>
<text x="12" y="{cy}" font-size="12" transform="rotate(-90 12 {cy})" text-anchor="middle">mean argmax distance</text>
<text x="{r}" y="{rl:.2}" text-anchor="end" font-size="11" fill="#c33">success radius</text>
</svg>
"##,
        b = H - PAD,
        r = W - PAD,
        pts = points.join(" "),
        cx = W / 2.0,
        tb = H - 8.0,
        cy = H / 2.0,
        rl = radius - 4.0,
    )
}
