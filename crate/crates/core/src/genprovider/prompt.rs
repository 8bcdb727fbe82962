//! Prompt-to-design retrieval over the corpus.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rules::{Features, FEATURE_DIM};
use super::suggest::{latent_features, prompt_adjectives, prompt_archetypes};
use super::GenError;
use crate::blobshape::procedural::{generate_procedural_chair, Archetype};
use crate::blobshape::{PartGroup, Shape};
use crate::embedding::cluster_map;
use crate::embedding::MapPoint;

pub const DEFAULT_PROMPT_COUNT: usize = 5;
const DESCRIPTOR_DIM: usize = FEATURE_DIM + 1;
const PROTOTYPE_SAMPLES: u64 = 24;

type Descriptor = [f64; DESCRIPTOR_DIM];

/// Standardized latent features plus backrest weight mass.
fn descriptor(shape: &Shape) -> Descriptor {
    let f = latent_features(shape);
    let back: f64 = PartGroup::Back
        .indices()
        .map(|i| shape.parts()[i].blend_weight)
        .sum();
    let mut d = [0.0; DESCRIPTOR_DIM];
    d[..FEATURE_DIM].copy_from_slice(&f);
    d[FEATURE_DIM] = back;
    d
}

fn prototypes() -> &'static [Descriptor; 5] {
    static CELL: OnceLock<[Descriptor; 5]> = OnceLock::new();
    CELL.get_or_init(|| {
        Archetype::ALL.map(|a| {
            let mut mean = [0.0; DESCRIPTOR_DIM];
            for seed in 0..PROTOTYPE_SAMPLES {
                let d = descriptor(&generate_procedural_chair(a, 1_000_000 + seed));
                for k in 0..DESCRIPTOR_DIM {
                    mean[k] += d[k] / PROTOTYPE_SAMPLES as f64;
                }
            }
            mean
        })
    })
}

fn distance(a: &Descriptor, b: &Descriptor) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn cosine(a: &Features, b: &Features) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        0.0
    } else {
        dot / n
    }
}

/// Corpus indices of the designs that best match `prompt`.
///
/// Named archetypes score by descriptor distance to the archetype prototype,
/// named adjectives by feature alignment. A prompt with neither yields one
/// seeded pick from each of `count` map clusters.
pub fn prompt_to_designs(
    prompt: &str,
    corpus: &[Shape],
    positions: &[MapPoint],
    count: usize,
    seed: u64,
) -> Result<Vec<usize>, GenError> {
    if corpus.len() != positions.len() {
        return Err(GenError::Corpus(format!(
            "{} shapes but {} positions",
            corpus.len(),
            positions.len()
        )));
    }
    if count == 0 || count > corpus.len() {
        return Err(GenError::Corpus(format!(
            "cannot pick {count} designs from {}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let archetypes = prompt_archetypes(prompt);
    let adjectives = prompt_adjectives(prompt);

    if archetypes.is_empty() && adjectives.is_empty() {
        let clusters =
            cluster_map(positions, count, seed).map_err(|e| GenError::Corpus(e.to_string()))?;
        let mut picks = Vec::with_capacity(count);
        for c in 0..count {
            let members: Vec<usize> = (0..corpus.len())
                .filter(|&i| clusters.labels[i] == c)
                .collect();
            if members.is_empty() {
                continue;
            }
            picks.push(members[rng.random_range(0..members.len())]);
        }
        return Ok(picks);
    }

    let mut direction = [0.0; FEATURE_DIM];
    for a in &adjectives {
        for (d, f) in direction.iter_mut().zip(a.features()) {
            *d += f;
        }
    }
    let protos = prototypes();
    let mut scored: Vec<(f64, u64, usize)> = corpus
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let d = descriptor(shape);
            let mut score = 0.0;
            for a in &archetypes {
                score -= distance(&d, &protos[*a as usize]);
            }
            if !adjectives.is_empty() {
                let f: Features = d[..FEATURE_DIM].try_into().unwrap();
                score += cosine(&direction, &f);
            }
            (score, rng.random::<u64>(), i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(count).map(|s| s.2).collect())
}
