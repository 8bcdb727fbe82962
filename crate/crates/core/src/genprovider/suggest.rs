//! Aligned and diversified adjective suggestions from session history.

use serde::{Deserialize, Serialize};

use super::rules::{Adjective, Features, FEATURE_DIM};
use crate::blobshape::procedural::Archetype;
use crate::blobshape::{PartGroup, Shape};

pub const SUGGESTIONS_PER_SIDE: usize = 3;
/// Aligned and diversified counts used when extracting adjectives for generation.
pub const GENERATION_ALIGNED: usize = 3;
pub const GENERATION_DIVERSIFIED: usize = 2;

/// Corpus mean and spread of [`raw_latent_features`], used for normalization.
const LATENT_MEAN: Features = [-0.167, 0.280, 1.100, -3.173, -0.118, -5.757];
const LATENT_SPREAD: Features = [0.193, 0.145, 1.357, 0.607, 0.084, 1.036];
const ROI_WEIGHT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionSet {
    pub aligned: Vec<Adjective>,
    pub diversified: Vec<Adjective>,
}

impl SuggestionSet {
    pub fn default_set() -> Self {
        let all = Adjective::ALL;
        SuggestionSet {
            aligned: all[..SUGGESTIONS_PER_SIDE].to_vec(),
            diversified: all[all.len() - SUGGESTIONS_PER_SIDE..].to_vec(),
        }
    }
}

/// What the session has seen so far.
#[derive(Clone, Copy, Debug, Default)]
pub struct SessionHistory<'a> {
    pub prompts: &'a [String],
    pub used_adjectives: &'a [Adjective],
    pub roi_shapes: &'a [Shape],
}

/// Lowercase word tokens; hyphens are kept inside words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Adjectives named in a prompt, directly or through a synonym.
pub fn prompt_adjectives(prompt: &str) -> Vec<Adjective> {
    let tokens = tokenize(prompt);
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        let hit = match t.as_str() {
            "tilt" if tokens.get(i + 1).map(String::as_str) == Some("forward") => {
                Some(Adjective::TiltForward)
            }
            "tall" => Some(Adjective::High),
            "short" => Some(Adjective::Low),
            "slim" | "narrow" | "slender" => Some(Adjective::Thin),
            "broad" | "spacious" => Some(Adjective::Wide),
            "soft" | "rounded" | "cozy" => Some(Adjective::Round),
            "sharp" | "boxy" => Some(Adjective::Angular),
            "reclined" | "reclining" | "lounge" => Some(Adjective::Incline),
            "bulky" | "plush" | "chunky" => Some(Adjective::Voluminous),
            "minimal" | "minimalist" | "modern" => Some(Adjective::Sleek),
            "flowing" | "wavy" => Some(Adjective::Fluid),
            "natural" => Some(Adjective::Organic),
            other => other.parse().ok(),
        };
        if let Some(a) = hit {
            out.push(a);
        }
    }
    out
}

/// Archetypes named in a prompt.
pub fn prompt_archetypes(prompt: &str) -> Vec<Archetype> {
    tokenize(prompt)
        .iter()
        .filter_map(|t| match t.as_str() {
            "armchair" | "armchairs" | "recliner" => Some(Archetype::Armchair),
            "dining" | "side" => Some(Archetype::Dining),
            "stool" | "stools" => Some(Archetype::Stool),
            "sofa" | "sofas" | "couch" | "loveseat" => Some(Archetype::Sofa),
            "bar" | "counter" => Some(Archetype::Bar),
            _ => None,
        })
        .collect()
}

fn archetype_features(a: Archetype) -> Features {
    match a {
        Archetype::Armchair => [0.0, 0.4, -0.3, 0.2, -0.2, 0.5],
        Archetype::Dining => [0.2, -0.2, 0.0, -0.2, 0.2, -0.3],
        Archetype::Stool => [0.2, -0.3, 0.5, 0.0, 0.0, -0.6],
        Archetype::Sofa => [-0.3, 1.0, 0.3, 0.3, -0.2, 1.0],
        Archetype::Bar => [1.0, -0.3, 0.0, 0.0, 0.0, -0.4],
    }
}

/// Unnormalized latent statistics: weighted mean height, weighted mean
/// lateral offset, arm-group weight mass, negative mean log anisotropy,
/// backrest lean and log total blob volume.
pub fn raw_latent_features(shape: &Shape) -> Features {
    let parts = shape.parts();
    let total_w: f64 = parts.iter().map(|p| p.blend_weight).sum::<f64>().max(1e-12);
    let wmean = |f: &dyn Fn(&crate::blobshape::PartLatent) -> f64| {
        parts.iter().map(|p| p.blend_weight * f(p)).sum::<f64>() / total_w
    };
    let height = wmean(&|p| p.center.y);
    let width = wmean(&|p| p.center.x.abs());
    let arm_mass: f64 = PartGroup::Arms
        .indices()
        .map(|i| parts[i].blend_weight)
        .sum();
    let roundness = -wmean(&|p| (p.eigenvalues.max() / p.eigenvalues.min()).ln());
    let (mut lean, mut lean_w) = (0.0, 0.0);
    for i in PartGroup::Back.indices() {
        let p = &parts[i];
        if p.blend_weight <= 0.0 {
            continue;
        }
        let up = (0..3)
            .max_by(|&a, &b| {
                p.eigenvectors[(1, a)]
                    .abs()
                    .partial_cmp(&p.eigenvectors[(1, b)].abs())
                    .unwrap()
            })
            .unwrap();
        let axis = p.eigenvectors.column(up);
        lean += p.blend_weight * axis[2] * axis[1].signum();
        lean_w += p.blend_weight;
    }
    let tilt = if lean_w > 0.0 { lean / lean_w } else { 0.0 };
    let volume: f64 = parts
        .iter()
        .map(|p| p.blend_weight * p.eigenvalues.iter().product::<f64>().sqrt())
        .sum();
    [
        height,
        width,
        arm_mass,
        roundness,
        tilt,
        volume.max(1e-12).ln(),
    ]
}

/// [`raw_latent_features`] standardized by corpus statistics.
pub fn latent_features(shape: &Shape) -> Features {
    let raw = raw_latent_features(shape);
    std::array::from_fn(|k| (raw[k] - LATENT_MEAN[k]) / LATENT_SPREAD[k])
}

fn add_scaled(acc: &mut Features, v: &Features, s: f64) {
    for k in 0..FEATURE_DIM {
        acc[k] += s * v[k];
    }
}

/// Session direction in feature space; zero when the history carries no signal.
pub fn session_vector(history: &SessionHistory) -> Features {
    let mut v = [0.0; FEATURE_DIM];
    if !history.used_adjectives.is_empty() {
        let s = 1.0 / history.used_adjectives.len() as f64;
        for a in history.used_adjectives {
            add_scaled(&mut v, &a.features(), s);
        }
    }
    let mut keyword: Vec<Features> = Vec::new();
    for prompt in history.prompts {
        keyword.extend(
            prompt_adjectives(prompt)
                .into_iter()
                .map(Adjective::features),
        );
        keyword.extend(
            prompt_archetypes(prompt)
                .into_iter()
                .map(archetype_features),
        );
    }
    if !keyword.is_empty() {
        let s = 1.0 / keyword.len() as f64;
        for f in &keyword {
            add_scaled(&mut v, f, s);
        }
    }
    if !history.roi_shapes.is_empty() {
        let s = ROI_WEIGHT / history.roi_shapes.len() as f64;
        for shape in history.roi_shapes {
            let f = latent_features(shape).map(|x| x.clamp(-2.0, 2.0) / 2.0);
            add_scaled(&mut v, &f, s);
        }
    }
    v
}

fn cosine(a: &Features, b: &Features) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Candidates ordered by descending similarity to `v`, canonical order on ties.
/// Used adjectives are skipped while at least six others remain.
fn ranked(v: &Features, used: &[Adjective]) -> Vec<Adjective> {
    let fresh: Vec<Adjective> = Adjective::ALL
        .into_iter()
        .filter(|a| !used.contains(a))
        .collect();
    let mut pool = if fresh.len() >= 2 * SUGGESTIONS_PER_SIDE {
        fresh
    } else {
        Adjective::ALL.to_vec()
    };
    pool.sort_by(|a, b| {
        cosine(v, &b.features())
            .partial_cmp(&cosine(v, &a.features()))
            .unwrap()
            .then(a.index().cmp(&b.index()))
    });
    pool
}

fn split(
    history: &SessionHistory,
    aligned: usize,
    diversified: usize,
) -> (Vec<Adjective>, Vec<Adjective>) {
    let v = session_vector(history);
    if v.iter().all(|x| x.abs() < 1e-12) {
        let d = SuggestionSet::default_set();
        return (
            d.aligned[..aligned].to_vec(),
            d.diversified[..diversified].to_vec(),
        );
    }
    let order = ranked(&v, history.used_adjectives);
    let top = order[..aligned].to_vec();
    // least similar first
    let bottom = order.iter().rev().take(diversified).copied().collect();
    (top, bottom)
}

/// Three aligned and three diversified adjectives for the input box.
pub fn suggest_adjectives(history: &SessionHistory) -> SuggestionSet {
    let (aligned, diversified) = split(history, SUGGESTIONS_PER_SIDE, SUGGESTIONS_PER_SIDE);
    SuggestionSet {
        aligned,
        diversified,
    }
}

/// Five adjectives for a generation round: three aligned, then two diversified.
pub fn generation_adjectives(history: &SessionHistory) -> Vec<Adjective> {
    let (mut aligned, diversified) = split(history, GENERATION_ALIGNED, GENERATION_DIVERSIFIED);
    aligned.extend(diversified);
    aligned
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobshape::procedural::generate_procedural_chair;
    use proptest::prelude::*;

    #[test]
    fn empty_history_gives_default() {
        let set = suggest_adjectives(&SessionHistory::default());
        assert_eq!(
            set.aligned,
            vec![Adjective::Open, Adjective::Wide, Adjective::Thin]
        );
        assert_eq!(
            set.diversified,
            vec![Adjective::Fluid, Adjective::Faceted, Adjective::Organic]
        );
        let gen = generation_adjectives(&SessionHistory::default());
        assert_eq!(gen.len(), 5);
    }

    #[test]
    fn wide_history_excludes_wide_and_ranks_neighbors() {
        let used = vec![Adjective::Wide; 4];
        let history = SessionHistory {
            used_adjectives: &used,
            ..Default::default()
        };
        let set = suggest_adjectives(&history);
        assert!(!set.aligned.contains(&Adjective::Wide));
        assert!(!set.diversified.contains(&Adjective::Wide));
        // oracle: brute-force cosine against the wide feature vector
        let w = Adjective::Wide.features();
        let cos = |a: Adjective| {
            let f = a.features();
            let d: f64 = (0..6).map(|k| f[k] * w[k]).sum();
            d / ((0..6).map(|k| f[k] * f[k]).sum::<f64>().sqrt()
                * (0..6).map(|k| w[k] * w[k]).sum::<f64>().sqrt())
        };
        let mut scored: Vec<(f64, usize, Adjective)> = Adjective::ALL
            .into_iter()
            .filter(|&a| a != Adjective::Wide)
            .map(|a| (-cos(a), a.index(), a))
            .collect();
        scored.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let want: Vec<Adjective> = scored.iter().take(3).map(|s| s.2).collect();
        assert_eq!(set.aligned, want);
        let want_div: Vec<Adjective> = scored.iter().rev().take(3).map(|s| s.2).collect();
        assert_eq!(set.diversified, want_div);
        assert!(set.diversified.contains(&Adjective::Thin));
    }

    #[test]
    fn prompt_keywords_steer_suggestions() {
        let prompts = vec!["a tall and slim bar stool".to_string()];
        assert_eq!(
            prompt_adjectives(&prompts[0]),
            vec![Adjective::High, Adjective::Thin]
        );
        assert_eq!(
            prompt_archetypes(&prompts[0]),
            vec![Archetype::Bar, Archetype::Stool]
        );
        let set = suggest_adjectives(&SessionHistory {
            prompts: &prompts,
            ..Default::default()
        });
        assert_ne!(set, SuggestionSet::default_set());
        assert_eq!(
            prompt_adjectives("please tilt forward"),
            vec![Adjective::TiltForward]
        );
    }

    #[test]
    fn corpus_features_are_roughly_standardized() {
        let shapes: Vec<Shape> = (0..200)
            .map(|i| generate_procedural_chair(Archetype::ALL[i % 5], i as u64))
            .collect();
        for k in 0..FEATURE_DIM {
            let vals: Vec<f64> = shapes.iter().map(|s| latent_features(s)[k]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(mean.abs() < 0.75, "feature {k} mean {mean}");
            assert!(sd > 0.3 && sd < 3.0, "feature {k} sd {sd}");
        }
    }

    proptest! {
        #[test]
        fn sets_are_disjoint_and_sized(
            used in prop::collection::vec(0usize..16, 0..20),
            words in prop::collection::vec(0usize..16, 0..4),
            shapes in prop::collection::vec((0usize..5, 0u64..30), 0..3)
        ) {
            let used: Vec<Adjective> = used.into_iter().map(|i| Adjective::ALL[i]).collect();
            let prompts: Vec<String> = words.into_iter().map(|i| Adjective::ALL[i].name().to_string()).collect();
            let roi: Vec<Shape> = shapes.into_iter().map(|(a, s)| generate_procedural_chair(Archetype::ALL[a], s)).collect();
            let history = SessionHistory { prompts: &prompts, used_adjectives: &used, roi_shapes: &roi };
            let set = suggest_adjectives(&history);
            prop_assert_eq!(set.aligned.len(), 3);
            prop_assert_eq!(set.diversified.len(), 3);
            prop_assert!(set.aligned.iter().all(|a| !set.diversified.contains(a)));
            prop_assert_eq!(set.clone(), suggest_adjectives(&history));
        }
    }
}
