//! Latent providers: the offline mock and a remote HTTP endpoint.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rules::{apply_adjective, Adjective};
use super::GenError;
use crate::blobshape::{Provenance, Shape, ShapeId, LATENT_DIM};

pub const DEFAULT_COUNT: usize = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(20);
/// Base magnitudes cycled across mock variants.
pub const MOCK_MAGNITUDES: [f64; 3] = [0.4, 0.7, 1.0];
const MOCK_JITTER: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub base: Vec<f64>,
    pub selected_parts: Vec<usize>,
    pub adjectives: Vec<String>,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLatent {
    /// Non-finite entries travel as JSON `null`.
    #[serde(deserialize_with = "lenient_floats")]
    pub vector: Vec<f64>,
    pub adjective: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub results: Vec<GeneratedLatent>,
}

fn lenient_floats<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let raw: Vec<Option<f64>> = Deserialize::deserialize(d)?;
    Ok(raw.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

pub trait LatentProvider: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GenError>;
}

/// Deterministic stand-in that edits the base with the rule table.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockProvider;

impl LatentProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GenError> {
        mock_provider(request)
    }
}

/// Variant `i` applies adjective `i` at magnitude `MOCK_MAGNITUDES[i mod 3]`
/// (seed-jittered), then adjective `i + 3` at half that magnitude when the
/// request carries more than three adjectives.
pub fn mock_provider(request: &GenerationRequest) -> Result<GenerationResponse, GenError> {
    let adjectives = request
        .adjectives
        .iter()
        .map(|s| s.parse::<Adjective>())
        .collect::<Result<Vec<_>, _>>()?;
    if adjectives.is_empty() {
        return Err(GenError::NoAdjectives);
    }
    let base = Shape::unflatten(&request.base, ShapeId::new("base"), Provenance::LlmEdit)?;
    let n = adjectives.len();
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let mut results: Vec<GeneratedLatent> = Vec::with_capacity(request.count);
    for i in 0..request.count {
        let magnitude = MOCK_MAGNITUDES[i % MOCK_MAGNITUDES.len()]
            * (1.0 + rng.random_range(-MOCK_JITTER..MOCK_JITTER));
        let primary = adjectives[i % n];
        let mut shape = apply_adjective(&base, &request.selected_parts, primary, magnitude)?;
        let mut label = primary.name().to_string();
        if n > 3 {
            let secondary = adjectives[(i + 3) % n];
            if secondary != primary {
                shape =
                    apply_adjective(&shape, &request.selected_parts, secondary, 0.5 * magnitude)?;
                label = format!("{label}+{secondary}");
            }
        }
        let mut vector = shape.flatten();
        // keep variants distinct from the base and from each other
        let mut nudge = 0;
        while vector == request.base || results.iter().any(|r| r.vector == vector) {
            nudge += 1;
            let lift = if nudge % 2 == 1 {
                Adjective::High
            } else {
                Adjective::Low
            };
            shape = apply_adjective(&shape, &request.selected_parts, lift, 0.05 * nudge as f64)?;
            vector = shape.flatten();
            if nudge > 8 {
                break;
            }
        }
        results.push(GeneratedLatent {
            vector,
            adjective: label,
        });
    }
    Ok(GenerationResponse { results })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

/// Blocking JSON-over-HTTP provider.
#[derive(Clone, Debug)]
pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        RemoteProvider { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }
}

impl LatentProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GenError> {
        remote_provider(&self.agent, &self.config, request)
    }
}

/// POST the request and validate the response envelope. Entry contents are
/// checked later by the caller, which backfills bad entries.
pub fn remote_provider(
    agent: &ureq::Agent,
    config: &RemoteConfig,
    request: &GenerationRequest,
) -> Result<GenerationResponse, GenError> {
    let mut call = agent.post(&config.endpoint);
    if let Some(key) = &config.api_key {
        call = call.header("Authorization", format!("Bearer {key}"));
    }
    let mut response = call
        .send_json(request)
        .map_err(|e| GenError::Provider(e.to_string()))?;
    let body: GenerationResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| GenError::Protocol(e.to_string()))?;
    if body.results.len() != request.count {
        return Err(GenError::Protocol(format!(
            "expected {} results, got {}",
            request.count,
            body.results.len()
        )));
    }
    Ok(body)
}

/// Whether a returned latent can become a valid shape.
pub fn usable_vector(vector: &[f64]) -> bool {
    vector.len() == LATENT_DIM
        && vector.iter().all(|v| v.is_finite())
        && Shape::unflatten(vector, ShapeId::new("probe"), Provenance::LlmEdit).is_ok()
}
