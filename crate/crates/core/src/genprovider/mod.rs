//! Text-conditional design generation.

pub mod prompt;
pub mod provider;
pub mod rules;
pub mod suggest;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blobshape::{Provenance, Shape, ShapeError, ShapeId};
pub use prompt::prompt_to_designs;
pub use provider::{
    mock_provider, GeneratedLatent, GenerationRequest, GenerationResponse, LatentProvider,
    MockProvider, RemoteConfig, RemoteProvider,
};
pub use rules::{apply_adjective, Adjective};
pub use suggest::{generation_adjectives, suggest_adjectives, SessionHistory, SuggestionSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("unknown adjective `{0}`")]
    UnknownAdjective(String),
    #[error("at least one part must be selected")]
    NoParts,
    #[error("part index {0} out of range")]
    PartIndex(usize),
    #[error("part {0} selected twice")]
    DuplicatePart(usize),
    #[error("magnitude {0} outside [0, 2]")]
    Magnitude(f64),
    #[error("request carries no adjectives")]
    NoAdjectives,
    #[error("shape error: {0}")]
    Shape(#[from] ShapeError),
    #[error("provider failed: {0}")]
    Provider(String),
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("corpus error: {0}")]
    Corpus(String),
}

/// Inputs of one generation round.
#[derive(Clone, Copy, Debug)]
pub struct RoundInput<'a> {
    pub parent: &'a Shape,
    pub selected_parts: &'a [usize],
    pub history: SessionHistory<'a>,
    /// Session-wide round counter; part of the child ids.
    pub round: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub children: Vec<Shape>,
    pub adjectives: Vec<Adjective>,
    pub provider: String,
    /// Why the mock replaced some or all provider output.
    pub fallback: Option<String>,
}

/// Deterministic child id for variant `index` of a round.
pub fn child_id(parent: &ShapeId, round: u32, seed: u64, index: usize) -> ShapeId {
    let mut h = Sha256::new();
    h.update(parent.as_str().as_bytes());
    h.update([0]);
    h.update(round.to_le_bytes());
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    ShapeId::new(format!("llm-{hex}"))
}

/// Run one generation round: extract five adjectives, ask the provider for
/// three variants, fall back to the mock on failure, and build the children.
pub fn generate_alternatives(
    input: RoundInput,
    provider: &dyn LatentProvider,
) -> Result<Generation, GenError> {
    rules::validate_parts(input.selected_parts)?;
    let adjectives = generation_adjectives(&input.history);
    let request = GenerationRequest {
        base: input.parent.flatten(),
        selected_parts: input.selected_parts.to_vec(),
        adjectives: adjectives.iter().map(|a| a.name().to_string()).collect(),
        count: provider::DEFAULT_COUNT,
        seed: input.seed,
    };

    let mut fallback = None;
    let results = match provider.generate(&request) {
        Ok(response) => {
            let mut backup: Option<GenerationResponse> = None;
            let mut results = Vec::with_capacity(request.count);
            for (i, entry) in response.results.into_iter().enumerate() {
                if provider::usable_vector(&entry.vector) {
                    results.push(entry);
                } else {
                    if backup.is_none() {
                        backup = Some(mock_provider(&request)?);
                    }
                    fallback = Some(format!("result {i} invalid; replaced by mock"));
                    results.push(backup.as_ref().unwrap().results[i].clone());
                }
            }
            results
        }
        Err(e) => {
            log::warn!("{} provider failed, using mock: {e}", provider.name());
            fallback = Some(e.to_string());
            mock_provider(&request)?.results
        }
    };

    let mut children = Vec::with_capacity(results.len());
    for (i, entry) in results.into_iter().enumerate() {
        let id = child_id(&input.parent.id, input.round, input.seed, i);
        let mut shape = Shape::unflatten(&entry.vector, id, Provenance::LlmEdit)?;
        // edits are part-level: everything unselected stays exactly the parent's
        for p in 0..input.parent.parts().len() {
            if !input.selected_parts.contains(&p) {
                shape.set_part(p, input.parent.parts()[p].clone())?;
            }
        }
        children.push(
            shape
                .with_parent(input.parent.id.clone())
                .with_label(entry.adjective),
        );
    }
    Ok(Generation {
        children,
        adjectives,
        provider: provider.name().to_string(),
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobshape::procedural::{generate_procedural_chair, Archetype};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::time::{Duration, Instant};

    fn parent() -> Shape {
        generate_procedural_chair(Archetype::Armchair, 11)
    }

    fn input(p: &Shape) -> RoundInput<'_> {
        RoundInput {
            parent: p,
            selected_parts: &[8, 9, 10, 11],
            history: SessionHistory::default(),
            round: 1,
            seed: 42,
        }
    }

    /// One-shot HTTP server answering the first request with `reply(request_body)`.
    fn stub<F>(reply: F) -> (String, std::thread::JoinHandle<String>)
    where
        F: FnOnce(&GenerationRequest) -> Option<String> + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let request: GenerationRequest = serde_json::from_slice(&body).unwrap();
            match reply(&request) {
                Some(json) => {
                    let resp = format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{json}",
                        json.len()
                    );
                    stream.write_all(resp.as_bytes()).unwrap();
                }
                None => std::thread::sleep(Duration::from_secs(3)),
            }
            auth
        });
        (url, handle)
    }

    fn remote(url: String, timeout: f64) -> RemoteProvider {
        RemoteProvider::new(RemoteConfig {
            endpoint: url,
            api_key: Some("k3y".into()),
            timeout_secs: timeout,
        })
    }

    #[test]
    fn mock_round_is_deterministic_and_part_local() {
        let p = parent();
        let a = generate_alternatives(input(&p), &MockProvider).unwrap();
        let b = generate_alternatives(input(&p), &MockProvider).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.children.len(), 3);
        assert_eq!(a.adjectives.len(), 5);
        assert!(a.fallback.is_none());
        for child in &a.children {
            assert_eq!(child.provenance, Provenance::LlmEdit);
            assert_eq!(child.parent_id.as_ref(), Some(&p.id));
            assert!(child.validate().is_ok());
            for i in 0..16 {
                if !(8..12).contains(&i) {
                    assert_eq!(child.parts()[i], p.parts()[i]);
                }
            }
            assert_ne!(child.flatten(), p.flatten());
        }
        let ids: std::collections::BTreeSet<_> = a.children.iter().map(|c| &c.id).collect();
        assert_eq!(ids.len(), 3);
        assert_ne!(a.children[0].flatten(), a.children[1].flatten());
    }

    #[test]
    fn child_ids_depend_on_round() {
        let p = parent();
        let mut later = input(&p);
        later.round = 2;
        let a = generate_alternatives(input(&p), &MockProvider).unwrap();
        let b = generate_alternatives(later, &MockProvider).unwrap();
        assert_ne!(a.children[0].id, b.children[0].id);
    }

    #[test]
    fn empty_selection_rejected() {
        let p = parent();
        let mut bad = input(&p);
        bad.selected_parts = &[];
        assert_eq!(
            generate_alternatives(bad, &MockProvider).unwrap_err(),
            GenError::NoParts
        );
    }

    #[test]
    fn echo_stub_matches_mock() {
        let (url, server) =
            stub(|req| Some(serde_json::to_string(&mock_provider(req).unwrap()).unwrap()));
        let p = parent();
        let via_remote = generate_alternatives(input(&p), &remote(url, 5.0)).unwrap();
        let via_mock = generate_alternatives(input(&p), &MockProvider).unwrap();
        assert_eq!(via_remote.children, via_mock.children);
        assert!(via_remote.fallback.is_none());
        assert_eq!(
            server.join().unwrap().to_ascii_lowercase(),
            "authorization: bearer k3y"
        );
    }

    #[test]
    fn short_response_falls_back_to_mock() {
        let (url, _server) = stub(|req| {
            let mut resp = mock_provider(req).unwrap();
            resp.results.truncate(2);
            Some(serde_json::to_string(&resp).unwrap())
        });
        let p = parent();
        let out = generate_alternatives(input(&p), &remote(url, 5.0)).unwrap();
        assert_eq!(out.children.len(), 3);
        assert!(out.fallback.unwrap().contains("expected 3 results"));
        let mock = generate_alternatives(input(&p), &MockProvider).unwrap();
        assert_eq!(out.children, mock.children);
    }

    #[test]
    fn nan_entry_is_backfilled() {
        let (url, _server) = stub(|req| {
            let mut resp = mock_provider(req).unwrap();
            resp.results[1].vector[40] = f64::NAN;
            Some(serde_json::to_string(&resp).unwrap())
        });
        let p = parent();
        let out = generate_alternatives(input(&p), &remote(url, 5.0)).unwrap();
        let mock = generate_alternatives(input(&p), &MockProvider).unwrap();
        assert_eq!(out.children.len(), 3);
        assert!(out.fallback.is_some());
        assert_eq!(out.children[1], mock.children[1]);
    }

    #[test]
    fn silent_endpoint_times_out_within_budget() {
        let (url, _server) = stub(|_| None);
        let start = Instant::now();
        let p = parent();
        let out = generate_alternatives(input(&p), &remote(url, 0.5)).unwrap();
        assert!(start.elapsed() < Duration::from_secs(2));
        assert!(out.fallback.is_some());
        assert_eq!(out.children.len(), 3);
    }

    #[test]
    fn unreachable_endpoint_falls_back() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/x", listener.local_addr().unwrap());
        drop(listener);
        let p = parent();
        let out = generate_alternatives(input(&p), &remote(url, 1.0)).unwrap();
        assert_eq!(out.children.len(), 3);
        assert!(out.fallback.is_some());
    }
}
