use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use blobspace_core::atlas::{Atlas, AtlasConfig};
use blobspace_core::blobshape::{parse_obj, Shape};
use blobspace_core::embedding::EmbeddingParams;
use blobspace_core::genprovider::MockProvider;
use blobspace_service::config::MeshConfig;
use blobspace_service::{router, AppState, Engine};

const CORPUS: usize = 150;

fn atlas() -> Arc<Atlas> {
    static ATLAS: OnceLock<Arc<Atlas>> = OnceLock::new();
    ATLAS
        .get_or_init(|| {
            let config = AtlasConfig {
                corpus_size: CORPUS,
                embedding: EmbeddingParams {
                    n_neighbors: 10,
                    n_epochs: 60,
                    ..EmbeddingParams::default()
                },
                representatives: 100,
                clusters: 4,
                ..AtlasConfig::default()
            };
            Arc::new(Atlas::generate(&config).unwrap())
        })
        .clone()
}

fn state_with(data_dir: Option<std::path::PathBuf>) -> AppState {
    let engine = Engine {
        atlas: atlas(),
        provider: Arc::new(MockProvider),
        field_resolution: [100, 100],
    };
    AppState::new(engine, MeshConfig::default(), data_dir)
}

struct Client {
    app: Router,
    state: AppState,
}

impl Client {
    fn new() -> Self {
        Self::with_state(state_with(None))
    }

    fn with_state(state: AppState) -> Self {
        Client {
            app: router(state.clone(), &[]),
            state,
        }
    }

    async fn raw(&self, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, Body::from))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        (status, bytes)
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self
            .raw(method, uri, body.map(|b| serde_json::to_vec(&b).unwrap()))
            .await;
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }

    async fn ok(&self, method: &str, uri: &str, body: Option<Value>) -> Value {
        let (status, value) = self.call(method, uri, body).await;
        assert_eq!(status, StatusCode::OK, "{method} {uri}: {value}");
        value
    }

    async fn session(&self) -> String {
        self.ok("POST", "/sessions", None).await["session_id"]
            .as_str()
            .unwrap()
            .to_string()
    }

    async fn digest(&self, sid: &str) -> String {
        self.state
            .session(sid)
            .await
            .unwrap()
            .read()
            .await
            .state_digest()
    }

    /// Prompt, then run `rounds` generation rounds down one lineage, choosing the top-ranked child.
    async fn lineage(&self, sid: &str, rounds: usize) -> Vec<Value> {
        let designs = self
            .ok(
                "POST",
                &format!("/sessions/{sid}/prompt"),
                Some(json!({"text": "armchair"})),
            )
            .await["designs"]
            .clone();
        let mut current = designs[0]["shape_id"].as_str().unwrap().to_string();
        let mut outs = Vec::new();
        for r in 0..rounds {
            let out = self
                .ok(
                    "POST",
                    &format!("/sessions/{sid}/generate"),
                    Some(json!({"shape_id": current, "selected_parts": [8, 9, 10, 11], "seed": r})),
                )
                .await;
            let ids: Vec<String> = out["children"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c["shape_id"].as_str().unwrap().to_string())
                .collect();
            let mut others = vec![current.clone()];
            others.extend(ids[1..].iter().cloned());
            self.ok(
                "POST",
                &format!("/sessions/{sid}/choose"),
                Some(json!({"chosen_shape_id": ids[0], "other_shape_ids": others})),
            )
            .await;
            current = ids[0].clone();
            outs.push(out);
        }
        outs
    }
}

fn dist(a: &Value, b: [f64; 2]) -> f64 {
    let a = [a[0].as_f64().unwrap(), a[1].as_f64().unwrap()];
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[tokio::test]
async fn sessions_start_empty_and_distinct() {
    let c = Client::new();
    let a = c.session().await;
    let b = c.session().await;
    assert_ne!(a, b);
    let tree = c.ok("GET", &format!("/sessions/{a}/tree"), None).await;
    assert_eq!(tree["roots"], json!([]));
    assert_eq!(tree["layout"], json!([]));
    let (status, log) = c.raw("GET", &format!("/sessions/{a}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(log.is_empty());
}

#[tokio::test]
async fn prompt_returns_five_placed_designs() {
    let c = Client::new();
    let sid = c.session().await;
    let out = c
        .ok(
            "POST",
            &format!("/sessions/{sid}/prompt"),
            Some(json!({"text": "armchair"})),
        )
        .await;
    let designs = out["designs"].as_array().unwrap();
    assert_eq!(designs.len(), 5);
    for d in designs {
        assert_eq!(d["color_class"], "prompt");
        let p = d["position"].as_array().unwrap();
        assert!(p.iter().all(|v| v.as_f64().unwrap().is_finite()));
        let id = d["shape_id"].as_str().unwrap();
        let shape: Shape = serde_json::from_value(
            c.ok("GET", &format!("/shapes/{id}/blobs?session={sid}"), None)
                .await,
        )
        .unwrap();
        assert_eq!(shape.label.as_deref(), Some("armchair"));
    }
    assert_eq!(out["suggestions"]["aligned"].as_array().unwrap().len(), 3);
    assert_eq!(
        out["suggestions"]["diversified"].as_array().unwrap().len(),
        3
    );

    let (status, _) = c
        .raw("POST", &format!("/sessions/{sid}/prompt"), None)
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = c
        .call(
            "POST",
            &format!("/sessions/{sid}/prompt"),
            Some(json!({"text": "  "})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = c
        .call(
            "POST",
            "/sessions/nope/prompt",
            Some(json!({"text": "sofa"})),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn map_lists_corpus_then_session_points() {
    let c = Client::new();
    let map = c.ok("GET", "/map", None).await;
    let points = map["points"].as_array().unwrap();
    assert_eq!(points.len(), atlas().representatives().len());
    assert_eq!(map["clusters"].as_array().unwrap().len(), points.len());
    assert!(points.iter().all(|p| p["color_class"] == "corpus"));

    let sid = c.session().await;
    c.lineage(&sid, 1).await;
    let map = c.ok("GET", &format!("/map?session={sid}"), None).await;
    let classes: Vec<&str> = map["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["color_class"].as_str().unwrap())
        .collect();
    assert_eq!(classes.iter().filter(|&&c| c == "prompt").count(), 5);
    assert_eq!(classes.iter().filter(|&&c| c == "llm").count(), 3);
    let (status, _) = c.call("GET", "/map?session=missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn fresh_field_is_zero() {
    let c = Client::new();
    let sid = c.session().await;
    let field = c
        .ok("GET", &format!("/sessions/{sid}/roi-field"), None)
        .await;
    assert_eq!(field["resolution"], json!([100, 100]));
    assert_eq!(field["field_version"], 0);
    let values = field["values"].as_array().unwrap();
    assert_eq!(values.len(), 100);
    assert!(values
        .iter()
        .flat_map(|col| col.as_array().unwrap())
        .all(|v| v.as_f64() == Some(0.0)));
}

#[tokio::test]
async fn shape_endpoints_serve_blobs_and_meshes() {
    let c = Client::new();
    let id = atlas().shapes()[3].id.clone();
    let blobs = c.ok("GET", &format!("/shapes/{id}/blobs"), None).await;
    assert_eq!(blobs["parts"].as_array().unwrap().len(), 16);
    for res in [32, 64] {
        let (status, obj) = c
            .raw("GET", &format!("/shapes/{id}/mesh?resolution={res}"), None)
            .await;
        assert_eq!(status, StatusCode::OK);
        let mesh = parse_obj(&obj).unwrap();
        assert!(!mesh.triangles.is_empty());
    }
    let (status, _) = c
        .raw("GET", &format!("/shapes/{id}/mesh?resolution=4"), None)
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = c.raw("GET", "/shapes/ghost/blobs", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = c.raw("GET", "/shapes/ghost/mesh", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn generate_adds_three_ranked_children() {
    let c = Client::new();
    let sid = c.session().await;
    let parent = atlas().shapes()[0].id.clone();
    let out = c
        .ok(
            "POST",
            &format!("/sessions/{sid}/generate"),
            Some(json!({"shape_id": parent, "selected_parts": [8, 9, 10, 11], "seed": 5})),
        )
        .await;
    let children = out["children"].as_array().unwrap();
    assert_eq!(children.len(), 3);
    let ranks: Vec<u64> = children
        .iter()
        .map(|c| c["rank"].as_u64().unwrap())
        .collect();
    assert_eq!(ranks, vec![1, 2, 3]);
    assert_eq!(out["tree"]["layout"].as_array().unwrap().len(), 4);

    let before = c.digest(&sid).await;
    for body in [
        json!({"shape_id": parent, "selected_parts": []}),
        json!({"shape_id": parent, "selected_parts": [99]}),
        json!({"shape_id": parent}),
    ] {
        let (status, _) = c
            .call("POST", &format!("/sessions/{sid}/generate"), Some(body))
            .await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, _) = c
        .call(
            "POST",
            &format!("/sessions/{sid}/generate"),
            Some(json!({"shape_id": "ghost", "selected_parts": [0]})),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(
        c.digest(&sid).await,
        before,
        "rejected requests leave no trace"
    );
}

#[tokio::test]
async fn mock_generation_is_deterministic_per_seed() {
    let c = Client::new();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let sid = c.session().await;
        let out = c.lineage(&sid, 2).await;
        let shapes: Vec<Value> = {
            let mut v = Vec::new();
            for o in &out {
                for child in o["children"].as_array().unwrap() {
                    let id = child["shape_id"].as_str().unwrap();
                    v.push(
                        c.ok("GET", &format!("/shapes/{id}/blobs?session={sid}"), None)
                            .await,
                    );
                }
            }
            v
        };
        runs.push((out, shapes));
    }
    assert_eq!(runs[0], runs[1]);
}

#[tokio::test]
async fn choose_refits_field_toward_chosen() {
    let c = Client::new();
    let sid = c.session().await;
    let parent = atlas().shapes()[10].id.clone();
    let out = c
        .ok(
            "POST",
            &format!("/sessions/{sid}/generate"),
            Some(json!({"shape_id": parent, "selected_parts": [4, 5, 6, 7], "seed": 1})),
        )
        .await;
    let children = out["children"].as_array().unwrap();
    let id = |i: usize| children[i]["shape_id"].as_str().unwrap().to_string();

    let (status, _) = c
        .call(
            "POST",
            &format!("/sessions/{sid}/choose"),
            Some(json!({"chosen_shape_id": id(0), "other_shape_ids": [id(0), id(1)]})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = c
        .call(
            "POST",
            &format!("/sessions/{sid}/choose"),
            Some(json!({"chosen_shape_id": id(0), "other_shape_ids": ["ghost"]})),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = c
        .call(
            "POST",
            "/sessions/ghost/choose",
            Some(json!({"chosen_shape_id": id(0), "other_shape_ids": [id(1)]})),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let chosen = id(2);
    let others = vec![parent.to_string(), id(0), id(1)];
    let resp = c
        .ok(
            "POST",
            &format!("/sessions/{sid}/choose"),
            Some(json!({"chosen_shape_id": chosen, "other_shape_ids": others})),
        )
        .await;
    assert_eq!(resp["field_version"], 1);

    let field = c
        .ok("GET", &format!("/sessions/{sid}/roi-field"), None)
        .await;
    assert_eq!(field["field_version"], 1);
    // grid oracle: brute-force argmax over the returned values
    let values: Vec<Vec<f64>> = serde_json::from_value(field["values"].clone()).unwrap();
    let (mut bx, mut by, mut best) = (0, 0, f64::NEG_INFINITY);
    for (ix, col) in values.iter().enumerate() {
        for (iy, &v) in col.iter().enumerate() {
            if v > best {
                (bx, by, best) = (ix, iy, v);
            }
        }
    }
    let bounds = atlas().bounds();
    let node = |axis: usize, i: usize| {
        bounds.min[axis] + (bounds.max[axis] - bounds.min[axis]) * i as f64 / 99.0
    };
    let argmax = [node(0, bx), node(1, by)];

    let state = c.state.session(&sid).await.unwrap();
    let session = state.read().await;
    let engine = &c.state.engine;
    let pos = |s: &str| session.position(engine, &s.into()).unwrap();
    let to_chosen = dist(&json!(pos(&chosen)), argmax);
    for o in &others {
        assert!(
            to_chosen < dist(&json!(pos(o)), argmax),
            "argmax nearer {o} than the chosen option"
        );
    }
    let model = session.roi().model().unwrap();
    for o in &others {
        assert!(model.predict_mean(&pos(&chosen)) > model.predict_mean(&pos(o)));
    }
}

#[tokio::test]
async fn two_rounds_build_a_seven_node_lineage() {
    let c = Client::new();
    let sid = c.session().await;
    c.lineage(&sid, 2).await;
    let tree = c.ok("GET", &format!("/sessions/{sid}/tree"), None).await;
    let roots = tree["roots"].as_array().unwrap();
    assert_eq!(roots.len(), 1);
    let layout = tree["layout"].as_array().unwrap();
    assert_eq!(layout.len(), 7);
    let depths: Vec<f64> = layout
        .iter()
        .map(|n| n["position"][1].as_f64().unwrap())
        .collect();
    assert_eq!(depths.iter().filter(|&&y| y == 0.0).count(), 1);
    assert_eq!(depths.iter().filter(|&&y| y == -1.0).count(), 3);
    assert_eq!(depths.iter().filter(|&&y| y == -2.0).count(), 3);
    for (i, a) in layout.iter().enumerate() {
        for b in &layout[i + 1..] {
            let pb = [
                b["position"][0].as_f64().unwrap(),
                b["position"][1].as_f64().unwrap(),
            ];
            assert!(dist(&a["position"], pb) > 0.5, "layout collision");
        }
    }
}

#[tokio::test]
async fn export_import_round_trip() {
    let c = Client::new();
    let sid = c.session().await;
    c.lineage(&sid, 3).await;
    let (_, log) = c.raw("GET", &format!("/sessions/{sid}/export"), None).await;
    let (status, body) = c.raw("POST", "/sessions/import", Some(log.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let new_id = serde_json::from_slice::<Value>(&body).unwrap()["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    assert_ne!(new_id, sid);
    for path in ["tree", "roi-field"] {
        assert_eq!(
            c.ok("GET", &format!("/sessions/{sid}/{path}"), None).await,
            c.ok("GET", &format!("/sessions/{new_id}/{path}"), None)
                .await
        );
    }
    let original = c.state.session(&sid).await.unwrap();
    let copy = c.state.session(&new_id).await.unwrap();
    let (a, b) = (original.read().await, copy.read().await);
    assert_eq!(a.dynamic_shapes(), b.dynamic_shapes());
    assert_eq!(
        a.roi().model().unwrap().g_map(),
        b.roi().model().unwrap().g_map()
    );
    assert_eq!(a.state_digest(), b.state_digest());
}

#[tokio::test]
async fn import_reports_the_bad_line() {
    let c = Client::new();
    let sid = c.session().await;
    c.lineage(&sid, 1).await;
    let (_, log) = c.raw("GET", &format!("/sessions/{sid}/export"), None).await;
    let mut lines: Vec<String> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    lines.insert(1, "{\"type\":\"choose\",\"chosen\":".into());
    let (status, body) = c
        .raw(
            "POST",
            "/sessions/import",
            Some(lines.join("\n").into_bytes()),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let message = serde_json::from_slice::<Value>(&body).unwrap()["error"].to_string();
    assert!(message.contains("line 2"), "{message}");

    // a semantically invalid event is also pinned to its line
    let bad = "{\"type\":\"choose\",\"chosen\":\"a\",\"others\":[\"b\"]}\n";
    let (status, body) = c
        .raw("POST", "/sessions/import", Some(bad.as_bytes().to_vec()))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8(body).unwrap().contains("line 1"));

    let (status, body) = c.raw("POST", "/sessions/import", Some(Vec::new())).await;
    assert_eq!(status, StatusCode::OK);
    let empty = serde_json::from_slice::<Value>(&body).unwrap()["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    let tree = c.ok("GET", &format!("/sessions/{empty}/tree"), None).await;
    assert_eq!(tree["roots"], json!([]));
}

#[tokio::test]
async fn reads_do_not_mutate() {
    let c = Client::new();
    let sid = c.session().await;
    c.lineage(&sid, 2).await;
    let before = c.digest(&sid).await;
    let child = c
        .state
        .session(&sid)
        .await
        .unwrap()
        .read()
        .await
        .dynamic_shapes()[6]
        .shape
        .id
        .clone();
    for uri in [
        format!("/sessions/{sid}/roi-field"),
        format!("/sessions/{sid}/tree"),
        format!("/sessions/{sid}/export"),
        format!("/map?session={sid}"),
        format!("/shapes/{child}/blobs?session={sid}"),
        format!("/shapes/{child}/mesh?resolution=16&session={sid}"),
    ] {
        let (status, _) = c.raw("GET", &uri, None).await;
        assert_eq!(status, StatusCode::OK, "{uri}");
        assert_eq!(c.digest(&sid).await, before, "{uri} mutated the session");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_mutations_are_serialized() {
    let c = Arc::new(Client::new());
    let sid = c.session().await;
    let parent = atlas().shapes()[1].id.clone();
    let mut handles = Vec::new();
    for seed in 0..4 {
        let c = c.clone();
        let sid = sid.clone();
        let parent = parent.clone();
        handles.push(tokio::spawn(async move {
            c.ok(
                "POST",
                &format!("/sessions/{sid}/generate"),
                Some(json!({"shape_id": parent, "selected_parts": [0, 1], "seed": seed})),
            )
            .await
        }));
    }
    for h in handles {
        h.await.unwrap();
    }
    let tree = c.ok("GET", &format!("/sessions/{sid}/tree"), None).await;
    assert_eq!(tree["layout"].as_array().unwrap().len(), 13);
    let session = c.state.session(&sid).await.unwrap();
    assert_eq!(session.read().await.rounds(), 4);
}

#[tokio::test]
async fn session_logs_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = Client::with_state(state_with(Some(dir.path().to_path_buf())));
    let sid = first.session().await;
    first.lineage(&sid, 2).await;
    let tree = first
        .ok("GET", &format!("/sessions/{sid}/tree"), None)
        .await;
    let digest = first.digest(&sid).await;

    let state = state_with(Some(dir.path().to_path_buf()));
    assert_eq!(state.restore().await.unwrap(), 1);
    let second = Client::with_state(state);
    assert_eq!(
        second
            .ok("GET", &format!("/sessions/{sid}/tree"), None)
            .await,
        tree
    );
    assert_eq!(second.digest(&sid).await, digest);
}
