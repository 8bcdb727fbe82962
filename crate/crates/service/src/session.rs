//! Event-sourced design sessions.
//!
//! Every mutation is expressed as a [`SessionEvent`] and applied through
//! [`Session::apply`], so replaying an exported log runs the same code as
//! the live endpoints.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use blobspace_core::atlas::Atlas;
use blobspace_core::blobshape::{Provenance, Shape, ShapeId};
use blobspace_core::embedding::MapPoint;
use blobspace_core::genprovider::prompt::DEFAULT_PROMPT_COUNT;
use blobspace_core::genprovider::{
    generate_alternatives, prompt_to_designs, suggest_adjectives, Adjective, LatentProvider,
    RoundInput, SessionHistory, SuggestionSet,
};
use blobspace_core::roi::{compute_field, rank_candidates, GoodnessField, RoiState};
use blobspace_core::versioning::{EditDescriptor, VersionTree};

use crate::error::ServiceError;

pub const DEFAULT_FIELD_RESOLUTION: [usize; 2] = [100, 100];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorClass {
    Corpus,
    Prompt,
    Llm,
}

/// A session-created shape and where it sits on the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub shape: Shape,
    pub position: MapPoint,
}

impl PlacedShape {
    pub fn color_class(&self) -> ColorClass {
        match self.shape.provenance {
            Provenance::LlmEdit => ColorClass::Llm,
            Provenance::Prompt => ColorClass::Prompt,
            Provenance::Corpus | Provenance::Procedural => ColorClass::Corpus,
        }
    }
}

/// One line of a session log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Prompt {
        text: String,
        designs: Vec<PlacedShape>,
    },
    Generate {
        parent: ShapeId,
        selected_parts: Vec<usize>,
        seed: u64,
        round: u32,
        adjectives: Vec<String>,
        provider: String,
        #[serde(default)]
        fallback: Option<String>,
        children: Vec<PlacedShape>,
    },
    Choose {
        chosen: ShapeId,
        others: Vec<ShapeId>,
    },
}

/// Read-only resources shared by every session.
#[derive(Clone)]
pub struct Engine {
    pub atlas: Arc<Atlas>,
    pub provider: Arc<dyn LatentProvider>,
    pub field_resolution: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDesign {
    pub shape_id: ShapeId,
    pub position: MapPoint,
    pub color_class: ColorClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptOutcome {
    pub designs: Vec<MapDesign>,
    pub suggestions: SuggestionSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedChild {
    pub shape_id: ShapeId,
    pub position: MapPoint,
    /// 1 is the best predicted option.
    pub rank: usize,
    pub adjective: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub children: Vec<RankedChild>,
    pub adjectives: Vec<String>,
    pub provider: String,
    pub fallback: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    prompts: Vec<String>,
    roi: RoiState,
    tree: VersionTree,
    dynamic: Vec<PlacedShape>,
    dynamic_index: BTreeMap<ShapeId, usize>,
    used_adjectives: Vec<Adjective>,
    chosen: Vec<ShapeId>,
    rounds: u32,
    events: Vec<SessionEvent>,
}

impl Engine {
    pub fn new_session(&self, id: impl Into<String>) -> Session {
        Session {
            id: id.into(),
            prompts: Vec::new(),
            roi: RoiState::new(self.atlas.kernel()),
            tree: VersionTree::new(),
            dynamic: Vec::new(),
            dynamic_index: BTreeMap::new(),
            used_adjectives: Vec::new(),
            chosen: Vec::new(),
            rounds: 0,
            events: Vec::new(),
        }
    }

    /// Rebuild a session from a JSON Lines log. Errors name the 1-based line.
    pub fn import(&self, id: impl Into<String>, log: &str) -> Result<Session, ServiceError> {
        let mut session = self.new_session(id);
        for (i, line) in log.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let at = |e: String| ServiceError::BadRequest(format!("line {}: {e}", i + 1));
            let event: SessionEvent = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
            session.apply(self, event).map_err(|e| at(e.to_string()))?;
        }
        Ok(session)
    }

    /// Retrieve designs for a prompt and add them to the session as prompt shapes.
    pub fn prompt(&self, session: &mut Session, text: &str) -> Result<PromptOutcome, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("prompt text is empty".into()));
        }
        let atlas = &self.atlas;
        let n = session.prompts.len();
        let count = DEFAULT_PROMPT_COUNT.min(atlas.len());
        let picks = prompt_to_designs(text, atlas.shapes(), atlas.positions(), count, n as u64)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let mut designs = Vec::with_capacity(picks.len());
        for i in picks {
            let source = &atlas.shapes()[i];
            let mut shape = source.clone();
            shape.id = ShapeId::new(format!("prompt-{n}-{}", source.id));
            shape.provenance = Provenance::Prompt;
            shape.parent_id = None;
            let position = self.place(&shape)?;
            designs.push(PlacedShape { shape, position });
        }
        let event = SessionEvent::Prompt {
            text: text.to_string(),
            designs,
        };
        session.apply(self, event.clone())?;
        let SessionEvent::Prompt { designs, .. } = event else {
            unreachable!()
        };
        Ok(PromptOutcome {
            designs: designs
                .iter()
                .map(|d| MapDesign {
                    shape_id: d.shape.id.clone(),
                    position: d.position,
                    color_class: ColorClass::Prompt,
                })
                .collect(),
            suggestions: session.suggestions(self),
        })
    }

    /// Run one generation round on `parent` and attach the three children to the tree.
    pub fn generate(
        &self,
        session: &mut Session,
        parent: &ShapeId,
        selected_parts: &[usize],
        seed: Option<u64>,
    ) -> Result<GenerateOutcome, ServiceError> {
        let base = session
            .resolve(self, parent)
            .ok_or_else(|| ServiceError::NotFound(format!("shape {parent}")))?
            .clone();
        let round = session.rounds + 1;
        let seed = seed.unwrap_or(round as u64);
        let roi_shapes = session.chosen_shapes(self);
        let generation = generate_alternatives(
            RoundInput {
                parent: &base,
                selected_parts,
                history: SessionHistory {
                    prompts: &session.prompts,
                    used_adjectives: &session.used_adjectives,
                    roi_shapes: &roi_shapes,
                },
                round,
                seed,
            },
            self.provider.as_ref(),
        )
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;

        let mut children = Vec::with_capacity(generation.children.len());
        for shape in generation.children {
            let position = self.place(&shape)?;
            children.push(PlacedShape { shape, position });
        }
        let candidates: Vec<(ShapeId, MapPoint)> = children
            .iter()
            .map(|c| (c.shape.id.clone(), c.position))
            .collect();
        let ranked = rank_candidates(session.roi.model(), &candidates);
        let labels: BTreeMap<ShapeId, Option<String>> = children
            .iter()
            .map(|c| (c.shape.id.clone(), c.shape.label.clone()))
            .collect();
        let adjectives: Vec<String> = generation
            .adjectives
            .iter()
            .map(|a| a.name().to_string())
            .collect();

        let event = SessionEvent::Generate {
            parent: parent.clone(),
            selected_parts: selected_parts.to_vec(),
            seed,
            round,
            adjectives: adjectives.clone(),
            provider: generation.provider.clone(),
            fallback: generation.fallback.clone(),
            children,
        };
        session.apply(self, event)?;
        Ok(GenerateOutcome {
            children: ranked
                .into_iter()
                .enumerate()
                .map(|(i, r)| RankedChild {
                    adjective: labels[&r.id].clone(),
                    shape_id: r.id,
                    position: r.position,
                    rank: i + 1,
                })
                .collect(),
            adjectives,
            provider: generation.provider,
            fallback: generation.fallback,
        })
    }

    /// Record a choice and refit the goodness model. Returns the new field version.
    pub fn choose(
        &self,
        session: &mut Session,
        chosen: &ShapeId,
        others: &[ShapeId],
    ) -> Result<u64, ServiceError> {
        session.apply(
            self,
            SessionEvent::Choose {
                chosen: chosen.clone(),
                others: others.to_vec(),
            },
        )?;
        Ok(session.field_version())
    }

    fn place(&self, shape: &Shape) -> Result<MapPoint, ServiceError> {
        self.atlas
            .model()
            .transform(&shape.flatten())
            .map(|p| p.position)
            .map_err(|e| ServiceError::Internal(e.to_string()))
    }
}

impl Session {
    /// Validate and apply one event.
    pub fn apply(&mut self, engine: &Engine, event: SessionEvent) -> Result<(), ServiceError> {
        match &event {
            SessionEvent::Prompt { text, designs } => {
                self.check_fresh(engine, designs)?;
                self.prompts.push(text.clone());
                for d in designs {
                    self.insert(d.clone());
                }
            }
            SessionEvent::Generate {
                parent,
                selected_parts,
                round,
                adjectives,
                children,
                ..
            } => {
                if self.resolve(engine, parent).is_none() {
                    return Err(ServiceError::NotFound(format!("shape {parent}")));
                }
                if *round <= self.rounds {
                    return Err(ServiceError::BadRequest(format!(
                        "round {round} does not follow round {}",
                        self.rounds
                    )));
                }
                self.check_fresh(engine, children)?;
                let ids: Vec<ShapeId> = children.iter().map(|c| c.shape.id.clone()).collect();
                let mut tree = self.tree.clone();
                tree.ensure_root(parent);
                tree.add_generation(
                    parent,
                    &ids,
                    EditDescriptor {
                        selected_parts: selected_parts.clone(),
                        adjectives: adjectives.clone(),
                        generation_round: *round,
                    },
                )
                .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                self.tree = tree;
                self.rounds = *round;
                for c in children {
                    self.insert(c.clone());
                }
            }
            SessionEvent::Choose { chosen, others } => {
                let mut positions = BTreeMap::new();
                for id in std::iter::once(chosen).chain(others) {
                    let p = self
                        .position(engine, id)
                        .ok_or_else(|| ServiceError::NotFound(format!("shape {id}")))?;
                    positions.insert(id.clone(), p);
                }
                self.roi = self
                    .roi
                    .record_choice(chosen.clone(), others.clone(), positions)
                    .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                if let Some(label) = self.resolve(engine, chosen).and_then(|s| s.label.clone()) {
                    if self.dynamic_index.contains_key(chosen) {
                        self.used_adjectives
                            .extend(label.split('+').filter_map(|a| a.parse::<Adjective>().ok()));
                    }
                }
                self.chosen.push(chosen.clone());
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn check_fresh(&self, engine: &Engine, shapes: &[PlacedShape]) -> Result<(), ServiceError> {
        let mut seen = std::collections::BTreeSet::new();
        for d in shapes {
            let id = &d.shape.id;
            if self.resolve(engine, id).is_some() || !seen.insert(id) {
                return Err(ServiceError::BadRequest(format!(
                    "shape {id} already exists"
                )));
            }
            if !(d.position[0].is_finite() && d.position[1].is_finite()) {
                return Err(ServiceError::BadRequest(format!(
                    "shape {id} has no finite position"
                )));
            }
        }
        Ok(())
    }

    fn insert(&mut self, placed: PlacedShape) {
        self.dynamic_index
            .insert(placed.shape.id.clone(), self.dynamic.len());
        self.dynamic.push(placed);
    }

    /// Corpus or session shape by id.
    pub fn resolve<'a>(&'a self, engine: &'a Engine, id: &ShapeId) -> Option<&'a Shape> {
        engine
            .atlas
            .shape(id)
            .or_else(|| self.dynamic_index.get(id).map(|&i| &self.dynamic[i].shape))
    }

    pub fn position(&self, engine: &Engine, id: &ShapeId) -> Option<MapPoint> {
        engine.atlas.position(id).or_else(|| {
            self.dynamic_index
                .get(id)
                .map(|&i| self.dynamic[i].position)
        })
    }

    fn chosen_shapes(&self, engine: &Engine) -> Vec<Shape> {
        self.chosen
            .iter()
            .filter_map(|id| self.resolve(engine, id).cloned())
            .collect()
    }

    pub fn suggestions(&self, engine: &Engine) -> SuggestionSet {
        let roi_shapes = self.chosen_shapes(engine);
        suggest_adjectives(&SessionHistory {
            prompts: &self.prompts,
            used_adjectives: &self.used_adjectives,
            roi_shapes: &roi_shapes,
        })
    }

    pub fn roi(&self) -> &RoiState {
        &self.roi
    }

    pub fn tree(&self) -> &VersionTree {
        &self.tree
    }

    /// Shapes created in this session, in creation order.
    pub fn dynamic_shapes(&self) -> &[PlacedShape] {
        &self.dynamic
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    /// Number of choices the field has been fit to.
    pub fn field_version(&self) -> u64 {
        self.roi.events().len() as u64
    }

    pub fn field(&self, engine: &Engine) -> Result<GoodnessField, ServiceError> {
        compute_field(
            self.roi.model(),
            engine.atlas.bounds(),
            engine.field_resolution,
        )
        .map_err(|e| ServiceError::Internal(e.to_string()))
    }

    /// Tree JSON with a `layout` array of `{shape_id, position}` entries.
    pub fn tree_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(&self.tree).expect("tree serializes");
        let layout: Vec<serde_json::Value> = self
            .tree
            .layout()
            .into_iter()
            .map(|(id, p)| serde_json::json!({ "shape_id": id, "position": p }))
            .collect();
        value["layout"] = serde_json::Value::Array(layout);
        value
    }

    /// The log as JSON Lines.
    pub fn export(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }

    /// Digest of everything observable about the session.
    pub fn state_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.export().as_bytes());
        h.update(self.tree_json().to_string().as_bytes());
        for g in self.roi.model().map_or(&[][..], |m| m.g_map()) {
            h.update(g.to_le_bytes());
        }
        for d in &self.dynamic {
            h.update(serde_json::to_vec(d).expect("shape serializes"));
        }
        h.update(self.rounds.to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
