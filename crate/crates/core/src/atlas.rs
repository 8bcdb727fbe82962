//! The static design corpus and its fitted map.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blobshape::procedural::{generate_procedural_chair, Archetype};
use crate::blobshape::{Shape, ShapeId};
use crate::embedding::{
    cluster_map, fit_embedding, select_representatives, EmbeddingArtifact, EmbeddingError,
    EmbeddingModel, EmbeddingParams, MapPoint,
};
use crate::roi::{KernelParams, MapBounds};

pub const DEFAULT_CORPUS_SIZE: usize = 2000;
pub const DEFAULT_REPRESENTATIVES: usize = 1981;
pub const DEFAULT_CLUSTERS: usize = 8;

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("duplicate shape id `{0}`")]
    DuplicateId(ShapeId),
    #[error("corpus is empty")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasConfig {
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub embedding: EmbeddingParams,
    /// Clamped to the corpus size.
    pub representatives: usize,
    pub clusters: usize,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        AtlasConfig {
            corpus_size: DEFAULT_CORPUS_SIZE,
            corpus_seed: 0,
            embedding: EmbeddingParams::default(),
            representatives: DEFAULT_REPRESENTATIVES,
            clusters: DEFAULT_CLUSTERS,
        }
    }
}

/// `size` procedural chairs, archetypes round-robin, shape `i` seeded with `seed + i`.
pub fn generate_corpus(size: usize, seed: u64) -> Vec<Shape> {
    (0..size)
        .map(|i| {
            let archetype = Archetype::ALL[i % Archetype::ALL.len()];
            let mut shape = generate_procedural_chair(archetype, seed.wrapping_add(i as u64));
            shape.id = ShapeId::new(format!("corpus-{i:05}"));
            shape
        })
        .collect()
}

/// One JSON shape per line.
pub fn write_corpus<W: Write>(shapes: &[Shape], mut out: W) -> Result<(), AtlasError> {
    for shape in shapes {
        serde_json::to_writer(&mut out, shape).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parse and validate a JSON Lines corpus. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<Shape>, AtlasError> {
    let mut shapes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let shape: Shape = serde_json::from_str(&line).map_err(|e| AtlasError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        shape.validate().map_err(|e| AtlasError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        shapes.push(shape);
    }
    Ok(shapes)
}

/// Corpus, map and derived indices, shared read-only by every session.
#[derive(Clone, Debug)]
pub struct Atlas {
    shapes: Vec<Shape>,
    index: BTreeMap<ShapeId, usize>,
    model: EmbeddingModel,
    representatives: Vec<usize>,
    cluster_labels: Vec<usize>,
    bounds: MapBounds,
}

impl Atlas {
    /// Generate the corpus and fit the map from scratch.
    pub fn generate(config: &AtlasConfig) -> Result<Atlas, AtlasError> {
        let shapes = generate_corpus(config.corpus_size, config.corpus_seed);
        let rows: Vec<Vec<f64>> = shapes.iter().map(Shape::flatten).collect();
        let model = fit_embedding(&rows, &config.embedding)?;
        Atlas::assemble(shapes, model, config)
    }

    /// Fit the map over an existing corpus.
    pub fn fit(shapes: Vec<Shape>, config: &AtlasConfig) -> Result<Atlas, AtlasError> {
        let rows: Vec<Vec<f64>> = shapes.iter().map(Shape::flatten).collect();
        let model = fit_embedding(&rows, &config.embedding)?;
        Atlas::assemble(shapes, model, config)
    }

    /// Restore a persisted map; the corpus must match the artifact digest.
    pub fn from_artifact(
        shapes: Vec<Shape>,
        artifact: EmbeddingArtifact,
        config: &AtlasConfig,
    ) -> Result<Atlas, AtlasError> {
        let rows: Vec<Vec<f64>> = shapes.iter().map(Shape::flatten).collect();
        let model = EmbeddingModel::from_artifact(artifact, rows)?;
        Atlas::assemble(shapes, model, config)
    }

    fn assemble(
        shapes: Vec<Shape>,
        model: EmbeddingModel,
        config: &AtlasConfig,
    ) -> Result<Atlas, AtlasError> {
        if shapes.is_empty() {
            return Err(AtlasError::Empty);
        }
        let mut index = BTreeMap::new();
        for (i, s) in shapes.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(AtlasError::DuplicateId(s.id.clone()));
            }
        }
        let positions = model.positions();
        let seed = config.embedding.seed;
        let representatives =
            select_representatives(positions, config.representatives.min(shapes.len()), seed)?;
        let cluster_labels =
            cluster_map(positions, config.clusters.clamp(1, shapes.len()), seed)?.labels;
        let (min, max) = model.bounds();
        Ok(Atlas {
            shapes,
            index,
            model,
            representatives,
            cluster_labels,
            bounds: MapBounds { min, max },
        })
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shape(&self, id: &ShapeId) -> Option<&Shape> {
        self.index.get(id).map(|&i| &self.shapes[i])
    }

    pub fn position(&self, id: &ShapeId) -> Option<MapPoint> {
        self.index.get(id).map(|&i| self.model.positions()[i])
    }

    pub fn positions(&self) -> &[MapPoint] {
        self.model.positions()
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    /// Corpus indices shown on the map.
    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    pub fn cluster_labels(&self) -> &[usize] {
        &self.cluster_labels
    }

    pub fn bounds(&self) -> MapBounds {
        self.bounds
    }

    pub fn diameter(&self) -> f64 {
        self.bounds.diameter()
    }

    /// Default ROI kernel for this map.
    pub fn kernel(&self) -> KernelParams {
        KernelParams::for_map(self.diameter())
    }
}
