//! Part-aware Gaussian-blob shapes.
//!
//! A [`Shape`] is a fixed set of 16 ellipsoidal blobs. Each blob is described by
//! its extrinsic latent ([`PartLatent`]): a center, the eigenvalues and
//! eigenvectors of its covariance, and a non-negative blend weight. The
//! occupancy of a shape is the unnormalized Gaussian mixture of its blobs, so a
//! lone blob peaks at its own blend weight.
//!
//! Parts follow a fixed semantic ordering (see [`PartGroup`]): legs `0..4`,
//! seat `4..8`, back `8..12`, arms `12..15` and one connector at `15`.
//! The vertical axis is `y`, the lateral axis is `x` and the front of a chair
//! faces `+z`.

mod mesh;
pub mod procedural;
mod tables;

use std::fmt;
use std::ops::Range;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mesh::{export_obj, extract_mesh, parse_obj, MeshError, TriangleMesh};
pub use procedural::{generate_procedural_chair, Archetype};

/// Number of blobs in every shape.
pub const PART_COUNT: usize = 16;
/// Scalars per blob in the flattened layout: center, eigenvalues, eigenvectors, weight.
pub const PART_DIM: usize = 16;
/// Length of a flattened shape.
pub const LATENT_DIM: usize = PART_COUNT * PART_DIM;

/// Default iso level used for meshing.
pub const DEFAULT_ISO_LEVEL: f64 = 0.125;
/// Default marching-cubes resolution for full meshes.
pub const DEFAULT_MESH_RESOLUTION: usize = 64;
/// Default marching-cubes resolution for hover previews.
pub const PREVIEW_MESH_RESOLUTION: usize = 32;
/// Half-width of the sampling cube used for meshing.
pub const GRID_EXTENT: f64 = 1.1;

const ORTHO_TOL: f64 = 1e-6;
const MIN_REPAIR_DET: f64 = 0.5;

/// Semantic part groups and their fixed index ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartGroup {
    Legs,
    Seat,
    Back,
    Arms,
    Connector,
}

impl PartGroup {
    pub const ALL: [PartGroup; 5] = [
        PartGroup::Legs,
        PartGroup::Seat,
        PartGroup::Back,
        PartGroup::Arms,
        PartGroup::Connector,
    ];

    pub fn indices(self) -> Range<usize> {
        match self {
            PartGroup::Legs => 0..4,
            PartGroup::Seat => 4..8,
            PartGroup::Back => 8..12,
            PartGroup::Arms => 12..15,
            PartGroup::Connector => 15..16,
        }
    }

    pub fn of(index: usize) -> Option<PartGroup> {
        PartGroup::ALL
            .into_iter()
            .find(|g| g.indices().contains(&index))
    }

    pub fn name(self) -> &'static str {
        match self {
            PartGroup::Legs => "legs",
            PartGroup::Seat => "seat",
            PartGroup::Back => "back",
            PartGroup::Arms => "arms",
            PartGroup::Connector => "connector",
        }
    }
}

/// The invariant a [`PartLatent`] violates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartViolation {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("eigenvalue {axis} must be strictly positive, got {value}")]
    NonPositiveEigenvalue { axis: usize, value: f64 },
    #[error("eigenvector {axis} is not unit length (norm {norm})")]
    NonUnitAxis { axis: usize, norm: f64 },
    #[error("eigenvectors {a} and {b} are not orthogonal (dot {dot})")]
    NonOrthogonalAxes { a: usize, b: usize, dot: f64 },
    #[error("eigenvector determinant {det} is not ±1")]
    Determinant { det: f64 },
    #[error("blend weight must be non-negative, got {0}")]
    NegativeWeight(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("invalid part: {0}")]
    Part(#[from] PartViolation),
    #[error("part {index}: {violation}")]
    InvalidPart {
        index: usize,
        violation: PartViolation,
    },
    #[error("expected {PART_COUNT} parts, got {0}")]
    PartCount(usize),
    #[error("flattened shape must have length {LATENT_DIM}, got {0}")]
    LatentLength(usize),
    #[error("part {index}: eigenvector block cannot be repaired (|det| = {det:.4} < 0.5)")]
    UnrepairableFrame { index: usize, det: f64 },
    #[error("part index {0} out of range")]
    PartIndex(usize),
}

/// Extrinsic latent of one blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PartWire", try_from = "PartWire")]
pub struct PartLatent {
    pub center: Vector3<f64>,
    /// Variance along each principal axis.
    pub eigenvalues: Vector3<f64>,
    /// Principal axes as columns.
    pub eigenvectors: Matrix3<f64>,
    pub blend_weight: f64,
}

impl PartLatent {
    pub fn new(
        center: Vector3<f64>,
        eigenvalues: Vector3<f64>,
        eigenvectors: Matrix3<f64>,
        blend_weight: f64,
    ) -> Result<Self, PartViolation> {
        let part = PartLatent {
            center,
            eigenvalues,
            eigenvectors,
            blend_weight,
        };
        part.validate()?;
        Ok(part)
    }

    /// Axis-aligned blob with equal variance on every axis.
    pub fn isotropic(center: Vector3<f64>, variance: f64, blend_weight: f64) -> Self {
        PartLatent {
            center,
            eigenvalues: Vector3::repeat(variance),
            eigenvectors: Matrix3::identity(),
            blend_weight,
        }
    }

    pub fn validate(&self) -> Result<(), PartViolation> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(PartViolation::NonFinite("center"));
        }
        if !self.eigenvalues.iter().all(|v| v.is_finite()) {
            return Err(PartViolation::NonFinite("eigenvalues"));
        }
        if !self.eigenvectors.iter().all(|v| v.is_finite()) {
            return Err(PartViolation::NonFinite("eigenvectors"));
        }
        if !self.blend_weight.is_finite() {
            return Err(PartViolation::NonFinite("blend_weight"));
        }
        for (axis, &value) in self.eigenvalues.iter().enumerate() {
            if value <= 0.0 {
                return Err(PartViolation::NonPositiveEigenvalue { axis, value });
            }
        }
        for axis in 0..3 {
            let norm = self.eigenvectors.column(axis).norm();
            if (norm - 1.0).abs() > ORTHO_TOL {
                return Err(PartViolation::NonUnitAxis { axis, norm });
            }
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let dot = self
                .eigenvectors
                .column(a)
                .dot(&self.eigenvectors.column(b));
            if dot.abs() > ORTHO_TOL {
                return Err(PartViolation::NonOrthogonalAxes { a, b, dot });
            }
        }
        let det = self.eigenvectors.determinant();
        if (det.abs() - 1.0).abs() > ORTHO_TOL {
            return Err(PartViolation::Determinant { det });
        }
        if self.blend_weight < 0.0 {
            return Err(PartViolation::NegativeWeight(self.blend_weight));
        }
        Ok(())
    }

    /// `U · diag(λ) · Uᵀ`.
    pub fn covariance(&self) -> Result<Matrix3<f64>, PartViolation> {
        self.validate()?;
        Ok(self.covariance_unchecked())
    }

    fn covariance_unchecked(&self) -> Matrix3<f64> {
        let u = &self.eigenvectors;
        let cov = u * Matrix3::from_diagonal(&self.eigenvalues) * u.transpose();
        // exact symmetry
        (cov + cov.transpose()) * 0.5
    }

    /// Squared Mahalanobis distance of `point` from the blob center.
    pub fn mahalanobis_sq(&self, point: &Vector3<f64>) -> f64 {
        let d = point - self.center;
        (0..3)
            .map(|k| {
                let proj = self.eigenvectors.column(k).dot(&d);
                proj * proj / self.eigenvalues[k]
            })
            .sum()
    }

    /// Contribution of this blob to the occupancy field.
    pub fn density(&self, point: &Vector3<f64>) -> f64 {
        if self.blend_weight == 0.0 {
            return 0.0;
        }
        self.blend_weight * (-0.5 * self.mahalanobis_sq(point)).exp()
    }

    fn density_gradient(&self, point: &Vector3<f64>) -> Vector3<f64> {
        if self.blend_weight == 0.0 {
            return Vector3::zeros();
        }
        let d = point - self.center;
        let mut precision_d = Vector3::zeros();
        for k in 0..3 {
            let axis = self.eigenvectors.column(k);
            precision_d += axis * (axis.dot(&d) / self.eigenvalues[k]);
        }
        -precision_d * self.density(point)
    }
}

#[derive(Serialize, Deserialize)]
struct PartWire {
    center: [f64; 3],
    eigenvalues: [f64; 3],
    /// Column-major: `eigenvectors[k]` is the k-th principal axis.
    eigenvectors: [[f64; 3]; 3],
    weight: f64,
}

impl From<PartLatent> for PartWire {
    fn from(p: PartLatent) -> Self {
        let col = |k: usize| {
            let c = p.eigenvectors.column(k);
            [c[0], c[1], c[2]]
        };
        PartWire {
            center: p.center.into(),
            eigenvalues: p.eigenvalues.into(),
            eigenvectors: [col(0), col(1), col(2)],
            weight: p.blend_weight,
        }
    }
}

impl TryFrom<PartWire> for PartLatent {
    type Error = PartViolation;

    fn try_from(w: PartWire) -> Result<Self, Self::Error> {
        let cols = w.eigenvectors.map(Vector3::from);
        PartLatent::new(
            Vector3::from(w.center),
            Vector3::from(w.eigenvalues),
            Matrix3::from_columns(&cols),
            w.weight,
        )
    }
}

/// Opaque shape identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeId(pub String);

impl ShapeId {
    pub fn new(id: impl Into<String>) -> Self {
        ShapeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ShapeId {
    fn from(s: &str) -> Self {
        ShapeId(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Prompt,
    LlmEdit,
    Procedural,
    Corpus,
}

/// A chair made of exactly [`PART_COUNT`] blobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeWire")]
pub struct Shape {
    pub id: ShapeId,
    pub provenance: Provenance,
    pub parent_id: Option<ShapeId>,
    pub label: Option<String>,
    parts: Vec<PartLatent>,
}

#[derive(Deserialize)]
struct ShapeWire {
    id: ShapeId,
    provenance: Provenance,
    #[serde(default)]
    parent_id: Option<ShapeId>,
    #[serde(default)]
    label: Option<String>,
    parts: Vec<PartLatent>,
}

impl TryFrom<ShapeWire> for Shape {
    type Error = ShapeError;

    fn try_from(w: ShapeWire) -> Result<Self, Self::Error> {
        let mut shape = Shape::new(w.id, w.provenance, w.parts)?;
        shape.parent_id = w.parent_id;
        shape.label = w.label;
        Ok(shape)
    }
}

impl Shape {
    pub fn new(
        id: ShapeId,
        provenance: Provenance,
        parts: Vec<PartLatent>,
    ) -> Result<Self, ShapeError> {
        let shape = Shape {
            id,
            provenance,
            parent_id: None,
            label: None,
            parts,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn with_parent(mut self, parent: ShapeId) -> Self {
        self.parent_id = Some(parent);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.parts.len() != PART_COUNT {
            return Err(ShapeError::PartCount(self.parts.len()));
        }
        for (index, part) in self.parts.iter().enumerate() {
            part.validate()
                .map_err(|violation| ShapeError::InvalidPart { index, violation })?;
        }
        Ok(())
    }

    pub fn parts(&self) -> &[PartLatent] {
        &self.parts
    }

    pub fn part(&self, index: usize) -> Option<&PartLatent> {
        self.parts.get(index)
    }

    /// Replace one part, re-validating it.
    pub fn set_part(&mut self, index: usize, part: PartLatent) -> Result<(), ShapeError> {
        if index >= PART_COUNT {
            return Err(ShapeError::PartIndex(index));
        }
        part.validate()
            .map_err(|violation| ShapeError::InvalidPart { index, violation })?;
        self.parts[index] = part;
        Ok(())
    }

    /// Σᵢ πᵢ · exp(−½ (p−cᵢ)ᵀ Σᵢ⁻¹ (p−cᵢ)).
    pub fn occupancy(&self, point: &Vector3<f64>) -> f64 {
        self.parts.iter().map(|p| p.density(point)).sum()
    }

    pub fn occupancy_gradient(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.parts
            .iter()
            .map(|p| p.density_gradient(point))
            .fold(Vector3::zeros(), |acc, g| acc + g)
    }

    /// Layout per part: center(3), eigenvalues(3), eigenvectors column-major(9), weight(1).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(LATENT_DIM);
        for part in &self.parts {
            out.extend(part.center.iter());
            out.extend(part.eigenvalues.iter());
            // nalgebra storage is column-major
            out.extend(part.eigenvectors.iter());
            out.push(part.blend_weight);
        }
        out
    }

    /// Rebuild a shape from its flattened latent. Eigenvector blocks are
    /// projected to the nearest orthonormal matrix before validation.
    pub fn unflatten(
        latent: &[f64],
        id: ShapeId,
        provenance: Provenance,
    ) -> Result<Shape, ShapeError> {
        if latent.len() != LATENT_DIM {
            return Err(ShapeError::LatentLength(latent.len()));
        }
        let mut parts = Vec::with_capacity(PART_COUNT);
        for (index, chunk) in latent.chunks_exact(PART_DIM).enumerate() {
            let invalid = |violation| ShapeError::InvalidPart { index, violation };
            if !chunk.iter().all(|v| v.is_finite()) {
                return Err(invalid(PartViolation::NonFinite("latent")));
            }
            let center = Vector3::new(chunk[0], chunk[1], chunk[2]);
            let eigenvalues = Vector3::new(chunk[3], chunk[4], chunk[5]);
            let raw = Matrix3::from_column_slice(&chunk[6..15]);
            let det = raw.determinant();
            if det.abs() < MIN_REPAIR_DET {
                return Err(ShapeError::UnrepairableFrame {
                    index,
                    det: det.abs(),
                });
            }
            let eigenvectors = nearest_orthonormal(&raw);
            let part =
                PartLatent::new(center, eigenvalues, eigenvectors, chunk[15]).map_err(invalid)?;
            parts.push(part);
        }
        Shape::new(id, provenance, parts)
    }
}

/// Orthonormal polar factor `U Vᵀ` of `m = U Σ Vᵀ`.
pub fn nearest_orthonormal(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    u * v_t
}

/// Rotation matrix about a unit axis (Rodrigues).
pub fn rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let unit = nalgebra::Unit::new_normalize(*axis);
    *nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix()
}
