//! Procedural chair generator used to build synthetic corpora.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{rotation, PartLatent, Provenance, Shape, ShapeId, PART_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Armchair,
    Dining,
    Stool,
    Sofa,
    Bar,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Armchair,
        Archetype::Dining,
        Archetype::Stool,
        Archetype::Sofa,
        Archetype::Bar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Armchair => "armchair",
            Archetype::Dining => "dining",
            Archetype::Stool => "stool",
            Archetype::Sofa => "sofa",
            Archetype::Bar => "bar",
        }
    }

    pub fn has_arms(self) -> bool {
        self.table().arm_weight > 0.0
    }

    pub fn has_back(self) -> bool {
        self.table().back_weight > 0.0
    }

    fn table(self) -> &'static ArchetypeTable {
        match self {
            Archetype::Armchair => &ARMCHAIR,
            Archetype::Dining => &DINING,
            Archetype::Stool => &STOOL,
            Archetype::Sofa => &SOFA,
            Archetype::Bar => &BAR,
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown archetype `{s}`"))
    }
}

/// Nominal proportions of an archetype. Lengths are half-extents in model units.
struct ArchetypeTable {
    seat_height: f64,
    seat_half_width: f64,
    seat_half_depth: f64,
    seat_thickness: f64,
    back_height: f64,
    back_thickness: f64,
    back_recline_deg: f64,
    back_weight: f64,
    arm_height: f64,
    arm_thickness: f64,
    arm_weight: f64,
    leg_radius: f64,
    leg_splay: f64,
    connector_half_width: f64,
    connector_weight: f64,
}

const FLOOR: f64 = -0.95;

const ARMCHAIR: ArchetypeTable = ArchetypeTable {
    seat_height: -0.25,
    seat_half_width: 0.42,
    seat_half_depth: 0.40,
    seat_thickness: 0.08,
    back_height: 0.75,
    back_thickness: 0.08,
    back_recline_deg: 10.0,
    back_weight: 1.0,
    arm_height: 0.28,
    arm_thickness: 0.08,
    arm_weight: 1.0,
    leg_radius: 0.05,
    leg_splay: 0.0,
    connector_half_width: 0.15,
    connector_weight: 0.3,
};

const DINING: ArchetypeTable = ArchetypeTable {
    seat_height: -0.10,
    seat_half_width: 0.32,
    seat_half_depth: 0.32,
    seat_thickness: 0.05,
    back_height: 0.85,
    back_thickness: 0.04,
    back_recline_deg: 4.0,
    back_weight: 1.0,
    arm_height: 0.25,
    arm_thickness: 0.04,
    arm_weight: 0.0,
    leg_radius: 0.035,
    leg_splay: 0.0,
    connector_half_width: 0.25,
    connector_weight: 0.4,
};

const STOOL: ArchetypeTable = ArchetypeTable {
    seat_height: 0.05,
    seat_half_width: 0.28,
    seat_half_depth: 0.28,
    seat_thickness: 0.07,
    back_height: 0.3,
    back_thickness: 0.04,
    back_recline_deg: 0.0,
    back_weight: 0.0,
    arm_height: 0.2,
    arm_thickness: 0.04,
    arm_weight: 0.0,
    leg_radius: 0.04,
    leg_splay: 0.12,
    connector_half_width: 0.22,
    connector_weight: 0.6,
};

const SOFA: ArchetypeTable = ArchetypeTable {
    seat_height: -0.45,
    seat_half_width: 0.85,
    seat_half_depth: 0.45,
    seat_thickness: 0.16,
    back_height: 0.55,
    back_thickness: 0.14,
    back_recline_deg: 14.0,
    back_weight: 1.2,
    arm_height: 0.25,
    arm_thickness: 0.14,
    arm_weight: 1.2,
    leg_radius: 0.05,
    leg_splay: 0.0,
    connector_half_width: 0.5,
    connector_weight: 0.0,
};

const BAR: ArchetypeTable = ArchetypeTable {
    seat_height: 0.40,
    seat_half_width: 0.27,
    seat_half_depth: 0.27,
    seat_thickness: 0.06,
    back_height: 0.38,
    back_thickness: 0.04,
    back_recline_deg: 6.0,
    back_weight: 0.8,
    arm_height: 0.2,
    arm_thickness: 0.04,
    arm_weight: 0.0,
    leg_radius: 0.03,
    leg_splay: 0.10,
    connector_half_width: 0.30,
    connector_weight: 0.8,
};

/// Variance whose iso-0.125 surface sits at the given half-extent.
fn variance_for(half_extent: f64) -> f64 {
    let s = half_extent / (-2.0 * 0.125f64.ln()).sqrt();
    s * s
}

fn blob(center: Vector3<f64>, half: Vector3<f64>, frame: Matrix3<f64>, weight: f64) -> PartLatent {
    PartLatent {
        center: center.map(|c| c.clamp(-1.0, 1.0)),
        eigenvalues: half.map(|h| variance_for(h.max(0.01))),
        eigenvectors: frame,
        blend_weight: weight,
    }
}

/// Deterministic procedural chair for `(archetype, seed)`.
///
/// Variation comes from four shared proportion factors (width, height,
/// back height and member thickness) plus a small per-blob jitter.
pub fn generate_procedural_chair(archetype: Archetype, seed: u64) -> Shape {
    let t = archetype.table();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((archetype as u64 + 1) << 56));
    let mut factor = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        z.clamp(-2.5, 2.5)
    };
    let width = 1.0 + 0.10 * factor();
    let height = 0.06 * factor();
    let back = 1.0 + 0.12 * factor();
    let thick = 1.0 + 0.12 * factor();
    let mut jitter_rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ archetype as u64);
    let mut jitter = move |scale: f64| -> f64 { jitter_rng.random_range(-scale..scale) };

    let seat_y = t.seat_height + height;
    let hw = t.seat_half_width * width;
    let hd = t.seat_half_depth * width.sqrt();
    let id = Matrix3::identity();
    let mut parts = Vec::with_capacity(PART_COUNT);

    // legs 0..4
    let leg_top = seat_y - t.seat_thickness;
    let leg_len = (leg_top - FLOOR).max(0.05);
    let leg_r = t.leg_radius * thick;
    for (sx, sz) in [(-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
        let splay = t.leg_splay;
        let center = Vector3::new(
            sx * (hw * 0.85 + splay * 0.5) + jitter(0.005),
            FLOOR + leg_len * 0.5,
            sz * (hd * 0.85 + splay * 0.5) + jitter(0.005),
        );
        // lean the foot outward
        let lean = (splay / leg_len).atan();
        let frame =
            rotation(&Vector3::z(), -sx * lean * 0.7) * rotation(&Vector3::x(), sz * lean * 0.7);
        parts.push(blob(
            center,
            Vector3::new(leg_r, leg_len * 0.5, leg_r),
            frame,
            1.0,
        ));
    }

    // seat 4..8
    for (sx, sz) in [(-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
        let center = Vector3::new(
            sx * hw * 0.5 + jitter(0.005),
            seat_y,
            sz * hd * 0.5 + jitter(0.005),
        );
        let half = Vector3::new(hw * 0.55, t.seat_thickness * thick, hd * 0.55);
        parts.push(blob(center, half, id, 1.0));
    }

    // back 8..12: lower pair then upper pair
    let bh = t.back_height * back;
    let recline = rotation(&Vector3::x(), -t.back_recline_deg.to_radians());
    for (row, sx) in [(0.0, -1.0), (0.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        let rise = bh * (0.25 + 0.5 * row);
        let lean_back = rise * t.back_recline_deg.to_radians().tan();
        let center = Vector3::new(
            sx * hw * 0.5 + jitter(0.005),
            seat_y + rise,
            -hd - lean_back + jitter(0.005),
        );
        let half = Vector3::new(hw * 0.55, bh * 0.3, t.back_thickness * thick);
        parts.push(blob(center, half, recline, t.back_weight));
    }

    // arms 12..15: left, right, rear bridge
    let arm_y = seat_y + t.arm_height;
    let arm_t = t.arm_thickness * thick;
    for sx in [-1.0, 1.0] {
        let center = Vector3::new(
            sx * (hw + arm_t * 0.5) + jitter(0.005),
            arm_y,
            jitter(0.005),
        );
        let half = Vector3::new(arm_t, t.arm_height * 0.6, hd * 0.9);
        parts.push(blob(center, half, id, t.arm_weight));
    }
    parts.push(blob(
        Vector3::new(0.0, arm_y, -hd + jitter(0.005)),
        Vector3::new(hw * 0.9, arm_t, arm_t),
        id,
        t.arm_weight * 0.5,
    ));

    // connector 15
    let conn_y = FLOOR + leg_len * 0.35;
    parts.push(blob(
        Vector3::new(jitter(0.005), conn_y, jitter(0.005)),
        Vector3::new(
            t.connector_half_width * width,
            leg_r * 0.8,
            t.connector_half_width * width,
        ),
        id,
        t.connector_weight,
    ));

    let shape = Shape::new(
        ShapeId::new(format!("{}-{seed}", archetype.name())),
        Provenance::Procedural,
        parts,
    )
    .expect("procedural chair parts are valid by construction");
    shape.with_label(archetype.name())
}
