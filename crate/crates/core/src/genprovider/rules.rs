//! Adjective vocabulary and the deterministic transform engine.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GenError;
use crate::blobshape::{nearest_orthonormal, rotation, Shape, PART_COUNT};

/// Morphological feature axes: height, width, openness, roundness, tilt, volume.
pub const FEATURE_DIM: usize = 6;
pub type Features = [f64; FEATURE_DIM];

/// Largest magnitude accepted by [`apply_adjective`].
pub const MAX_MAGNITUDE: f64 = 2.0;
const MIN_EIGENVALUE: f64 = 1e-5;
const MAX_EIGENVALUE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Adjective {
    Open,
    Wide,
    Thin,
    Round,
    Angular,
    High,
    Low,
    TiltForward,
    Incline,
    Curved,
    Voluminous,
    Sleek,
    Geometric,
    Fluid,
    Faceted,
    Organic,
}

/// One primitive parameter edit, scaled by the magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    /// Add `k·m` to the vertical coordinate.
    Lift(f64),
    /// Move away from the vertical mid-plane by `k·m`.
    Spread(f64),
    /// Scale the two most horizontal eigenvalues by `1 + k·m`, or its inverse for `k < 0`.
    Widen(f64),
    /// Scale every eigenvalue likewise.
    Inflate(f64),
    /// Rotate about the lateral axis by `k·m` degrees; positive leans forward.
    Pitch(f64),
    /// Raise eigenvalue ratios to the power `1 − k·m` around their geometric mean.
    Isotropy(f64),
}

struct Rule {
    ops: &'static [Op],
    features: Features,
}

impl Adjective {
    /// Canonical vocabulary order.
    pub const ALL: [Adjective; 16] = [
        Adjective::Open,
        Adjective::Wide,
        Adjective::Thin,
        Adjective::Round,
        Adjective::Angular,
        Adjective::High,
        Adjective::Low,
        Adjective::TiltForward,
        Adjective::Incline,
        Adjective::Curved,
        Adjective::Voluminous,
        Adjective::Sleek,
        Adjective::Geometric,
        Adjective::Fluid,
        Adjective::Faceted,
        Adjective::Organic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Adjective::Open => "open",
            Adjective::Wide => "wide",
            Adjective::Thin => "thin",
            Adjective::Round => "round",
            Adjective::Angular => "angular",
            Adjective::High => "high",
            Adjective::Low => "low",
            Adjective::TiltForward => "tilt-forward",
            Adjective::Incline => "incline",
            Adjective::Curved => "curved",
            Adjective::Voluminous => "voluminous",
            Adjective::Sleek => "sleek",
            Adjective::Geometric => "geometric",
            Adjective::Fluid => "fluid",
            Adjective::Faceted => "faceted",
            Adjective::Organic => "organic",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn features(self) -> Features {
        self.rule().features
    }

    fn rule(self) -> &'static Rule {
        use Op::*;
        macro_rules! rule {
            ($ops:expr, $f:expr) => {{
                const R: Rule = Rule {
                    ops: $ops,
                    features: $f,
                };
                &R
            }};
        }
        match self {
            Adjective::Open => rule!(&[Spread(0.25)], [0.0, 0.3, 1.0, 0.0, 0.0, 0.0]),
            Adjective::Wide => rule!(&[Widen(1.0)], [0.0, 1.0, 0.3, 0.0, 0.0, 0.3]),
            Adjective::Thin => rule!(&[Widen(-1.0)], [0.0, -1.0, -0.2, 0.0, 0.0, -0.4]),
            Adjective::Round => rule!(&[Isotropy(0.5)], [0.0, 0.0, 0.0, 1.0, 0.0, 0.1]),
            Adjective::Angular => rule!(&[Isotropy(-0.5)], [0.0, 0.0, 0.0, -1.0, 0.0, -0.1]),
            Adjective::High => rule!(&[Lift(0.3)], [1.0, 0.0, 0.0, 0.0, 0.0, 0.2]),
            Adjective::Low => rule!(&[Lift(-0.3)], [-1.0, 0.0, 0.0, 0.0, 0.0, -0.2]),
            Adjective::TiltForward => rule!(&[Pitch(20.0)], [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            Adjective::Incline => rule!(&[Pitch(-20.0)], [0.1, 0.0, 0.2, 0.0, -1.0, 0.0]),
            Adjective::Curved => rule!(
                &[Isotropy(0.3), Pitch(-8.0)],
                [0.0, 0.0, 0.1, 0.6, -0.4, 0.0]
            ),
            Adjective::Voluminous => rule!(&[Inflate(0.6)], [0.1, 0.4, 0.0, 0.3, 0.0, 1.0]),
            Adjective::Sleek => rule!(
                &[Widen(-0.5), Isotropy(-0.3)],
                [0.2, -0.5, 0.0, -0.3, 0.0, -0.8]
            ),
            Adjective::Geometric => rule!(
                &[Isotropy(-0.6), Widen(0.2)],
                [0.0, 0.2, 0.0, -0.8, 0.0, 0.2]
            ),
            Adjective::Fluid => rule!(
                &[Isotropy(0.6), Pitch(-6.0)],
                [0.0, 0.0, 0.3, 0.8, -0.2, 0.0]
            ),
            Adjective::Faceted => rule!(
                &[Isotropy(-0.8), Widen(-0.2)],
                [0.0, -0.2, 0.0, -0.9, 0.0, -0.3]
            ),
            Adjective::Organic => rule!(
                &[Isotropy(0.5), Inflate(0.3)],
                [0.0, 0.1, 0.2, 0.6, 0.0, 0.6]
            ),
        }
    }
}

impl fmt::Display for Adjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Adjective {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '_'], "-");
        Adjective::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| GenError::UnknownAdjective(s.to_string()))
    }
}

impl From<Adjective> for String {
    fn from(a: Adjective) -> String {
        a.name().to_string()
    }
}

impl TryFrom<String> for Adjective {
    type Error = GenError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Check a part selection: non-empty, in range, no repeats.
pub fn validate_parts(parts: &[usize]) -> Result<(), GenError> {
    if parts.is_empty() {
        return Err(GenError::NoParts);
    }
    let mut seen = [false; PART_COUNT];
    for &p in parts {
        if p >= PART_COUNT {
            return Err(GenError::PartIndex(p));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(GenError::DuplicatePart(p));
        }
    }
    Ok(())
}

/// Apply one adjective to the selected parts. Unselected parts are untouched.
pub fn apply_adjective(
    shape: &Shape,
    parts: &[usize],
    adjective: Adjective,
    magnitude: f64,
) -> Result<Shape, GenError> {
    validate_parts(parts)?;
    if !(0.0..=MAX_MAGNITUDE).contains(&magnitude) {
        return Err(GenError::Magnitude(magnitude));
    }
    let mut out = shape.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    let mut edited: Vec<_> = parts.iter().map(|&i| shape.parts()[i].clone()).collect();
    for op in adjective.rule().ops {
        apply_op(&mut edited, *op, magnitude);
    }
    for (&i, mut part) in parts.iter().zip(edited) {
        part.center = part.center.map(|c| c.clamp(-1.0, 1.0));
        part.eigenvalues = part
            .eigenvalues
            .map(|l| l.clamp(MIN_EIGENVALUE, MAX_EIGENVALUE));
        out.set_part(i, part)?;
    }
    Ok(out)
}

fn scale_factor(k: f64, m: f64) -> f64 {
    if k >= 0.0 {
        1.0 + k * m
    } else {
        1.0 / (1.0 - k * m)
    }
}

fn apply_op(parts: &mut [crate::blobshape::PartLatent], op: Op, m: f64) {
    match op {
        Op::Lift(k) => parts.iter_mut().for_each(|p| p.center.y += k * m),
        Op::Spread(k) => {
            for p in parts.iter_mut() {
                if p.center.x != 0.0 {
                    p.center.x += k * m * p.center.x.signum();
                }
            }
        }
        Op::Widen(k) => {
            let f = scale_factor(k, m);
            for p in parts.iter_mut() {
                let mut axes = [0usize, 1, 2];
                // most horizontal = smallest vertical component
                axes.sort_by(|&a, &b| {
                    let ya = p.eigenvectors[(1, a)].abs();
                    let yb = p.eigenvectors[(1, b)].abs();
                    ya.partial_cmp(&yb).unwrap().then(a.cmp(&b))
                });
                p.eigenvalues[axes[0]] *= f;
                p.eigenvalues[axes[1]] *= f;
            }
        }
        Op::Inflate(k) => {
            let f = scale_factor(k, m);
            parts.iter_mut().for_each(|p| p.eigenvalues *= f);
        }
        Op::Pitch(deg) => {
            let r = rotation(&Vector3::x(), (deg * m).to_radians());
            let active: Vec<_> = parts.iter().filter(|p| p.blend_weight > 0.0).collect();
            let pool = if active.is_empty() {
                parts.iter().collect()
            } else {
                active
            };
            let base_y = pool
                .iter()
                .map(|p| p.center.y)
                .fold(f64::INFINITY, f64::min);
            let mean_z = pool.iter().map(|p| p.center.z).sum::<f64>() / pool.len() as f64;
            for p in parts.iter_mut() {
                let pivot = Vector3::new(p.center.x, base_y, mean_z);
                p.center = pivot + r * (p.center - pivot);
                p.eigenvectors = nearest_orthonormal(&(r * p.eigenvectors));
            }
        }
        Op::Isotropy(k) => {
            let exponent = (1.0 - k * m).max(0.0);
            for p in parts.iter_mut() {
                let g = p.eigenvalues.iter().map(|l| l.ln()).sum::<f64>() / 3.0;
                p.eigenvalues = p.eigenvalues.map(|l| (g + exponent * (l.ln() - g)).exp());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobshape::procedural::{generate_procedural_chair, Archetype};
    use crate::blobshape::PartGroup;
    use proptest::prelude::*;

    fn chair() -> Shape {
        generate_procedural_chair(Archetype::Armchair, 3)
    }

    fn group(g: PartGroup) -> Vec<usize> {
        g.indices().collect()
    }

    #[test]
    fn vocabulary_round_trips_names() {
        assert_eq!(Adjective::ALL.len(), 16);
        for (i, a) in Adjective::ALL.into_iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(a.name().parse::<Adjective>().unwrap(), a);
        }
        assert_eq!(
            "tilt forward".parse::<Adjective>().unwrap(),
            Adjective::TiltForward
        );
        assert!("sparkly".parse::<Adjective>().is_err());
    }

    #[test]
    fn high_on_back_lifts_by_015() {
        let base = chair();
        let back = group(PartGroup::Back);
        let out = apply_adjective(&base, &back, Adjective::High, 0.5).unwrap();
        for i in 0..16 {
            let (a, b) = (&base.parts()[i], &out.parts()[i]);
            if back.contains(&i) {
                assert!((b.center.y - a.center.y - 0.15).abs() < 1e-12);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let base = chair();
        for a in Adjective::ALL {
            assert_eq!(apply_adjective(&base, &[4, 9, 12], a, 0.0).unwrap(), base);
        }
    }

    #[test]
    fn open_moves_arms_symmetrically() {
        let base = chair();
        let out = apply_adjective(&base, &[12, 13], Adjective::Open, 0.8).unwrap();
        let dl = out.parts()[12].center.x - base.parts()[12].center.x;
        let dr = out.parts()[13].center.x - base.parts()[13].center.x;
        assert!(dl < 0.0 && dr > 0.0);
        assert!((dl + dr).abs() < 1e-12);
        assert!((dr - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tilt_forward_leans_back_toward_front() {
        let base = chair();
        let back = group(PartGroup::Back);
        let out = apply_adjective(&base, &back, Adjective::TiltForward, 1.0).unwrap();
        // the upper back row moves toward +z relative to its original position
        assert!(out.parts()[10].center.z > base.parts()[10].center.z);
        let inc = apply_adjective(&base, &back, Adjective::Incline, 1.0).unwrap();
        assert!(inc.parts()[10].center.z < base.parts()[10].center.z);
    }

    #[test]
    fn round_and_angular_move_ratios() {
        let base = chair();
        let ratio = |s: &Shape| {
            let l = s.parts()[4].eigenvalues;
            l.max() / l.min()
        };
        let r = apply_adjective(&base, &[4], Adjective::Round, 1.0).unwrap();
        let a = apply_adjective(&base, &[4], Adjective::Angular, 1.0).unwrap();
        assert!(ratio(&r) < ratio(&base) && ratio(&base) < ratio(&a));
    }

    #[test]
    fn rejects_bad_requests() {
        let base = chair();
        assert!(matches!(
            apply_adjective(&base, &[], Adjective::High, 0.5),
            Err(GenError::NoParts)
        ));
        assert!(matches!(
            apply_adjective(&base, &[16], Adjective::High, 0.5),
            Err(GenError::PartIndex(16))
        ));
        assert!(matches!(
            apply_adjective(&base, &[1, 1], Adjective::High, 0.5),
            Err(GenError::DuplicatePart(1))
        ));
        assert!(matches!(
            apply_adjective(&base, &[1], Adjective::High, 3.0),
            Err(GenError::Magnitude(_))
        ));
    }

    proptest! {
        #[test]
        fn unselected_parts_are_bit_identical(
            arch in 0usize..5, seed in 0u64..50, adj in 0usize..16,
            m in 0.0f64..2.0, mask in 1u32..(1 << 16)
        ) {
            let base = generate_procedural_chair(Archetype::ALL[arch], seed);
            let parts: Vec<usize> = (0..16).filter(|i| mask & (1 << i) != 0).collect();
            let out = apply_adjective(&base, &parts, Adjective::ALL[adj], m).unwrap();
            prop_assert!(out.validate().is_ok());
            for i in (0..16).filter(|i| !parts.contains(i)) {
                let a: Vec<u64> = base.flatten()[i * 16..(i + 1) * 16].iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = out.flatten()[i * 16..(i + 1) * 16].iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn wide_then_thin_restores_eigenvalues(arch in 0usize..5, seed in 0u64..50, m in 0.0f64..1.0) {
            let base = generate_procedural_chair(Archetype::ALL[arch], seed);
            let parts: Vec<usize> = (0..16).collect();
            let wide = apply_adjective(&base, &parts, Adjective::Wide, m).unwrap();
            let back = apply_adjective(&wide, &parts, Adjective::Thin, m).unwrap();
            for (a, b) in base.parts().iter().zip(back.parts()) {
                for k in 0..3 {
                    prop_assert!((b.eigenvalues[k] / a.eigenvalues[k] - 1.0).abs() < 0.1);
                }
            }
        }
    }
}
