use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DnfError, Result};
use crate::geometry::{marching_cubes, Aabb, TriMesh, Vec3, DOMAIN_HALF_EXTENT};

/// Cells per axis when triangulating analytic identities.
pub const IDENTITY_RESOLUTION: usize = 48;
const IDENTITY_BOUNDS: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IdentityKind {
    Sphere { radius: f64 },
    Ellipsoid { radii: [f64; 3] },
    /// Segment along x with half length `half_length`.
    Capsule { radius: f64, half_length: f64 },
    /// Rounded box.
    Box { half: [f64; 3], rounding: f64 },
    /// Capsule body along x with four capsule legs hanging along -y.
    QuadrupedBlob { body_half_length: f64, body_radius: f64, leg_length: f64, leg_radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformationKind {
    /// Shift along +x by `amplitude * t / (T - 1)`.
    Translate,
    /// Rotation about z by an angle proportional to x.
    Bend,
    /// Volume-preserving stretch along y.
    Stretch,
    /// Rotation about y by an angle proportional to y.
    Twist,
    /// Sinusoidal rotation of each leg about its hip; `amplitude` is the peak
    /// leg-tip displacement.
    LegSwing,
}

impl std::str::FromStr for DeformationKind {
    type Err = DnfError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| DnfError::Config(format!("unknown deformation kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub identity_id: String,
    pub identity: IdentityKind,
    pub deformation: DeformationKind,
    pub amplitude: f64,
    pub n_frames: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn sequence_id(&self) -> String {
        format!("{}_{}", self.identity_id, serde_json::to_value(self.deformation).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(DnfError::invalid(format!("spec `{}`: n_frames must be at least 2", self.sequence_id())));
        }
        if !self.amplitude.is_finite() {
            return Err(DnfError::invalid(format!("spec `{}`: amplitude is not finite", self.sequence_id())));
        }
        if self.deformation == DeformationKind::LegSwing && !matches!(self.identity, IdentityKind::QuadrupedBlob { .. }) {
            return Err(DnfError::invalid(format!("spec `{}`: leg_swing needs a quadruped_blob identity", self.sequence_id())));
        }
        if let IdentityKind::QuadrupedBlob { leg_length, leg_radius, .. } = self.identity {
            if self.deformation == DeformationKind::LegSwing && self.amplitude.abs() > 2.0 * (leg_length + leg_radius) {
                return Err(DnfError::invalid(format!("spec `{}`: leg-tip amplitude exceeds the leg span", self.sequence_id())));
            }
        }
        Ok(())
    }

    /// Deformation phase in `[0, 1]` for frame `t` (fractional frames allowed).
    fn progress(&self, t: f64) -> f64 {
        t / (self.n_frames - 1) as f64
    }

    /// One full oscillation over the sequence, zero at frame 0.
    fn oscillation(&self, t: f64) -> f64 {
        (2.0 * PI * self.progress(t)).sin()
    }

    /// Closed-form position of canonical point `p` at (possibly fractional) frame `t`.
    pub fn deform(&self, p: &Vec3, t: f64) -> Vec3 {
        let a = self.amplitude;
        match self.deformation {
            DeformationKind::Translate => p + Vec3::new(a * t / (self.n_frames - 1) as f64, 0.0, 0.0),
            DeformationKind::Bend => {
                let phi = a * self.oscillation(t) * p.x;
                let (s, c) = phi.sin_cos();
                Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
            }
            DeformationKind::Stretch => {
                let k = 1.0 + a * self.oscillation(t);
                let lateral = 1.0 / k.sqrt();
                Vec3::new(p.x * lateral, p.y * k, p.z * lateral)
            }
            DeformationKind::Twist => {
                let phi = a * self.oscillation(t) * p.y;
                let (s, c) = phi.sin_cos();
                Vec3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z)
            }
            DeformationKind::LegSwing => match &self.identity {
                IdentityKind::QuadrupedBlob { .. } => {
                    let q = Quadruped::new(&self.identity);
                    let leg = q.leg_of(p);
                    let w = q.leg_weight(p);
                    if w == 0.0 {
                        return *p;
                    }
                    let theta_max = 2.0 * (a / (2.0 * q.lever())).asin();
                    let theta = w * theta_max * (2.0 * PI * self.progress(t) + q.phase(leg)).sin();
                    let theta = theta - w * theta_max * q.phase(leg).sin();
                    let pivot = q.hip(leg);
                    let r = Rotation3::from_axis_angle(&Unit::new_unchecked(Vec3::z()), theta);
                    pivot + r * (p - pivot)
                }
                _ => *p,
            },
        }
    }

    /// Canonical (frame 0) mesh.
    pub fn canonical_mesh(&self) -> Result<TriMesh> {
        let identity = self.identity.jittered(self.seed);
        match identity {
            IdentityKind::Sphere { radius } => Ok(TriMesh::icosphere(radius, 4)),
            other => {
                let bounds = Aabb::cube(IDENTITY_BOUNDS);
                marching_cubes(|pts| Ok(pts.iter().map(|p| other.sdf(p)).collect()), IDENTITY_RESOLUTION, &bounds)
            }
        }
    }

    /// All frames; errors if any vertex leaves the `[-1, 1]^3` box.
    pub fn frames(&self) -> Result<Vec<TriMesh>> {
        self.validate()?;
        let canonical = self.canonical_mesh()?;
        let identity = self.identity.jittered(self.seed);
        let spec = SyntheticSpec { identity, ..self.clone() };
        let mut frames = Vec::with_capacity(self.n_frames);
        for t in 0..self.n_frames {
            let vertices: Vec<Vec3> = if t == 0 {
                canonical.vertices.clone()
            } else {
                canonical.vertices.iter().map(|v| spec.deform(v, t as f64)).collect()
            };
            if let Some(v) = vertices.iter().find(|v| v.amax() > DOMAIN_HALF_EXTENT) {
                return Err(DnfError::invalid(format!(
                    "spec `{}`: frame {t} leaves the [-1, 1]^3 box (vertex at {:.3}, {:.3}, {:.3})",
                    self.sequence_id(),
                    v.x,
                    v.y,
                    v.z
                )));
            }
            frames.push(TriMesh { vertices, triangles: canonical.triangles.clone() });
        }
        Ok(frames)
    }

    /// A copy with its identity parameters jittered by the seed, as used for the meshes.
    pub fn resolved(&self) -> SyntheticSpec {
        SyntheticSpec { identity: self.identity.jittered(self.seed), ..self.clone() }
    }
}

fn capsule_sdf(p: &Vec3, a: &Vec3, b: &Vec3, r: f64) -> f64 {
    let ab = b - a;
    let h = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - a - ab * h).norm() - r
}

impl IdentityKind {
    /// Analytic signed distance (exact for sphere, capsule and box; a bound
    /// for the ellipsoid; a union for the quadruped).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            IdentityKind::Sphere { radius } => p.norm() - radius,
            IdentityKind::Ellipsoid { radii } => {
                let r = Vec3::from(*radii);
                let k0 = p.component_div(&r).norm();
                let k1 = p.component_div(&r.component_mul(&r)).norm();
                if k1 == 0.0 {
                    -r.min()
                } else {
                    k0 * (k0 - 1.0) / k1
                }
            }
            IdentityKind::Capsule { radius, half_length } => {
                capsule_sdf(p, &Vec3::new(-half_length, 0.0, 0.0), &Vec3::new(*half_length, 0.0, 0.0), *radius)
            }
            IdentityKind::Box { half, rounding } => {
                let q = p.abs() - Vec3::from(*half) + Vec3::repeat(*rounding);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0) - rounding
            }
            IdentityKind::QuadrupedBlob { .. } => Quadruped::new(self).sdf(p),
        }
    }

    /// Scales every size parameter by a seeded factor in `[0.95, 1.05]`.
    pub fn jittered(&self, seed: u64) -> IdentityKind {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut j = || rng.random_range(0.95..1.05);
        match *self {
            IdentityKind::Sphere { radius } => IdentityKind::Sphere { radius: radius * j() },
            IdentityKind::Ellipsoid { radii } => IdentityKind::Ellipsoid { radii: [radii[0] * j(), radii[1] * j(), radii[2] * j()] },
            IdentityKind::Capsule { radius, half_length } => IdentityKind::Capsule { radius: radius * j(), half_length: half_length * j() },
            IdentityKind::Box { half, rounding } => IdentityKind::Box { half: [half[0] * j(), half[1] * j(), half[2] * j()], rounding },
            IdentityKind::QuadrupedBlob { body_half_length, body_radius, leg_length, leg_radius } => IdentityKind::QuadrupedBlob {
                body_half_length: body_half_length * j(),
                body_radius: body_radius * j(),
                leg_length: leg_length * j(),
                leg_radius,
            },
        }
    }
}

/// Quadruped layout: body axis at height `body_y`, hips on the body's
/// underside at `x = ±0.7 L`, `z = ±0.6 R`.
pub(crate) struct Quadruped {
    half: f64,
    body_r: f64,
    leg_len: f64,
    leg_r: f64,
}

const BODY_Y: f64 = 0.15;
const LEG_BLEND: f64 = 0.06;

impl Quadruped {
    fn new(kind: &IdentityKind) -> Self {
        match *kind {
            IdentityKind::QuadrupedBlob { body_half_length, body_radius, leg_length, leg_radius } => {
                Self { half: body_half_length, body_r: body_radius, leg_len: leg_length, leg_r: leg_radius }
            }
            _ => unreachable!("quadruped layout of a non-quadruped identity"),
        }
    }

    fn hip_xz(&self, leg: usize) -> (f64, f64) {
        let sx = if leg & 1 == 0 { -1.0 } else { 1.0 };
        let sz = if leg & 2 == 0 { -1.0 } else { 1.0 };
        (sx * 0.7 * self.half, sz * 0.6 * self.body_r)
    }

    /// Rotation pivot: hip on the underside of the body.
    pub(crate) fn hip(&self, leg: usize) -> Vec3 {
        let (x, z) = self.hip_xz(leg);
        Vec3::new(x, BODY_Y - self.body_r, z)
    }

    /// Lowest point of the leg.
    pub(crate) fn tip(&self, leg: usize) -> Vec3 {
        let (x, z) = self.hip_xz(leg);
        Vec3::new(x, BODY_Y - self.leg_len - self.leg_r, z)
    }

    /// Hip to tip distance.
    fn lever(&self) -> f64 {
        self.hip(0).y - self.tip(0).y
    }

    /// Diagonal legs swing in phase.
    fn phase(&self, leg: usize) -> f64 {
        if leg == 0 || leg == 3 {
            0.0
        } else {
            PI
        }
    }

    fn leg_of(&self, p: &Vec3) -> usize {
        usize::from(p.x >= 0.0) | (usize::from(p.z >= 0.0) << 1)
    }

    /// 0 on the body, 1 below the hip blend band, smooth in between.
    fn leg_weight(&self, p: &Vec3) -> f64 {
        let hip_y = BODY_Y - self.body_r;
        let s = ((hip_y + LEG_BLEND * 0.5 - p.y) / LEG_BLEND).clamp(0.0, 1.0);
        s * s * (3.0 - 2.0 * s)
    }

    fn sdf(&self, p: &Vec3) -> f64 {
        let body = capsule_sdf(p, &Vec3::new(-self.half, BODY_Y, 0.0), &Vec3::new(self.half, BODY_Y, 0.0), self.body_r);
        (0..4).fold(body, |d, leg| {
            let (x, z) = self.hip_xz(leg);
            let top = Vec3::new(x, BODY_Y, z);
            let foot = Vec3::new(x, BODY_Y - self.leg_len, z);
            d.min(capsule_sdf(p, &top, &foot, self.leg_r))
        })
    }
}

/// Peak leg-tip displacement over a continuous oscillation, sampled finely.
pub fn leg_tip_amplitude(spec: &SyntheticSpec) -> Result<f64> {
    let spec = spec.resolved();
    let q = match &spec.identity {
        k @ IdentityKind::QuadrupedBlob { .. } => Quadruped::new(k),
        _ => return Err(DnfError::invalid("leg tips only exist on quadruped identities")),
    };
    let mut best: f64 = 0.0;
    let steps = 20_000;
    for leg in 0..4 {
        let tip = q.tip(leg);
        for i in 0..=steps {
            let t = (spec.n_frames - 1) as f64 * i as f64 / steps as f64;
            best = best.max((spec.deform(&tip, t) - tip).norm());
        }
    }
    Ok(best)
}

/// Default desk corpus: eight identities with three motions each, 16 frames.
pub fn desk_corpus(seed: u64) -> Vec<SyntheticSpec> {
    use DeformationKind::*;
    let quad = IdentityKind::QuadrupedBlob { body_half_length: 0.35, body_radius: 0.17, leg_length: 0.4, leg_radius: 0.075 };
    let identities: Vec<(&str, IdentityKind, [(DeformationKind, f64); 3])> = vec![
        ("sphere", IdentityKind::Sphere { radius: 0.45 }, [(Translate, 0.3), (Stretch, 0.3), (Bend, 0.8)]),
        ("ellipsoid_a", IdentityKind::Ellipsoid { radii: [0.55, 0.3, 0.35] }, [(Bend, 0.9), (Twist, 1.2), (Stretch, 0.25)]),
        ("ellipsoid_b", IdentityKind::Ellipsoid { radii: [0.35, 0.5, 0.3] }, [(Twist, 1.0), (Translate, -0.3), (Bend, 0.7)]),
        ("capsule_a", IdentityKind::Capsule { radius: 0.22, half_length: 0.35 }, [(Bend, 1.0), (Twist, 1.5), (Translate, 0.25)]),
        ("capsule_b", IdentityKind::Capsule { radius: 0.3, half_length: 0.2 }, [(Stretch, 0.3), (Bend, 0.8), (Twist, 1.2)]),
        ("box_a", IdentityKind::Box { half: [0.4, 0.3, 0.35], rounding: 0.05 }, [(Twist, 0.8), (Stretch, 0.2), (Translate, 0.2)]),
        ("box_b", IdentityKind::Box { half: [0.3, 0.45, 0.3], rounding: 0.08 }, [(Bend, 0.6), (Twist, 0.9), (Stretch, 0.25)]),
        ("quadruped", quad, [(LegSwing, 0.15), (Translate, 0.25), (Twist, 0.8)]),
    ];
    let mut specs = Vec::new();
    for (i, (name, identity, motions)) in identities.into_iter().enumerate() {
        for (deformation, amplitude) in motions {
            specs.push(SyntheticSpec {
                identity_id: name.to_string(),
                identity: identity.clone(),
                deformation,
                amplitude,
                n_frames: 16,
                seed: seed.wrapping_add(i as u64),
            });
        }
    }
    specs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(identity: IdentityKind, deformation: DeformationKind, amplitude: f64) -> SyntheticSpec {
        SyntheticSpec { identity_id: "x".into(), identity, deformation, amplitude, n_frames: 16, seed: 0 }
    }

    #[test]
    fn translate_frames_are_exact() {
        let s = spec(IdentityKind::Sphere { radius: 0.4 }, DeformationKind::Translate, 0.1);
        let frames = s.frames().unwrap();
        assert_eq!(frames.len(), 16);
        for (t, f) in frames.iter().enumerate() {
            for (v, c) in f.vertices.iter().zip(&frames[0].vertices) {
                assert_eq!(*v, c + Vec3::new(0.1 * t as f64 / 15.0, 0.0, 0.0));
            }
            assert!(f.same_topology(&frames[0]));
        }
    }

    #[test]
    fn every_family_is_identity_at_frame_zero() {
        let q = IdentityKind::QuadrupedBlob { body_half_length: 0.35, body_radius: 0.17, leg_length: 0.4, leg_radius: 0.075 };
        let p = Vec3::new(0.2, -0.3, 0.1);
        for d in [DeformationKind::Translate, DeformationKind::Bend, DeformationKind::Stretch, DeformationKind::Twist, DeformationKind::LegSwing] {
            let s = spec(q.clone(), d, 0.3);
            assert!((s.deform(&p, 0.0) - p).norm() < 1e-15, "{d:?}");
        }
    }

    #[test]
    fn leg_swing_tip_amplitude_matches_config() {
        let q = IdentityKind::QuadrupedBlob { body_half_length: 0.35, body_radius: 0.17, leg_length: 0.4, leg_radius: 0.075 };
        for amp in [0.05, 0.15, 0.3] {
            let s = spec(q.clone(), DeformationKind::LegSwing, amp);
            let measured = leg_tip_amplitude(&s).unwrap();
            assert!((measured - amp).abs() < 1e-6, "{measured} vs {amp}");
        }
        let bad = spec(IdentityKind::Sphere { radius: 0.3 }, DeformationKind::LegSwing, 0.1);
        assert!(bad.frames().is_err());
    }

    #[test]
    fn analytic_sdfs_are_consistent() {
        let c = IdentityKind::Capsule { radius: 0.2, half_length: 0.3 };
        assert!((c.sdf(&Vec3::new(0.0, 0.5, 0.0)) - 0.3).abs() < 1e-15);
        assert!((c.sdf(&Vec3::new(0.6, 0.0, 0.0)) - 0.1).abs() < 1e-15);
        let b = IdentityKind::Box { half: [0.4, 0.3, 0.2], rounding: 0.0 };
        assert!((b.sdf(&Vec3::new(0.0, 0.0, 0.5)) - 0.3).abs() < 1e-15);
        assert!((b.sdf(&Vec3::zeros()) + 0.2).abs() < 1e-15);
        let e = IdentityKind::Ellipsoid { radii: [0.5, 0.5, 0.5] };
        assert!((e.sdf(&Vec3::new(0.0, 0.8, 0.0)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn out_of_box_deformation_names_the_spec() {
        let mut s = spec(IdentityKind::Sphere { radius: 0.45 }, DeformationKind::Translate, 1.0);
        s.identity_id = "runaway".into();
        let err = s.frames().unwrap_err().to_string();
        assert!(err.contains("runaway_translate"), "{err}");
        assert!("wobble".parse::<DeformationKind>().is_err());
        assert_eq!("leg_swing".parse::<DeformationKind>().unwrap(), DeformationKind::LegSwing);
    }

    #[test]
    fn desk_corpus_stays_in_the_box() {
        let specs = desk_corpus(0);
        assert_eq!(specs.len(), 24);
        let ids: std::collections::BTreeSet<_> = specs.iter().map(|s| s.identity_id.clone()).collect();
        assert_eq!(ids.len(), 8);
        for s in &specs {
            let frames = s.frames().unwrap();
            assert!(frames[0].is_watertight(), "{}", s.sequence_id());
            assert!(frames[0].vertices.len() > 500);
        }
    }
}
