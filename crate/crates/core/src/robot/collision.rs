//! Analytic distances between the robot's collision primitives.
//!
//! Spheres and capsules are segments with a radius (a sphere is a
//! degenerate segment); cylinders are treated as capsules for distance
//! queries. Pair distance is the segment-segment distance minus both
//! radii, negative when penetrating.

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{limb_frames, RobotModel, WholeBodyState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimitiveShape {
    Sphere,
    Capsule,
    Cylinder,
}

/// A collision body attached to the base (`limb == None`) or to a limb
/// chain frame. Frame index 0 is the mount frame, frame `i` the frame
/// after joint `i - 1`; `a` and `b` are local segment endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollisionPrimitive {
    pub shape: PrimitiveShape,
    pub radius: f64,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub limb: Option<String>,
    pub frame: usize,
}

impl CollisionPrimitive {
    pub fn base_capsule(a: [f64; 3], b: [f64; 3], radius: f64) -> Self {
        Self {
            shape: PrimitiveShape::Capsule,
            radius,
            a,
            b,
            limb: None,
            frame: 0,
        }
    }

    pub fn limb_capsule(limb: &str, frame: usize, a: [f64; 3], b: [f64; 3], radius: f64) -> Self {
        Self {
            shape: PrimitiveShape::Capsule,
            radius,
            a,
            b,
            limb: Some(limb.to_string()),
            frame,
        }
    }

    pub fn limb_sphere(limb: &str, frame: usize, center: [f64; 3], radius: f64) -> Self {
        Self {
            shape: PrimitiveShape::Sphere,
            radius,
            a: center,
            b: center,
            limb: Some(limb.to_string()),
            frame,
        }
    }
}

/// A primitive placed in the world: segment endpoints plus radius.
#[derive(Debug, Clone, Copy)]
pub struct PlacedPrimitive {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

impl PlacedPrimitive {
    /// Lowest z reached by the body surface.
    pub fn lowest_z(&self) -> f64 {
        self.a.z.min(self.b.z) - self.radius
    }
}

/// Places one primitive given the base pose and (for limb bodies) the
/// limb's chain frames in base coordinates.
pub fn place_primitive(
    prim: &CollisionPrimitive,
    base_pose: &Isometry3<f64>,
    frames: Option<&[Isometry3<f64>]>,
) -> PlacedPrimitive {
    let local_to_base = match (prim.limb.as_ref(), frames) {
        (Some(_), Some(frames)) => frames[prim.frame.min(frames.len() - 1)],
        _ => Isometry3::identity(),
    };
    let t = base_pose * local_to_base;
    PlacedPrimitive {
        a: t * Point3::from(Vector3::from(prim.a)),
        b: t * Point3::from(Vector3::from(prim.b)),
        radius: prim.radius,
    }
}

/// Places every primitive of one limb.
pub fn place_limb_primitives(
    model: &RobotModel,
    limb_name: &str,
    q: &[f64],
    base_pose: &Isometry3<f64>,
) -> Vec<PlacedPrimitive> {
    let (_, limb) = model.limb(limb_name).expect("limb exists");
    let frames = limb_frames(limb, q);
    model
        .collision_bodies
        .iter()
        .filter(|p| p.limb.as_deref() == Some(limb_name))
        .map(|p| place_primitive(p, base_pose, Some(&frames)))
        .collect()
}

/// Places the base-attached primitives.
pub fn place_base_primitives(model: &RobotModel, base_pose: &Isometry3<f64>) -> Vec<PlacedPrimitive> {
    model
        .collision_bodies
        .iter()
        .filter(|p| p.limb.is_none())
        .map(|p| place_primitive(p, base_pose, None))
        .collect()
}

/// Surface distance between two placed primitives; negative when they
/// penetrate.
pub fn pair_distance(a: &PlacedPrimitive, b: &PlacedPrimitive) -> f64 {
    segment_segment_distance(a.a, a.b, b.a, b.b) - a.radius - b.radius
}

fn adjacent(a: &CollisionPrimitive, b: &CollisionPrimitive) -> bool {
    match (&a.limb, &b.limb) {
        (None, None) => true, // base bodies never move relative to each other
        (Some(la), Some(lb)) if la == lb => a.frame.abs_diff(b.frame) <= 1,
        // a limb's first moving link is permanently close to the base it
        // mounts on; treat that pair like a parent-child link pair
        (None, Some(_)) => b.frame <= 2,
        (Some(_), None) => a.frame <= 2,
        _ => false,
    }
}

/// Minimum surface distance over all non-adjacent primitive pairs,
/// with the indices of the achieving pair.
pub fn min_pair_distance(model: &RobotModel, state: &WholeBodyState) -> (f64, (usize, usize)) {
    let placed: Vec<PlacedPrimitive> = {
        let frame_cache: Vec<Option<Vec<Isometry3<f64>>>> = model
            .limbs
            .iter()
            .enumerate()
            .map(|(i, limb)| Some(limb_frames(limb, state.limb_q(model, i))))
            .collect();
        model
            .collision_bodies
            .iter()
            .map(|p| {
                let frames = p.limb.as_ref().and_then(|name| {
                    model
                        .limbs
                        .iter()
                        .position(|l| &l.name == name)
                        .and_then(|i| frame_cache[i].as_deref())
                });
                place_primitive(p, &state.base_pose, frames)
            })
            .collect()
    };
    let mut best = (f64::INFINITY, (0, 0));
    for i in 0..placed.len() {
        for j in i + 1..placed.len() {
            if adjacent(&model.collision_bodies[i], &model.collision_bodies[j]) {
                continue;
            }
            let d = pair_distance(&placed[i], &placed[j]);
            if d < best.0 {
                best = (d, (i, j));
            }
        }
    }
    best
}

/// Closest distance between segments [p1, q1] and [p2, q2].
pub fn segment_segment_distance(
    p1: Point3<f64>,
    q1: Point3<f64>,
    p2: Point3<f64>,
    q2: Point3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-15 && e <= 1e-15 {
        return r.norm();
    }
    if a <= 1e-15 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-15 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s_ = if denom > 1e-15 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_ = (b * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Standalone sphere helper used in tests and terrain checks.
pub fn sphere_at(center: Point3<f64>, radius: f64) -> PlacedPrimitive {
    PlacedPrimitive {
        a: center,
        b: center,
        radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_sphere_distance() {
        let a = sphere_at(Point3::new(0.0, 0.0, 0.0), 1.0);
        let b = sphere_at(Point3::new(3.0, 0.0, 0.0), 1.0);
        assert_abs_diff_eq!(pair_distance(&a, &b), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlapping_spheres_negative() {
        let a = sphere_at(Point3::new(0.0, 0.0, 0.0), 1.0);
        let b = sphere_at(Point3::new(1.5, 0.0, 0.0), 1.0);
        assert!(pair_distance(&a, &b) < 0.0);
    }

    #[test]
    fn capsule_capsule_crossing() {
        let a = PlacedPrimitive {
            a: Point3::new(-1.0, 0.0, 0.0),
            b: Point3::new(1.0, 0.0, 0.0),
            radius: 0.1,
        };
        let b = PlacedPrimitive {
            a: Point3::new(0.0, -1.0, 0.5),
            b: Point3::new(0.0, 1.0, 0.5),
            radius: 0.1,
        };
        assert_abs_diff_eq!(pair_distance(&a, &b), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn distance_within_monte_carlo_bracket() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..40 {
            let seg = |rng: &mut ChaCha8Rng| PlacedPrimitive {
                a: Point3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
                b: Point3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
                radius: rng.gen_range(0.05..0.3),
            };
            let pa = seg(&mut rng);
            let pb = seg(&mut rng);
            let d = pair_distance(&pa, &pb);
            if d <= 0.0 {
                continue;
            }
            // sample points on each surface; their minimum pairwise
            // distance upper-bounds the true surface distance
            let surface = |p: &PlacedPrimitive, rng: &mut ChaCha8Rng| {
                let t: f64 = rng.gen_range(0.0..1.0);
                let axis = p.a + (p.b - p.a) * t;
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                axis + dir * p.radius
            };
            let mut sampled = f64::INFINITY;
            for _ in 0..400 {
                let x = surface(&pa, &mut rng);
                let y = surface(&pb, &mut rng);
                sampled = sampled.min((x - y).norm());
            }
            assert!(d <= sampled + 1e-9, "analytic {d} above sampled bound {sampled}");
            assert!(d >= sampled - 0.5, "analytic {d} far below sampled bound {sampled}");
        }
    }

    #[test]
    fn default_model_default_pose_collision_free() {
        let model = super::super::default_model();
        let q: Vec<f64> = model
            .limbs
            .iter()
            .flat_map(|l| l.default_config.iter().copied())
            .collect();
        let state = WholeBodyState {
            base_pose: Isometry3::translation(0.0, 0.0, 1.2),
            q,
            contacts: vec![false; model.limbs.len()],
            contact_points: vec![None; model.limbs.len()],
        };
        let (d, pair) = min_pair_distance(&model, &state);
        assert!(d > 0.0, "default pose penetrates at pair {pair:?}: {d}");
    }

    #[test]
    fn mirror_symmetry_of_min_distance() {
        let model = super::super::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let mut q: Vec<f64> = Vec::new();
            for limb in &model.limbs {
                for j in &limb.joints {
                    q.push(rng.gen_range(j.min.max(-1.0)..j.max.min(1.0)));
                }
            }
            let state = WholeBodyState {
                base_pose: Isometry3::translation(0.0, 0.0, 1.2),
                q: q.clone(),
                contacts: vec![false; model.limbs.len()],
                contact_points: vec![None; model.limbs.len()],
            };
            // mirror across the x-z plane: swap left/right legs and negate
            // yaw joints (axis z) for every limb
            let mut qm = q.clone();
            let order = [1usize, 0, 3, 2, 4]; // lf<->rf, lh<->rh, arm in place
            for (dst, &src) in order.iter().enumerate() {
                let off_dst = model.joint_offset(dst);
                let off_src = model.joint_offset(src);
                for k in 0..model.limbs[dst].dof() {
                    let mut v = q[off_src + k];
                    if model.limbs[src].joints[k].axis[2].abs() > 0.5 {
                        v = -v;
                    }
                    qm[off_dst + k] = v;
                }
            }
            let mirrored = WholeBodyState {
                base_pose: Isometry3::translation(0.0, 0.0, 1.2),
                q: qm,
                contacts: vec![false; model.limbs.len()],
                contact_points: vec![None; model.limbs.len()],
            };
            let (d1, _) = min_pair_distance(&model, &state);
            let (d2, _) = min_pair_distance(&model, &mirrored);
            assert_abs_diff_eq!(d1, d2, epsilon = 1e-9);
        }
    }
}
