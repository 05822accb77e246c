//! Parameterized robot model: floating base, wheeled and non-wheeled
//! limbs as revolute chains, whole-body center of mass, contact tests,
//! and collision primitives.

mod collision;
mod ik;
mod stability;

pub use collision::{
    min_pair_distance, pair_distance, place_base_primitives, place_limb_primitives,
    place_primitive, segment_segment_distance, sphere_at, CollisionPrimitive, PlacedPrimitive,
    PrimitiveShape,
};
pub use ik::ik_limb;
pub use stability::support_polygon_contains;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{GridMap, InterpolationMethod};
use crate::terrain::LAYER_ELEVATION;

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("unknown limb '{0}'")]
    UnknownLimb(String),
    #[error("joint {joint} value {value} outside limits [{min}, {max}]")]
    JointLimit {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("joint vector length {got}, limb has {expected} joints")]
    JointCount { got: usize, expected: usize },
    #[error("ik did not converge after {iterations} iterations (residual {residual:.6} m)")]
    IkNonConvergence { iterations: usize, residual: f64 },
    #[error("support polygon needs at least 3 contact points, got {0}")]
    TooFewContacts(usize),
    #[error("contact query outside map")]
    OutOfMap,
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RobotError>;

/// One revolute joint: rotation about `axis` by the joint value, then a
/// fixed translation to the next joint origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointDesc {
    pub axis: [f64; 3],
    pub offset: [f64; 3],
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimbModel {
    pub name: String,
    pub wheeled: bool,
    /// Translation from the base origin to the chain root.
    pub mount: [f64; 3],
    pub joints: Vec<JointDesc>,
    /// One mass per link (link i spans joint i's origin to the next
    /// origin, the last one ends at the end effector).
    pub link_masses: Vec<f64>,
    pub default_config: Vec<f64>,
}

impl LimbModel {
    pub fn mass(&self) -> f64 {
        self.link_masses.iter().sum()
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn check_limits(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.joints.len() {
            return Err(RobotError::JointCount {
                got: q.len(),
                expected: self.joints.len(),
            });
        }
        for (i, (v, j)) in q.iter().zip(&self.joints).enumerate() {
            if *v < j.min - 1e-9 || *v > j.max + 1e-9 {
                return Err(RobotError::JointLimit {
                    joint: i,
                    value: *v,
                    min: j.min,
                    max: j.max,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotModel {
    pub base_mass: f64,
    pub base_com_offset: [f64; 3],
    pub wheel_radius: f64,
    /// Nominal base height above the smoothed terrain, meters.
    pub h_desired: f64,
    pub max_roll: f64,
    pub max_pitch: f64,
    /// Contact height tolerance, meters.
    pub contact_eps: f64,
    /// Support polygon shrink margin, meters.
    pub stability_margin: f64,
    pub limbs: Vec<LimbModel>,
    pub collision_bodies: Vec<CollisionPrimitive>,
}

impl RobotModel {
    pub fn limb(&self, name: &str) -> Result<(usize, &LimbModel)> {
        self.limbs
            .iter()
            .enumerate()
            .find(|(_, l)| l.name == name)
            .ok_or_else(|| RobotError::UnknownLimb(name.to_string()))
    }

    pub fn wheeled_limbs(&self) -> impl Iterator<Item = (usize, &LimbModel)> {
        self.limbs.iter().enumerate().filter(|(_, l)| l.wheeled)
    }

    pub fn arm_limbs(&self) -> impl Iterator<Item = (usize, &LimbModel)> {
        self.limbs.iter().enumerate().filter(|(_, l)| !l.wheeled)
    }

    pub fn total_mass(&self) -> f64 {
        self.base_mass + self.limbs.iter().map(|l| l.mass()).sum::<f64>()
    }

    /// Joint-vector offset of a limb within the concatenated whole-body
    /// joint vector.
    pub fn joint_offset(&self, limb_idx: usize) -> usize {
        self.limbs[..limb_idx].iter().map(|l| l.dof()).sum()
    }

    pub fn total_dof(&self) -> usize {
        self.limbs.iter().map(|l| l.dof()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.wheeled_limbs().count() < 2 {
            return Err(RobotError::InvalidModel("need at least 2 wheeled limbs".into()));
        }
        if self.base_mass <= 0.0 || self.wheel_radius <= 0.0 {
            return Err(RobotError::InvalidModel("masses and wheel radius must be positive".into()));
        }
        for limb in &self.limbs {
            if limb.joints.len() < 2 {
                return Err(RobotError::InvalidModel(format!("limb {} chain too short", limb.name)));
            }
            if limb.link_masses.len() != limb.joints.len() {
                return Err(RobotError::InvalidModel(format!(
                    "limb {} needs one link mass per joint",
                    limb.name
                )));
            }
            if limb.mass() <= 0.0 {
                return Err(RobotError::InvalidModel(format!("limb {} mass must be positive", limb.name)));
            }
            limb.check_limits(&limb.default_config)?;
            for j in &limb.joints {
                if !(j.min < j.max) || !j.min.is_finite() || !j.max.is_finite() {
                    return Err(RobotError::InvalidModel(format!(
                        "limb {} joint limits must be finite and ordered",
                        limb.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("robot model serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let model: RobotModel =
            toml::from_str(s).map_err(|e| RobotError::ConfigParse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Hash of the canonical config text; stored in roadmap files so a
    /// stale roadmap is rejected after a model change.
    pub fn config_hash(&self) -> u64 {
        let s = self.to_toml();
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in s.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

/// Full robot configuration at one instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WholeBodyState {
    pub base_pose: Isometry3<f64>,
    /// Concatenated per-limb joint vectors in limb order.
    pub q: Vec<f64>,
    pub contacts: Vec<bool>,
    /// World contact position per limb; present iff the contact flag is set.
    pub contact_points: Vec<Option<[f64; 3]>>,
}

impl WholeBodyState {
    pub fn limb_q<'a>(&'a self, model: &RobotModel, limb_idx: usize) -> &'a [f64] {
        let off = model.joint_offset(limb_idx);
        &self.q[off..off + model.limbs[limb_idx].dof()]
    }

    pub fn set_limb_q(&mut self, model: &RobotModel, limb_idx: usize, q: &[f64]) {
        let off = model.joint_offset(limb_idx);
        self.q[off..off + q.len()].copy_from_slice(q);
    }

    pub fn active_contact_points(&self) -> Vec<[f64; 3]> {
        self.contact_points.iter().flatten().copied().collect()
    }

    /// Number of limbs whose contact flag differs between two states.
    pub fn contact_changes(&self, other: &WholeBodyState) -> usize {
        self.contacts
            .iter()
            .zip(&other.contacts)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Frames along a limb chain, all in base coordinates: the mount frame,
/// one frame per joint (after applying the joint rotation and link
/// offset), ending at the end effector / wheel center.
pub fn limb_frames(limb: &LimbModel, q: &[f64]) -> Vec<Isometry3<f64>> {
    let mut frames = Vec::with_capacity(limb.joints.len() + 1);
    let mut t = Isometry3::from_parts(
        Translation3::new(limb.mount[0], limb.mount[1], limb.mount[2]),
        UnitQuaternion::identity(),
    );
    frames.push(t);
    for (joint, &angle) in limb.joints.iter().zip(q) {
        let axis = Vector3::new(joint.axis[0], joint.axis[1], joint.axis[2]);
        let rot = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let link = Translation3::new(joint.offset[0], joint.offset[1], joint.offset[2]);
        t = t * Isometry3::from_parts(Translation3::identity(), rot) * Isometry3::from_parts(link, UnitQuaternion::identity());
        frames.push(t);
    }
    frames
}

/// Base-frame end-effector (wheel center for wheeled limbs) position.
pub fn fk_limb_base(limb: &LimbModel, q: &[f64]) -> Result<Point3<f64>> {
    limb.check_limits(q)?;
    Ok(Point3::from(limb_frames(limb, q).last().unwrap().translation.vector))
}

/// World end-effector / wheel-center position.
pub fn fk_limb(
    model: &RobotModel,
    limb_name: &str,
    q: &[f64],
    base_pose: &Isometry3<f64>,
) -> Result<Point3<f64>> {
    let (_, limb) = model.limb(limb_name)?;
    Ok(base_pose * fk_limb_base(limb, q)?)
}

/// World contact point of a wheeled limb: wheel center dropped by the
/// wheel radius along gravity.
pub fn wheel_contact_point(model: &RobotModel, wheel_center_world: Point3<f64>) -> Point3<f64> {
    wheel_center_world - Vector3::new(0.0, 0.0, model.wheel_radius)
}

/// Limb center of mass in base coordinates: link masses at link midpoints.
pub fn limb_com_base(limb: &LimbModel, q: &[f64]) -> Point3<f64> {
    let frames = limb_frames(limb, q);
    let mut acc = Vector3::zeros();
    let mut mass = 0.0;
    for (i, m) in limb.link_masses.iter().enumerate() {
        let a = frames[i].translation.vector;
        let b = frames[i + 1].translation.vector;
        acc += (a + b) * 0.5 * *m;
        mass += *m;
    }
    Point3::from(acc / mass)
}

/// Mass-weighted whole-body center of mass in world coordinates.
pub fn whole_body_com(model: &RobotModel, state: &WholeBodyState) -> Point3<f64> {
    let mut acc = (state.base_pose
        * Point3::new(
            model.base_com_offset[0],
            model.base_com_offset[1],
            model.base_com_offset[2],
        ))
    .coords
        * model.base_mass;
    let mut mass = model.base_mass;
    for (i, limb) in model.limbs.iter().enumerate() {
        let q = state.limb_q(model, i);
        let com = state.base_pose * limb_com_base(limb, q);
        acc += com.coords * limb.mass();
        mass += limb.mass();
    }
    Point3::from(acc / mass)
}

/// Contact condition: the point is within `eps` of the interpolated
/// elevation surface.
pub fn in_contact(map: &GridMap, p: &Point3<f64>, eps: f64) -> Result<bool> {
    let h = map
        .value_at(LAYER_ELEVATION, [p.x, p.y], InterpolationMethod::Bicubic)
        .map_err(|_| RobotError::OutOfMap)?;
    Ok((p.z - h).abs() <= eps)
}

/// The built-in excavator-like model: four wheeled legs with three
/// revolute joints each and one four-joint arm.
pub fn default_model() -> RobotModel {
    let leg = |name: &str, mx: f64, my: f64| {
        let side = my.signum();
        LimbModel {
            name: name.to_string(),
            wheeled: true,
            mount: [mx, my, 0.0],
            joints: vec![
                // hip yaw, drops to the hip pitch axis
                JointDesc {
                    axis: [0.0, 0.0, 1.0],
                    offset: [0.0, 0.1 * side, -0.1],
                    min: -1.2,
                    max: 1.2,
                },
                // thigh
                JointDesc {
                    axis: [0.0, 1.0, 0.0],
                    offset: [0.5, 0.0, 0.0],
                    min: -0.4,
                    max: 1.5,
                },
                // shank, ends at the wheel center
                JointDesc {
                    axis: [0.0, 1.0, 0.0],
                    offset: [0.5, 0.0, 0.0],
                    min: 0.0,
                    max: 2.2,
                },
            ],
            link_masses: vec![60.0, 190.0, 150.0],
            default_config: vec![0.0, 0.35, 0.9],
        }
    };
    let arm = LimbModel {
        name: "arm".to_string(),
        wheeled: false,
        mount: [1.9, 0.0, 0.4],
        joints: vec![
            JointDesc {
                axis: [0.0, 0.0, 1.0],
                offset: [0.3, 0.0, 0.0],
                min: -2.8,
                max: 2.8,
            },
            JointDesc {
                axis: [0.0, 1.0, 0.0],
                offset: [1.2, 0.0, 0.0],
                min: -1.2,
                max: 1.4,
            },
            JointDesc {
                axis: [0.0, 1.0, 0.0],
                offset: [1.0, 0.0, 0.0],
                min: -0.5,
                max: 2.4,
            },
            JointDesc {
                axis: [0.0, 1.0, 0.0],
                offset: [0.4, 0.0, 0.0],
                min: -1.6,
                max: 1.6,
            },
        ],
        link_masses: vec![300.0, 500.0, 400.0, 300.0],
        default_config: vec![0.0, 0.5, 1.4, 0.3],
    };
    let mut collision_bodies = vec![
        // base hull as two longitudinal capsules
        CollisionPrimitive::base_capsule([-1.7, 0.35, 0.3], [1.7, 0.35, 0.3], 0.35),
        CollisionPrimitive::base_capsule([-1.7, -0.35, 0.3], [1.7, -0.35, 0.3], 0.35),
    ];
    let limbs = vec![
        leg("leg_lf", 1.4, 1.1),
        leg("leg_rf", 1.4, -1.1),
        leg("leg_lh", -1.4, 1.1),
        leg("leg_rh", -1.4, -1.1),
        arm,
    ];
    for limb in &limbs {
        for link in 1..limb.joints.len() {
            // capsule along each moving link, expressed in the frame after
            // the link's joint (local segment runs from -offset to origin)
            let o = limb.joints[link].offset;
            let radius = if limb.wheeled { 0.15 } else { 0.2 };
            collision_bodies.push(CollisionPrimitive::limb_capsule(
                &limb.name,
                link + 1,
                [-o[0], -o[1], -o[2]],
                [0.0, 0.0, 0.0],
                radius,
            ));
        }
        // wheel hub / tool sphere at the chain tip
        let radius = if limb.wheeled { 0.3 } else { 0.25 };
        collision_bodies.push(CollisionPrimitive::limb_sphere(
            &limb.name,
            limb.joints.len(),
            [0.0, 0.0, 0.0],
            radius,
        ));
    }
    RobotModel {
        base_mass: 8000.0,
        base_com_offset: [0.0, 0.0, 0.4],
        wheel_radius: 0.6,
        h_desired: 1.2,
        max_roll: 20f64.to_radians(),
        max_pitch: 20f64.to_radians(),
        contact_eps: 0.05,
        stability_margin: 0.1,
        limbs,
        collision_bodies,
    }
}
