//! Terrain-aware pose lifting: turns an SE(2) sample into a full SE(3)
//! base pose by enumerating height/normal candidates from the raw and
//! filtered terrain layers, at the query position and at the nearest
//! traversable position, and picking the pair with the lowest pose cost.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::gridmap::{CellIndex, GridMap, GridMapError, InterpolationMethod};
use crate::roadmap::LimbRoadmap;
use crate::robot::{wheel_contact_point, RobotModel};
use crate::terrain::{
    LAYER_ELEVATION, LAYER_NORMAL_X_L, LAYER_NORMAL_X_S, LAYER_NORMAL_Y_L, LAYER_NORMAL_Y_S,
    LAYER_SDF, LAYER_SMOOTH_L, LAYER_TRAVERSABILITY,
};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("map has no traversable cells")]
    NoTraversableCells,
    #[error("no finite height/normal candidate at ({0}, {1})")]
    NoValidCandidate(f64, f64),
    #[error("no roadmap for limb '{0}'")]
    MissingRoadmap(String),
    #[error(transparent)]
    Map(#[from] GridMapError),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    Raw,
    Filtered,
    NearestRaw,
    NearestFiltered,
}

#[derive(Debug, Clone, Copy)]
pub struct PoseCandidate {
    pub height: f64,
    /// Slope coefficients of the unnormalized surface normal
    /// [-s_x, -s_y, 1]; stored as the fitted gradient (s_x, s_y).
    pub normal_xy: [f64; 2],
    pub height_source: CandidateSource,
    pub normal_source: CandidateSource,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct LiftedPose {
    pub base_pose: Isometry3<f64>,
    pub chosen: PoseCandidate,
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerParams {
    /// Cost per ungrounded leg.
    pub w_ground: f64,
    /// Cost per squared radian of roll and pitch.
    pub w_roll_pitch: f64,
    /// Required signed-distance clearance for contact cells.
    pub sdf_margin: f64,
    /// How far a leg contact may sit from the default-configuration
    /// footprint. Keeps contacts local, so a wheel cannot stretch
    /// across a terrain discontinuity while flagged as rolling; it has
    /// to lift instead.
    pub ground_search_radius: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            w_ground: 10.0,
            w_roll_pitch: 1.0,
            sdf_margin: 0.0,
            ground_search_radius: 0.15,
        }
    }
}

/// Everything pose lifting needs to evaluate groundedness.
pub struct SamplerContext<'a> {
    pub model: &'a RobotModel,
    pub map: &'a GridMap,
    /// One roadmap per limb, aligned with `model.limbs`.
    pub roadmaps: &'a [LimbRoadmap],
    pub params: SamplerParams,
}

impl<'a> SamplerContext<'a> {
    pub fn roadmap_for(&self, limb_name: &str) -> Result<&'a LimbRoadmap> {
        self.roadmaps
            .iter()
            .find(|rm| rm.limb_name == limb_name)
            .ok_or_else(|| SamplerError::MissingRoadmap(limb_name.to_string()))
    }
}

/// Center of the traversable cell closest to `xy` (ties by row, then
/// column). A query already on a traversable cell returns its own cell
/// center.
pub fn nearest_traversable(map: &GridMap, xy: [f64; 2]) -> Result<[f64; 2]> {
    if let Some(idx) = map.index_at(xy) {
        if map.at_index(LAYER_TRAVERSABILITY, idx).unwrap_or(0.0) > 0.5 {
            return Ok(map.cell_center(idx));
        }
    }
    let mut best: Option<(f64, CellIndex)> = None;
    for row in 0..map.rows() {
        for col in 0..map.cols() {
            let idx = CellIndex { row, col };
            if map.at_index(LAYER_TRAVERSABILITY, idx).unwrap_or(0.0) <= 0.5 {
                continue;
            }
            let c = map.cell_center(idx);
            let d2 = (c[0] - xy[0]).powi(2) + (c[1] - xy[1]).powi(2);
            let replace = match best {
                None => true,
                Some((bd, _)) => d2 < bd - 1e-15,
            };
            if replace {
                best = Some((d2, idx));
            }
        }
    }
    best.map(|(_, idx)| map.cell_center(idx))
        .ok_or(SamplerError::NoTraversableCells)
}

fn finite_or_none(v: std::result::Result<f64, GridMapError>) -> Option<f64> {
    v.ok().filter(|x| x.is_finite())
}

fn height_candidates(map: &GridMap, xy: [f64; 2], hat: [f64; 2]) -> Vec<(CandidateSource, f64)> {
    use CandidateSource::*;
    let m = InterpolationMethod::Bicubic;
    let mut out = Vec::with_capacity(4);
    for (src, p, layer) in [
        (Raw, xy, LAYER_ELEVATION),
        (Filtered, xy, LAYER_SMOOTH_L),
        (NearestRaw, hat, LAYER_ELEVATION),
        (NearestFiltered, hat, LAYER_SMOOTH_L),
    ] {
        if let Some(h) = finite_or_none(map.value_at(layer, p, m)) {
            out.push((src, h));
        }
    }
    out
}

fn normal_candidates(map: &GridMap, xy: [f64; 2], hat: [f64; 2]) -> Vec<(CandidateSource, [f64; 2])> {
    use CandidateSource::*;
    let m = InterpolationMethod::Bicubic;
    let mut out = Vec::with_capacity(4);
    for (src, p, lx, ly) in [
        (Raw, xy, LAYER_NORMAL_X_S, LAYER_NORMAL_Y_S),
        (Filtered, xy, LAYER_NORMAL_X_L, LAYER_NORMAL_Y_L),
        (NearestRaw, hat, LAYER_NORMAL_X_S, LAYER_NORMAL_Y_S),
        (NearestFiltered, hat, LAYER_NORMAL_X_L, LAYER_NORMAL_Y_L),
    ] {
        let nx = finite_or_none(map.value_at(lx, p, m));
        let ny = finite_or_none(map.value_at(ly, p, m));
        if let (Some(nx), Some(ny)) = (nx, ny) {
            out.push((src, [nx, ny]));
        }
    }
    out
}

/// Roll/pitch aligning the base z-axis with the terrain normal
/// [-s_x, -s_y, 1] while keeping the commanded yaw (z-y-x Euler order).
fn roll_pitch_for_normal(normal_xy: [f64; 2], yaw: f64) -> (f64, f64) {
    let n = Vector3::new(-normal_xy[0], -normal_xy[1], 1.0).normalize();
    // normal expressed in the yawed frame
    let c = yaw.cos();
    let s = yaw.sin();
    let m = Vector3::new(c * n.x + s * n.y, -s * n.x + c * n.y, n.z);
    let roll = (-m.y).asin();
    let pitch = m.x.atan2(m.z);
    (roll, pitch)
}

/// Assembles the SE(3) base pose from a candidate pair.
pub fn candidate_pose(
    model: &RobotModel,
    xy: [f64; 2],
    yaw: f64,
    height: f64,
    normal_xy: [f64; 2],
) -> Isometry3<f64> {
    let (roll, pitch) = roll_pitch_for_normal(normal_xy, yaw);
    Isometry3::from_parts(
        Translation3::new(xy[0], xy[1], height + model.h_desired),
        UnitQuaternion::from_euler_angles(roll, pitch, yaw),
    )
}

/// Cost of a candidate base pose: `w_ground` per leg without any grounded
/// roadmap configuration plus `w_roll_pitch * (roll^2 + pitch^2)`.
pub fn pose_cost(ctx: &SamplerContext, base_pose: &Isometry3<f64>) -> Result<f64> {
    let (roll, pitch, _) = base_pose.rotation.euler_angles();
    let mut ungrounded = 0usize;
    for (_, limb) in ctx.model.wheeled_limbs() {
        let rm = ctx.roadmap_for(&limb.name)?;
        if !any_grounded(rm, ctx.model, base_pose, ctx.map, ctx.params.sdf_margin) {
            ungrounded += 1;
        }
    }
    Ok(ctx.params.w_ground * ungrounded as f64
        + ctx.params.w_roll_pitch * (roll * roll + pitch * pitch))
}

/// Early-exit groundedness: does any roadmap vertex put the limb's
/// contact point on the surface over traversable ground?
pub fn any_grounded(
    rm: &LimbRoadmap,
    model: &RobotModel,
    base_pose: &Isometry3<f64>,
    map: &GridMap,
    sdf_margin: f64,
) -> bool {
    let wheeled = model
        .limb(&rm.limb_name)
        .map(|(_, l)| l.wheeled)
        .unwrap_or(true);
    for v in &rm.vertices {
        let ee = base_pose * nalgebra::Point3::new(v.p_ee[0], v.p_ee[1], v.p_ee[2]);
        let contact = if wheeled {
            wheel_contact_point(model, ee)
        } else {
            ee
        };
        let xy = [contact.x, contact.y];
        let h = match map.value_at(LAYER_ELEVATION, xy, InterpolationMethod::Bicubic) {
            Ok(h) => h,
            Err(_) => continue,
        };
        if (contact.z - h).abs() > model.contact_eps {
            continue;
        }
        match map.value_at(LAYER_SDF, xy, InterpolationMethod::NearestNeighbor) {
            Ok(s) if s > sdf_margin => return true,
            _ => continue,
        }
    }
    false
}

/// Lifts an SE(2) sample to a full base pose: enumerates the candidate
/// height/normal pairs (raw and filtered layers, at the query and at the
/// nearest traversable position) and keeps the first minimum-cost pair
/// in enumeration order (normals outer, heights inner).
pub fn lift_pose(ctx: &SamplerContext, xy: [f64; 2], yaw: f64) -> Result<LiftedPose> {
    let hat = nearest_traversable(ctx.map, xy)?;
    let heights = height_candidates(ctx.map, xy, hat);
    let normals = normal_candidates(ctx.map, xy, hat);
    let mut best: Option<PoseCandidate> = None;
    for &(n_src, n) in &normals {
        for &(h_src, h) in &heights {
            let pose = candidate_pose(ctx.model, xy, yaw, h, n);
            let cost = pose_cost(ctx, &pose)?;
            if best.as_ref().map_or(true, |b| cost < b.cost) {
                best = Some(PoseCandidate {
                    height: h,
                    normal_xy: n,
                    height_source: h_src,
                    normal_source: n_src,
                    cost,
                });
            }
        }
    }
    let chosen = best.ok_or(SamplerError::NoValidCandidate(xy[0], xy[1]))?;
    Ok(LiftedPose {
        base_pose: candidate_pose(ctx.model, xy, yaw, chosen.height, chosen.normal_xy),
        chosen,
    })
}
