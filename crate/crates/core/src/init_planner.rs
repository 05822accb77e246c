//! Sampling-based initialization stage: an optimizing RRT over SE(2)
//! base poses with Reeds-Shepp steering. Every subnode along a candidate
//! edge is lifted to SE(3) and must pass whole-body feasibility (tilt
//! gate, leg grounding through the limb roadmaps, arm counterweight or
//! arm contact, static stability). The best tree path is post-processed
//! into a whole-body path with a stability-correct contact schedule.

use nalgebra::{Isometry3, Point3, Translation3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::InterpolationMethod;
use crate::reeds_shepp::{discretize, shortest_path, RSPath, SE2Pose};
use crate::roadmap::{grounded_candidates, invalidate, search_path, RoadmapError};
use crate::robot::{
    ik_limb, support_polygon_contains, wheel_contact_point, whole_body_com,
    LimbModel, WholeBodyState,
};
use crate::sampler::{lift_pose, SamplerContext, SamplerError};
use crate::terrain::LAYER_ELEVATION;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("start pose fails whole-body feasibility")]
    InfeasibleStart,
    #[error("goal pose fails whole-body feasibility")]
    InfeasibleGoal,
    #[error("no solution within budget ({0} iterations)")]
    NoSolutionWithinBudget(usize),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Roadmap(#[from] RoadmapError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan file parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PlanError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Maximum Reeds-Shepp connection length attempted per extension, m.
    pub max_connection_length: f64,
    /// Subnode spacing along an edge, m.
    pub subnode_step: f64,
    pub turning_radius: f64,
    /// Wall-clock budget, seconds; used when `iteration_budget` is unset.
    pub time_budget: f64,
    /// Deterministic alternative to the wall-clock budget.
    pub iteration_budget: Option<usize>,
    pub goal_bias: f64,
    /// Nearest-neighbor cost weights for position (per m) and yaw (per rad).
    pub w_euclid: f64,
    pub w_angular: f64,
    /// Extra edge cost per contact change along the edge.
    pub stepping_penalty: f64,
    pub seed: u64,
    /// Base speed used to assign phase durations, m/s.
    pub base_speed: f64,
    pub min_phase_duration: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_connection_length: 10.0,
            subnode_step: 0.2,
            turning_radius: 4.0,
            time_budget: 4.0,
            iteration_budget: None,
            goal_bias: 0.05,
            w_euclid: 1.0,
            w_angular: 2.0,
            stepping_penalty: 0.0,
            seed: 0,
            base_speed: 0.25,
            min_phase_duration: 1.0,
        }
    }
}

/// One contact-schedule phase: contact flags are constant across all of
/// its states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanPhase {
    pub duration: f64,
    pub contacts: Vec<bool>,
    /// Dense states (subnode resolution); first/last are the phase
    /// boundary states.
    pub states: Vec<WholeBodyState>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub iterations: usize,
    pub first_solution_iteration: Option<usize>,
    pub time_to_first_solution: Option<f64>,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    /// (iteration, cost) every time the best goal cost improved.
    pub solution_history: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WholeBodyPath {
    pub phases: Vec<PlanPhase>,
    pub metrics: PlanMetrics,
}

impl WholeBodyPath {
    pub fn states(&self) -> impl Iterator<Item = &WholeBodyState> {
        self.phases.iter().flat_map(|p| p.states.iter())
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Number of contact-flag toggles over the whole schedule.
    pub fn contact_break_count(&self) -> usize {
        self.phases
            .windows(2)
            .map(|w| {
                w[0].contacts
                    .iter()
                    .zip(&w[1].contacts)
                    .filter(|(a, b)| a != b)
                    .count()
            })
            .sum()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("plan serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PlanError::Parse(e.to_string()))
    }
}

// --- whole-body feasibility (base-pose level) ---------------------------

fn joint_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Grounds one wheeled limb: among grounded roadmap vertices picks the
/// one closest to the default configuration, then refines with IK so the
/// wheel sits exactly on the interpolated surface under the default-pose
/// footprint (keeping the wheel heading aligned for clean rolling).
/// Returns (q, contact point).
fn ground_leg(
    ctx: &SamplerContext,
    limb: &LimbModel,
    base_pose: &Isometry3<f64>,
) -> Option<(Vec<f64>, [f64; 3])> {
    let rm = ctx.roadmap_for(&limb.name).ok()?;
    if let Some(polished) = polish_leg_contact(ctx, limb, base_pose) {
        return Some(polished);
    }
    // fall back to roadmap vertices, but only those whose contact stays
    // near the default footprint: a rolling wheel must not jump across
    // unreachable ground
    let foot = crate::robot::fk_limb_base(limb, &limb.default_config).ok()?;
    let foot_w = base_pose * foot;
    let ids: Vec<usize> = grounded_candidates(
        rm,
        ctx.model,
        base_pose,
        ctx.map,
        ctx.model.contact_eps,
        ctx.params.sdf_margin,
    )
    .into_iter()
    .filter(|&id| {
        let v = &rm.vertices[id];
        let ee = base_pose * Point3::new(v.p_ee[0], v.p_ee[1], v.p_ee[2]);
        let c = wheel_contact_point(ctx.model, ee);
        let dx = c.x - foot_w.x;
        let dy = c.y - foot_w.y;
        (dx * dx + dy * dy).sqrt() <= ctx.params.ground_search_radius
    })
    .collect();
    if ids.is_empty() {
        return None;
    }
    let best = ids
        .into_iter()
        .min_by(|&a, &b| {
            let da = joint_dist(&rm.vertices[a].q, &limb.default_config);
            let db = joint_dist(&rm.vertices[b].q, &limb.default_config);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        })?;
    let v = &rm.vertices[best];
    let ee = base_pose * Point3::new(v.p_ee[0], v.p_ee[1], v.p_ee[2]);
    let c = wheel_contact_point(ctx.model, ee);
    Some((v.q.clone(), [c.x, c.y, c.z]))
}

/// Exact-contact refinement: drops the wheel onto the surface directly
/// under the default configuration's footprint.
fn polish_leg_contact(
    ctx: &SamplerContext,
    limb: &LimbModel,
    base_pose: &Isometry3<f64>,
) -> Option<(Vec<f64>, [f64; 3])> {
    let ee_def = crate::robot::fk_limb_base(limb, &limb.default_config).ok()?;
    let w = base_pose * ee_def;
    let xy = [w.x, w.y];
    let h = ctx
        .map
        .value_at(LAYER_ELEVATION, xy, InterpolationMethod::Bicubic)
        .ok()?;
    let sdf = ctx
        .map
        .value_at(
            crate::terrain::LAYER_SDF,
            xy,
            InterpolationMethod::NearestNeighbor,
        )
        .ok()?;
    if !h.is_finite() || sdf <= ctx.params.sdf_margin {
        return None;
    }
    let target = base_pose.inverse() * Point3::new(w.x, w.y, h + ctx.model.wheel_radius);
    let q = ik_limb(limb, target, &limb.default_config).ok()?;
    let ee = base_pose * crate::robot::fk_limb_base(limb, &q).ok()?;
    let c = wheel_contact_point(ctx.model, ee);
    let h2 = ctx
        .map
        .value_at(LAYER_ELEVATION, [c.x, c.y], InterpolationMethod::Bicubic)
        .ok()?;
    ((c.z - h2).abs() <= ctx.model.contact_eps).then(|| (q, [c.x, c.y, c.z]))
}

/// Swing configuration for an ungrounded leg: maximize contact-point
/// clearance above the terrain (capped), tie-broken toward the default
/// configuration.
fn select_swing_leg(
    ctx: &SamplerContext,
    limb: &LimbModel,
    base_pose: &Isometry3<f64>,
) -> Vec<f64> {
    let rm = match ctx.roadmap_for(&limb.name) {
        Ok(rm) => rm,
        Err(_) => return limb.default_config.clone(),
    };
    let mut best: Option<(f64, &Vec<f64>)> = None;
    for v in &rm.vertices {
        let ee = base_pose * Point3::new(v.p_ee[0], v.p_ee[1], v.p_ee[2]);
        let c = wheel_contact_point(ctx.model, ee);
        let clearance = match ctx
            .map
            .value_at(LAYER_ELEVATION, [c.x, c.y], InterpolationMethod::Bicubic)
        {
            Ok(h) => c.z - h,
            Err(_) => 1.0, // no terrain data below: treat as free
        };
        if clearance < 0.02 {
            continue;
        }
        let score = clearance.min(0.5) - 0.2 * joint_dist(&v.q, &limb.default_config);
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, &v.q));
        }
    }
    best.map(|(_, q)| q.clone())
        .unwrap_or_else(|| limb.default_config.clone())
}

/// Counterweight arm configuration: pull the whole-body CoM toward the
/// horizontal centroid of the contact points.
fn select_counterweight_arm(
    ctx: &SamplerContext,
    arm: &LimbModel,
    arm_idx: usize,
    state: &WholeBodyState,
) -> Vec<f64> {
    let rm = match ctx.roadmap_for(&arm.name) {
        Ok(rm) => rm,
        Err(_) => return arm.default_config.clone(),
    };
    let contacts = state.active_contact_points();
    if contacts.is_empty() {
        return arm.default_config.clone();
    }
    let cx = contacts.iter().map(|c| c[0]).sum::<f64>() / contacts.len() as f64;
    let cy = contacts.iter().map(|c| c[1]).sum::<f64>() / contacts.len() as f64;
    let mut trial = state.clone();
    let mut best: Option<(f64, &Vec<f64>)> = None;
    for v in &rm.vertices {
        trial.set_limb_q(ctx.model, arm_idx, &v.q);
        let com = whole_body_com(ctx.model, &trial);
        let d = ((com.x - cx).powi(2) + (com.y - cy).powi(2)).sqrt();
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, &v.q));
        }
    }
    best.map(|(_, q)| q.clone())
        .unwrap_or_else(|| arm.default_config.clone())
}

/// Grounds the arm: among grounded arm vertices picks the one closest to
/// the default configuration.
fn ground_arm(
    ctx: &SamplerContext,
    arm: &LimbModel,
    base_pose: &Isometry3<f64>,
) -> Option<(Vec<f64>, [f64; 3])> {
    let rm = ctx.roadmap_for(&arm.name).ok()?;
    let ids = grounded_candidates(
        rm,
        ctx.model,
        base_pose,
        ctx.map,
        ctx.model.contact_eps,
        ctx.params.sdf_margin,
    );
    let best = ids.into_iter().min_by(|&a, &b| {
        let da = joint_dist(&rm.vertices[a].q, &arm.default_config);
        let db = joint_dist(&rm.vertices[b].q, &arm.default_config);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    })?;
    let v = &rm.vertices[best];
    let ee = base_pose * Point3::new(v.p_ee[0], v.p_ee[1], v.p_ee[2]);
    Some((v.q.clone(), [ee.x, ee.y, ee.z]))
}

fn is_stable(ctx: &SamplerContext, state: &WholeBodyState) -> bool {
    let contacts = state.active_contact_points();
    let com = whole_body_com(ctx.model, state);
    support_polygon_contains(&contacts, [com.x, com.y], ctx.model.stability_margin)
        .unwrap_or(false)
}

/// Whole-body feasibility of one base pose: tilt gate, leg grounding,
/// and a contact-count switch (4 legs: stable by construction; 3 legs:
/// swing leg + counterweight arm + stability; 2 legs: arm must ground,
/// then stability; fewer: infeasible).
pub fn check_feasibility(ctx: &SamplerContext, base_pose: &Isometry3<f64>) -> Option<WholeBodyState> {
    let (roll, pitch, _) = base_pose.rotation.euler_angles();
    if roll.abs() > ctx.model.max_roll || pitch.abs() > ctx.model.max_pitch {
        return None;
    }
    let n_limbs = ctx.model.limbs.len();
    let mut state = WholeBodyState {
        base_pose: *base_pose,
        q: ctx
            .model
            .limbs
            .iter()
            .flat_map(|l| l.default_config.iter().copied())
            .collect(),
        contacts: vec![false; n_limbs],
        contact_points: vec![None; n_limbs],
    };
    let mut grounded_legs = Vec::new();
    let mut swing_legs = Vec::new();
    for (i, limb) in ctx.model.wheeled_limbs() {
        match ground_leg(ctx, limb, base_pose) {
            Some((q, c)) => {
                state.set_limb_q(ctx.model, i, &q);
                state.contacts[i] = true;
                state.contact_points[i] = Some(c);
                grounded_legs.push(i);
            }
            None => swing_legs.push(i),
        }
    }
    let (arm_idx, arm) = match ctx.model.arm_limbs().next() {
        Some(x) => x,
        None => {
            // no arm limb: need all legs grounded
            return if swing_legs.is_empty() { Some(state) } else { None };
        }
    };
    match grounded_legs.len() {
        4.. => Some(state),
        3 => {
            for &i in &swing_legs {
                let q = select_swing_leg(ctx, &ctx.model.limbs[i], base_pose);
                state.set_limb_q(ctx.model, i, &q);
            }
            let q_arm = select_counterweight_arm(ctx, arm, arm_idx, &state);
            state.set_limb_q(ctx.model, arm_idx, &q_arm);
            is_stable(ctx, &state).then_some(state)
        }
        2 => {
            let (q_arm, c_arm) = ground_arm(ctx, arm, base_pose)?;
            state.set_limb_q(ctx.model, arm_idx, &q_arm);
            state.contacts[arm_idx] = true;
            state.contact_points[arm_idx] = Some(c_arm);
            for &i in &swing_legs {
                let q = select_swing_leg(ctx, &ctx.model.limbs[i], base_pose);
                state.set_limb_q(ctx.model, i, &q);
            }
            is_stable(ctx, &state).then_some(state)
        }
        _ => None,
    }
}

// --- RRT ---------------------------------------------------------------

struct TreeNode {
    se2: SE2Pose,
    state: WholeBodyState,
    parent: Option<usize>,
    children: Vec<usize>,
    /// States along the incoming edge, start node included at [0].
    edge_states: Vec<WholeBodyState>,
    edge_length: f64,
    edge_breaks: usize,
    cost: f64,
}

fn count_breaks(states: &[WholeBodyState]) -> usize {
    states.windows(2).map(|w| w[0].contact_changes(&w[1])).sum()
}

/// Lifts and checks every subnode of an RS connection. Returns the dense
/// state sequence (both endpoints included) on success.
fn check_edge(
    ctx: &SamplerContext,
    from: &SE2Pose,
    path: &RSPath,
    subnode_step: f64,
) -> Option<Vec<WholeBodyState>> {
    let poses = discretize(path, from, subnode_step);
    let mut states = Vec::with_capacity(poses.len());
    for p in &poses {
        let lifted = lift_pose(ctx, [p.x, p.y], p.yaw).ok()?;
        let state = check_feasibility(ctx, &lifted.base_pose)?;
        states.push(state);
    }
    Some(states)
}

fn se2_of(state: &WholeBodyState) -> SE2Pose {
    let t = state.base_pose.translation;
    let (_, _, yaw) = state.base_pose.rotation.euler_angles();
    SE2Pose::new(t.x, t.y, yaw)
}

pub struct Planner<'a> {
    pub ctx: &'a SamplerContext<'a>,
    pub cfg: PlannerConfig,
}

impl<'a> Planner<'a> {
    pub fn new(ctx: &'a SamplerContext<'a>, cfg: PlannerConfig) -> Self {
        Self { ctx, cfg }
    }

    fn nn_cost(&self, a: &SE2Pose, b: &SE2Pose) -> f64 {
        self.cfg.w_euclid * a.planar_distance(b)
            + self.cfg.w_angular * crate::reeds_shepp::normalize_angle(a.yaw - b.yaw).abs()
    }

    fn steer(&self, from: &SE2Pose, to: &SE2Pose) -> (RSPath, SE2Pose) {
        let path = shortest_path(from, to, self.cfg.turning_radius).expect("radius > 0");
        if path.total_length <= self.cfg.max_connection_length {
            return (path, *to);
        }
        let capped = crate::reeds_shepp::interpolate(&path, from, self.cfg.max_connection_length)
            .expect("within range");
        let path = shortest_path(from, &capped, self.cfg.turning_radius).expect("radius > 0");
        (path, capped)
    }

    fn edge_cost(&self, length: f64, breaks: usize) -> f64 {
        length + self.cfg.stepping_penalty * breaks as f64
    }

    /// Grows the tree and returns the finalized best path to the goal.
    pub fn plan(&self, start: &SE2Pose, goal: &SE2Pose) -> Result<WholeBodyPath> {
        let ctx = self.ctx;
        let start_lift = lift_pose(ctx, [start.x, start.y], start.yaw)?;
        let start_state =
            check_feasibility(ctx, &start_lift.base_pose).ok_or(PlanError::InfeasibleStart)?;
        let goal_lift = lift_pose(ctx, [goal.x, goal.y], goal.yaw)?;
        check_feasibility(ctx, &goal_lift.base_pose).ok_or(PlanError::InfeasibleGoal)?;

        let mut metrics = PlanMetrics::default();
        let start_se2 = se2_of(&start_state);
        if start.planar_distance(goal) < 1e-9
            && crate::reeds_shepp::normalize_angle(start.yaw - goal.yaw).abs() < 1e-9
        {
            metrics.initial_cost = Some(0.0);
            metrics.final_cost = Some(0.0);
            metrics.first_solution_iteration = Some(0);
            metrics.time_to_first_solution = Some(0.0);
            return Ok(WholeBodyPath {
                phases: vec![PlanPhase {
                    duration: self.cfg.min_phase_duration,
                    contacts: start_state.contacts.clone(),
                    states: vec![start_state],
                }],
                metrics,
            });
        }

        let mut nodes = vec![TreeNode {
            se2: start_se2,
            state: start_state,
            parent: None,
            children: Vec::new(),
            edge_states: Vec::new(),
            edge_length: 0.0,
            edge_breaks: 0,
            cost: 0.0,
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut best_goal: Option<(usize, f64)> = None;
        let t0 = std::time::Instant::now();
        let (x_range, y_range) = self.sampling_ranges();

        let max_iters = self.cfg.iteration_budget.unwrap_or(usize::MAX);
        let mut iter = 0usize;
        while iter < max_iters {
            if self.cfg.iteration_budget.is_none()
                && t0.elapsed().as_secs_f64() > self.cfg.time_budget
            {
                break;
            }
            iter += 1;

            let sample = if rng.gen_bool(self.cfg.goal_bias) {
                *goal
            } else {
                SE2Pose::new(
                    rng.gen_range(x_range.0..x_range.1),
                    rng.gen_range(y_range.0..y_range.1),
                    rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
            };
            let nearest = (0..nodes.len())
                .min_by(|&a, &b| {
                    self.nn_cost(&nodes[a].se2, &sample)
                        .partial_cmp(&self.nn_cost(&nodes[b].se2, &sample))
                        .unwrap()
                        .then(a.cmp(&b))
                })
                .unwrap();
            let (path, target) = self.steer(&nodes[nearest].se2, &sample);
            if path.total_length < 1e-9 {
                continue;
            }
            let states = match check_edge(ctx, &nodes[nearest].se2, &path, self.cfg.subnode_step) {
                Some(s) => s,
                None => continue,
            };
            let mut breaks = nodes[nearest].state.contact_changes(&states[0]) + count_breaks(&states);

            // choose-parent among near nodes (RRT*-style)
            let mut parent = nearest;
            let mut edge_len = path.total_length;
            let mut edge_states = states;
            let mut best_cost =
                nodes[nearest].cost + self.edge_cost(path.total_length, breaks);
            // near set: a local neighborhood of the new node, ranked by
            // an admissible cost-through-candidate bound (candidate cost
            // plus straight-line distance), so both cheap and close
            // candidates are examined
            let near_radius = 0.4 * self.cfg.max_connection_length;
            let mut near: Vec<usize> = (0..nodes.len())
                .filter(|&i| {
                    i != nearest && nodes[i].se2.planar_distance(&target) <= near_radius
                })
                .collect();
            // parent candidates: best cost-through bound first
            let mut near_parent = near.clone();
            near_parent.sort_by(|&a, &b| {
                let fa = nodes[a].cost + nodes[a].se2.planar_distance(&target);
                let fb = nodes[b].cost + nodes[b].se2.planar_distance(&target);
                fa.partial_cmp(&fb).unwrap().then(a.cmp(&b))
            });
            near_parent.truncate(8);
            // rewire candidates: most expensive first (largest potential gain)
            near.sort_by(|&a, &b| {
                nodes[b]
                    .cost
                    .partial_cmp(&nodes[a].cost)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            near.truncate(8);
            for &cand in &near_parent {
                let p = match shortest_path(&nodes[cand].se2, &target, self.cfg.turning_radius) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                if p.total_length > self.cfg.max_connection_length {
                    continue;
                }
                let lower_bound = nodes[cand].cost + p.total_length;
                if lower_bound >= best_cost {
                    continue;
                }
                if let Some(s) = check_edge(ctx, &nodes[cand].se2, &p, self.cfg.subnode_step) {
                    let b = nodes[cand].state.contact_changes(&s[0]) + count_breaks(&s);
                    let c = nodes[cand].cost + self.edge_cost(p.total_length, b);
                    if c < best_cost {
                        best_cost = c;
                        parent = cand;
                        edge_len = p.total_length;
                        edge_states = s;
                        breaks = b;
                    }
                }
            }

            let new_id = nodes.len();
            nodes.push(TreeNode {
                se2: target,
                state: edge_states.last().unwrap().clone(),
                parent: Some(parent),
                children: Vec::new(),
                edge_states,
                edge_length: edge_len,
                edge_breaks: breaks,
                cost: best_cost,
            });
            nodes[parent].children.push(new_id);

            // rewire near nodes through the new node when cheaper
            for &cand in &near {
                if cand == parent || Some(cand) == nodes[new_id].parent {
                    continue;
                }
                let p = match shortest_path(&target, &nodes[cand].se2, self.cfg.turning_radius) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                if p.total_length > self.cfg.max_connection_length {
                    continue;
                }
                if nodes[new_id].cost + p.total_length >= nodes[cand].cost {
                    continue;
                }
                if let Some(s) = check_edge(ctx, &target, &p, self.cfg.subnode_step) {
                    let b = nodes[new_id].state.contact_changes(&s[0]) + count_breaks(&s);
                    let c = nodes[new_id].cost + self.edge_cost(p.total_length, b);
                    if c < nodes[cand].cost {
                        let old_parent = nodes[cand].parent.unwrap();
                        nodes[old_parent].children.retain(|&x| x != cand);
                        nodes[cand].parent = Some(new_id);
                        nodes[cand].edge_states = s;
                        nodes[cand].edge_length = p.total_length;
                        nodes[cand].edge_breaks = b;
                        let delta = c - nodes[cand].cost;
                        nodes[new_id].children.push(cand);
                        // shift subtree costs by the improvement
                        let mut stack = vec![cand];
                        while let Some(i) = stack.pop() {
                            nodes[i].cost += delta;
                            stack.extend(nodes[i].children.iter().copied());
                        }
                    }
                }
            }
            // goal bookkeeping
            let reached = target.planar_distance(goal) < 1e-9
                && crate::reeds_shepp::normalize_angle(target.yaw - goal.yaw).abs() < 1e-9;
            if reached {
                let c = nodes[new_id].cost;
                let better = best_goal.map_or(true, |(_, bc)| c < bc);
                if better {
                    best_goal = Some((new_id, c));
                    if metrics.first_solution_iteration.is_none() {
                        metrics.first_solution_iteration = Some(iter);
                        metrics.time_to_first_solution = Some(t0.elapsed().as_secs_f64());
                        metrics.initial_cost = Some(c);
                    }
                    metrics.solution_history.push((iter, c));
                }
            }
        }
        metrics.iterations = iter;

        // the goal node's cost can also improve through rewiring
        if let Some((id, _)) = best_goal {
            let c = nodes[id].cost;
            best_goal = Some((id, c));
            if metrics
                .solution_history
                .last()
                .map_or(false, |&(_, last)| c < last - 1e-12)
            {
                metrics.solution_history.push((iter, c));
            }
        }

        let (goal_id, final_cost) =
            best_goal.ok_or(PlanError::NoSolutionWithinBudget(iter))?;
        metrics.final_cost = Some(final_cost);

        // extract the chain of dense states root -> goal
        let mut chain = Vec::new();
        let mut cur = Some(goal_id);
        let mut order = Vec::new();
        while let Some(i) = cur {
            order.push(i);
            cur = nodes[i].parent;
        }
        order.reverse();
        chain.push(nodes[order[0]].state.clone());
        for &i in order.iter().skip(1) {
            chain.extend(nodes[i].edge_states.iter().skip(1).cloned());
        }
        Ok(self.finalize(chain, metrics))
    }

    fn sampling_ranges(&self) -> ((f64, f64), (f64, f64)) {
        let map = self.ctx.map;
        let [ox, oy] = map.origin();
        let margin = 2.0 * map.resolution();
        (
            (ox + margin, ox + (map.cols() - 1) as f64 * map.resolution() - margin),
            (oy + margin, oy + (map.rows() - 1) as f64 * map.resolution() - margin),
        )
    }

    // --- post-processing ------------------------------------------------

    /// Contact-schedule repair, arm IK anchoring, arm-path smoothing via
    /// the roadmap, and phase durations.
    pub fn finalize(&self, states: Vec<WholeBodyState>, metrics: PlanMetrics) -> WholeBodyPath {
        let states = repair_contact_schedule(states);
        let states = self.anchor_arm_contacts(states);
        let states = self.smooth_arm_motions(states);
        let phases = self.assign_phases(states);
        WholeBodyPath { phases, metrics }
    }

    /// Anchors every arm-contact phase to a single world-frame contact
    /// point: the midpoint of the closest reachable (start, end)
    /// candidate pair, applied through IK at every node of the phase.
    fn anchor_arm_contacts(&self, mut states: Vec<WholeBodyState>) -> Vec<WholeBodyState> {
        let ctx = self.ctx;
        let (arm_idx, arm) = match ctx.model.arm_limbs().next() {
            Some(x) => x,
            None => return states,
        };
        let rm = match ctx.roadmap_for(&arm.name) {
            Ok(rm) => rm,
            Err(_) => return states,
        };
        let n = states.len();
        let mut i = 0;
        while i < n {
            if !states[i].contacts[arm_idx] {
                i += 1;
                continue;
            }
            let mut j = i;
            while j + 1 < n && states[j + 1].contacts[arm_idx] {
                j += 1;
            }
            // candidate world positions at phase start and end
            let world_pts = |state: &WholeBodyState| -> Vec<Point3<f64>> {
                grounded_candidates(
                    rm,
                    ctx.model,
                    &state.base_pose,
                    ctx.map,
                    ctx.model.contact_eps,
                    ctx.params.sdf_margin,
                )
                .into_iter()
                .map(|id| {
                    let p = rm.vertices[id].p_ee;
                    state.base_pose * Point3::new(p[0], p[1], p[2])
                })
                .collect()
            };
            let ps = world_pts(&states[i]);
            let pe = world_pts(&states[j]);
            let mut pairs: Vec<(f64, Point3<f64>)> = Vec::new();
            for a in &ps {
                for b in &pe {
                    pairs.push(((a - b).norm(), Point3::from((a.coords + b.coords) * 0.5)));
                }
            }
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            // first candidate that keeps every phase state stable
            let mut applied = false;
            for (_, p_star) in pairs.iter().take(10) {
                let mut trial: Vec<WholeBodyState> = states[i..=j].to_vec();
                let mut ok = true;
                for s in trial.iter_mut() {
                    let target = s.base_pose.inverse() * p_star;
                    let seed = s.limb_q(ctx.model, arm_idx).to_vec();
                    let q = match ik_limb(arm, target, &seed)
                        .or_else(|_| ik_limb(arm, target, &arm.default_config))
                    {
                        Ok(q) => q,
                        Err(_) => {
                            // nearest roadmap vertex to the target position
                            let nearest = rm
                                .vertices
                                .iter()
                                .min_by(|a, b| {
                                    let da = (Point3::new(a.p_ee[0], a.p_ee[1], a.p_ee[2])
                                        - target)
                                        .norm();
                                    let db = (Point3::new(b.p_ee[0], b.p_ee[1], b.p_ee[2])
                                        - target)
                                        .norm();
                                    da.partial_cmp(&db).unwrap()
                                })
                                .unwrap();
                            nearest.q.clone()
                        }
                    };
                    s.set_limb_q(ctx.model, arm_idx, &q);
                    s.contact_points[arm_idx] = Some([p_star.x, p_star.y, p_star.z]);
                    if !is_stable(ctx, s) {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    states.splice(i..=j, trial);
                    applied = true;
                    break;
                }
            }
            if !applied {
                if let Some((_, p_star)) = pairs.first() {
                    for s in states[i..=j].iter_mut() {
                        let target = s.base_pose.inverse() * p_star;
                        let seed = s.limb_q(ctx.model, arm_idx).to_vec();
                        if let Ok(q) = ik_limb(arm, target, &seed) {
                            s.set_limb_q(ctx.model, arm_idx, &q);
                        }
                        s.contact_points[arm_idx] = Some([p_star.x, p_star.y, p_star.z]);
                    }
                }
            }
            i = j + 1;
        }
        states
    }

    /// Replaces large arm jumps between consecutive states with a
    /// collision-checked roadmap path, spliced as intermediate states.
    fn smooth_arm_motions(&self, states: Vec<WholeBodyState>) -> Vec<WholeBodyState> {
        let ctx = self.ctx;
        let (arm_idx, arm) = match ctx.model.arm_limbs().next() {
            Some(x) => x,
            None => return states,
        };
        let rm = match ctx.roadmap_for(&arm.name) {
            Ok(rm) => rm,
            Err(_) => return states,
        };
        let mut out: Vec<WholeBodyState> = Vec::with_capacity(states.len());
        for state in states.into_iter() {
            if let Some(prev) = out.last() {
                let qa = prev.limb_q(ctx.model, arm_idx).to_vec();
                let qb = state.limb_q(ctx.model, arm_idx).to_vec();
                let jump = qa
                    .iter()
                    .zip(&qb)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                if jump > 0.5 && !state.contacts[arm_idx] && !prev.contacts[arm_idx] {
                    let nearest_vertex = |q: &[f64]| {
                        rm.vertices
                            .iter()
                            .min_by(|a, b| {
                                joint_dist(&a.q, q).partial_cmp(&joint_dist(&b.q, q)).unwrap()
                            })
                            .map(|v| v.id)
                            .unwrap()
                    };
                    let va = nearest_vertex(&qa);
                    let vb = nearest_vertex(&qb);
                    let view = invalidate(rm, ctx.model, prev, ctx.map);
                    if view.vertex_valid[va] && view.vertex_valid[vb] {
                        if let Ok(vpath) = search_path(&view, va, vb) {
                            let prev_state = prev.clone();
                            let k = vpath.len();
                            for (step, vid) in vpath.iter().enumerate() {
                                let t = (step + 1) as f64 / (k + 1) as f64;
                                let mut mid = lerp_state(&prev_state, &state, t);
                                mid.set_limb_q(ctx.model, arm_idx, &rm.vertices[*vid].q);
                                out.push(mid);
                            }
                        }
                    }
                }
            }
            out.push(state);
        }
        out
    }

    /// Groups states into constant-contact phases and assigns durations
    /// from the base speed.
    fn assign_phases(&self, states: Vec<WholeBodyState>) -> Vec<PlanPhase> {
        let mut phases: Vec<PlanPhase> = Vec::new();
        for state in states.into_iter() {
            let start_new = phases
                .last()
                .map_or(true, |p: &PlanPhase| p.contacts != state.contacts);
            if start_new {
                // carry the boundary state into both phases so phases
                // chain continuously
                let boundary = phases.last().and_then(|p| p.states.last().cloned());
                let mut phase_states = Vec::new();
                if let Some(b) = boundary {
                    let mut b = b;
                    b.contacts = state.contacts.clone();
                    b.contact_points = state.contact_points.clone();
                    phase_states.push(b);
                }
                phase_states.push(state.clone());
                phases.push(PlanPhase {
                    duration: 0.0,
                    contacts: state.contacts.clone(),
                    states: phase_states,
                });
            } else {
                phases.last_mut().unwrap().states.push(state);
            }
        }
        for phase in &mut phases {
            let arc: f64 = phase
                .states
                .windows(2)
                .map(|w| {
                    (w[0].base_pose.translation.vector - w[1].base_pose.translation.vector).norm()
                })
                .sum();
            phase.duration = (arc / self.cfg.base_speed).max(self.cfg.min_phase_duration);
        }
        phases
    }
}

/// Linear interpolation between two whole-body states.
pub(crate) fn lerp_state(a: &WholeBodyState, b: &WholeBodyState, t: f64) -> WholeBodyState {
    let trans = a.base_pose.translation.vector.lerp(&b.base_pose.translation.vector, t);
    let rot = a.base_pose.rotation.slerp(&b.base_pose.rotation, t);
    let q: Vec<f64> = a
        .q
        .iter()
        .zip(&b.q)
        .map(|(x, y)| x + (y - x) * t)
        .collect();
    WholeBodyState {
        base_pose: Isometry3::from_parts(Translation3::from(trans), rot),
        q,
        contacts: a.contacts.clone(),
        contact_points: a.contact_points.clone(),
    }
}

/// Enforces the one-contact-change rule: between states differing in
/// more than one flag, inserts intermediate states establishing new
/// contacts first, then releasing old ones, one at a time.
pub fn repair_contact_schedule(states: Vec<WholeBodyState>) -> Vec<WholeBodyState> {
    let mut out: Vec<WholeBodyState> = Vec::with_capacity(states.len());
    for state in states.into_iter() {
        if let Some(prev) = out.last() {
            if prev.contact_changes(&state) > 1 {
                let n = state.contacts.len();
                let gains: Vec<usize> = (0..n)
                    .filter(|&i| state.contacts[i] && !prev.contacts[i])
                    .collect();
                let losses: Vec<usize> = (0..n)
                    .filter(|&i| !state.contacts[i] && prev.contacts[i])
                    .collect();
                let mut cur = prev.clone();
                // establish first (support grows), then release
                for &i in &gains {
                    cur.contacts[i] = true;
                    cur.contact_points[i] = state.contact_points[i];
                    out.push(cur.clone());
                }
                for &i in losses.iter().take(losses.len().saturating_sub(1)) {
                    cur.contacts[i] = false;
                    cur.contact_points[i] = None;
                    out.push(cur.clone());
                }
            }
        }
        out.push(state);
    }
    out
}
