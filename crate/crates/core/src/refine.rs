//! Trajectory refinement: transcribes a whole-body path into a knot-based
//! feasibility problem over the terrain and solves it with a quadratic
//! penalty method. The inner loop is gradient descent with backtracking;
//! every gradient contribution that flows through an interpolated terrain
//! layer (elevation or signed distance) is norm-clipped before it is
//! accumulated.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{GridMap, InterpolationMethod};
use crate::init_planner::WholeBodyPath;
use crate::robot::{limb_frames, min_pair_distance, wheel_contact_point, RobotModel};
use crate::terrain::{LAYER_ELEVATION, LAYER_SDF};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("knot spacing must be positive, got {0}")]
    InvalidDt(f64),
    #[error("path has no states")]
    EmptyPath,
}

pub type Result<T> = std::result::Result<T, RefineError>;

/// Residual reported for a contact whose terrain query has no data; it
/// carries no gradient, so such knots cannot be repaired by descent.
const MISSING_TERRAIN_RESIDUAL: f64 = 1.0;

/// One decision state: base pose as (x, y, z, roll, pitch, yaw) plus the
/// stacked joint vector. Contact flags are parameters from the schedule,
/// never decision variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Knot {
    pub base: [f64; 6],
    pub q: Vec<f64>,
    pub contacts: Vec<bool>,
}

impl Knot {
    pub fn base_pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.base[0], self.base[1], self.base[2]),
            UnitQuaternion::from_euler_angles(self.base[3], self.base[4], self.base[5]),
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    pub contact_height: f64,
    pub traversability: f64,
    pub rolling: f64,
    pub collision: f64,
    pub joint_limits: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            contact_height: 0.02,
            traversability: 1e-6,
            rolling: 0.01,
            collision: 1e-6,
            joint_limits: 1e-9,
        }
    }
}

pub struct RefinementProblem<'a> {
    pub knots: Vec<Knot>,
    pub dt: f64,
    pub map: &'a GridMap,
    pub model: &'a RobotModel,
    /// Minimum allowed distance between non-adjacent collision bodies.
    pub d_min: f64,
    /// Required signed-distance clearance at contact points.
    pub trav_delta: f64,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Norm cap applied to each terrain-derived gradient term.
    pub clip_threshold: f64,
    pub initial_weight: f64,
    pub growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Initial/maximum step length for backtracking descent.
    pub step_init: f64,
    pub step_max: f64,
    /// Finite-difference step for residual derivatives.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            clip_threshold: 10.0,
            initial_weight: 10.0,
            growth: 5.0,
            max_outer: 12,
            max_inner: 400,
            step_init: 0.05,
            step_max: 1.0,
            fd_step: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FamilyViolations {
    pub contact_height: f64,
    pub traversability: f64,
    pub rolling: f64,
    pub collision: f64,
    pub joint_limits: f64,
}

impl FamilyViolations {
    pub fn max(&self) -> f64 {
        self.contact_height
            .max(self.traversability)
            .max(self.rolling)
            .max(self.collision)
            .max(self.joint_limits)
    }

    pub fn within(&self, tol: &Tolerances) -> bool {
        self.contact_height <= tol.contact_height
            && self.traversability <= tol.traversability
            && self.rolling <= tol.rolling
            && self.collision <= tol.collision
            && self.joint_limits <= tol.joint_limits
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterRecord {
    pub weight: f64,
    pub inner_iterations: usize,
    pub violations: FamilyViolations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub success: bool,
    pub initial: FamilyViolations,
    pub final_violations: FamilyViolations,
    pub outer: Vec<OuterRecord>,
    pub wall_time_s: f64,
}

// --- transcription ------------------------------------------------------

/// Resamples a whole-body path at fixed Δt into decision knots,
/// initializing every variable from the path and freezing the contact
/// schedule per knot.
pub fn transcribe<'a>(
    path: &WholeBodyPath,
    map: &'a GridMap,
    model: &'a RobotModel,
    dt: f64,
) -> Result<RefinementProblem<'a>> {
    if dt <= 0.0 {
        return Err(RefineError::InvalidDt(dt));
    }
    // timeline: (start time, end time, state a, state b) per segment
    let mut segments = Vec::new();
    let mut t0 = 0.0;
    let mut any_state = false;
    for phase in &path.phases {
        any_state |= !phase.states.is_empty();
        let m = phase.states.len();
        if m < 2 {
            t0 += phase.duration;
            continue;
        }
        let dists: Vec<f64> = phase
            .states
            .windows(2)
            .map(|w| {
                (w[0].base_pose.translation.vector - w[1].base_pose.translation.vector).norm()
            })
            .collect();
        let total: f64 = dists.iter().sum();
        let mut acc = 0.0;
        for (i, d) in dists.iter().enumerate() {
            let (fa, fb) = if total > 1e-12 {
                (acc / total, (acc + d) / total)
            } else {
                (i as f64 / (m - 1) as f64, (i + 1) as f64 / (m - 1) as f64)
            };
            segments.push((
                t0 + fa * phase.duration,
                t0 + fb * phase.duration,
                &phase.states[i],
                &phase.states[i + 1],
            ));
            acc += d;
        }
        t0 += phase.duration;
    }
    if !any_state {
        return Err(RefineError::EmptyPath);
    }
    let total_t = t0;

    let state_to_knot = |s: &crate::robot::WholeBodyState| -> Knot {
        let t = s.base_pose.translation;
        let (roll, pitch, yaw) = s.base_pose.rotation.euler_angles();
        Knot {
            base: [t.x, t.y, t.z, roll, pitch, yaw],
            q: s.q.clone(),
            contacts: s.contacts.clone(),
        }
    };

    let mut knots = Vec::new();
    let n_steps = (total_t / dt).floor() as usize;
    let mut times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    if total_t - n_steps as f64 * dt > 1e-9 {
        times.push(total_t);
    }
    if times.len() < 2 {
        times = vec![0.0, total_t.max(1e-9)];
    }
    for &t in &times {
        if segments.is_empty() {
            // single-state path
            let s = path
                .phases
                .iter()
                .flat_map(|p| p.states.iter())
                .next()
                .ok_or(RefineError::EmptyPath)?;
            knots.push(state_to_knot(s));
            continue;
        }
        let seg = segments
            .iter()
            .find(|(a, b, _, _)| t >= *a - 1e-9 && t <= *b + 1e-9)
            .unwrap_or_else(|| segments.last().unwrap());
        let frac = if seg.1 - seg.0 > 1e-12 {
            ((t - seg.0) / (seg.1 - seg.0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let s = crate::init_planner::lerp_state(seg.2, seg.3, frac);
        knots.push(state_to_knot(&s));
    }

    Ok(RefinementProblem {
        knots,
        dt,
        map,
        model,
        d_min: 0.15,
        trav_delta: 0.02,
        tolerances: Tolerances::default(),
    })
}

impl<'a> RefinementProblem<'a> {
    /// Same schedule, but all interior knots replaced by straight-line
    /// interpolation between the first and last knot.
    pub fn with_linear_seed(&self) -> RefinementProblem<'a> {
        let n = self.knots.len();
        let first = self.knots.first().cloned();
        let last = self.knots.last().cloned();
        let mut knots = self.knots.clone();
        if let (Some(a), Some(b)) = (first, last) {
            for (i, k) in knots.iter_mut().enumerate() {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                for j in 0..6 {
                    k.base[j] = a.base[j] + (b.base[j] - a.base[j]) * t;
                }
                for j in 0..k.q.len() {
                    k.q[j] = a.q[j] + (b.q[j] - a.q[j]) * t;
                }
            }
        }
        RefinementProblem {
            knots,
            dt: self.dt,
            map: self.map,
            model: self.model,
            d_min: self.d_min,
            trav_delta: self.trav_delta,
            tolerances: self.tolerances,
        }
    }

    fn nq(&self) -> usize {
        self.model.limbs.iter().map(|l| l.joints.len()).sum()
    }

    fn nv(&self) -> usize {
        6 + self.nq()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.knots.len() * self.nv());
        for k in &self.knots {
            v.extend_from_slice(&k.base);
            v.extend_from_slice(&k.q);
        }
        v
    }

    pub fn unpack(&self, vars: &[f64]) -> Vec<Knot> {
        let nv = self.nv();
        self.knots
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let b = &vars[i * nv..i * nv + 6];
                Knot {
                    base: [b[0], b[1], b[2], b[3], b[4], b[5]],
                    q: vars[i * nv + 6..(i + 1) * nv].to_vec(),
                    contacts: k.contacts.clone(),
                }
            })
            .collect()
    }

    fn base_pose_at(&self, vars: &[f64], k: usize) -> Isometry3<f64> {
        let o = k * self.nv();
        Isometry3::from_parts(
            Translation3::new(vars[o], vars[o + 1], vars[o + 2]),
            UnitQuaternion::from_euler_angles(vars[o + 3], vars[o + 4], vars[o + 5]),
        )
    }

    fn limb_q_range(&self, limb_idx: usize) -> (usize, usize) {
        let mut off = 6;
        for l in &self.model.limbs[..limb_idx] {
            off += l.joints.len();
        }
        (off, off + self.model.limbs[limb_idx].joints.len())
    }

    /// World contact point and wheel heading (unit, horizontal) of one
    /// limb at one knot.
    fn contact_and_heading(
        &self,
        vars: &[f64],
        k: usize,
        limb_idx: usize,
    ) -> (Point3<f64>, Option<Vector3<f64>>) {
        let base = self.base_pose_at(vars, k);
        let limb = &self.model.limbs[limb_idx];
        let (a, b) = self.limb_q_range(limb_idx);
        let o = k * self.nv();
        let frames = limb_frames(limb, &vars[o + a..o + b]);
        let last = frames.last().unwrap();
        let ee = base * Point3::from(last.translation.vector);
        let p = if limb.wheeled {
            wheel_contact_point(self.model, ee)
        } else {
            ee
        };
        let hx = base.rotation * (last.rotation * Vector3::x());
        let mut h = Vector3::new(hx.x, hx.y, 0.0);
        let heading = if h.norm() > 1e-9 {
            h.normalize_mut();
            Some(h)
        } else {
            None
        };
        (p, heading)
    }

    fn elevation(&self, xy: [f64; 2]) -> Option<f64> {
        self.map
            .value_at(LAYER_ELEVATION, xy, InterpolationMethod::Bicubic)
            .ok()
            .filter(|h| h.is_finite())
    }

    fn sdf(&self, xy: [f64; 2]) -> Option<f64> {
        if let Ok(s) = self.map.value_at(LAYER_SDF, xy, InterpolationMethod::Bicubic) {
            if s.is_finite() {
                return Some(s);
            }
        }
        // an all-traversable map stores +inf, which poisons the
        // interpolation stencil; fall back to the nearest cell value
        let nn = self
            .map
            .value_at(LAYER_SDF, xy, InterpolationMethod::NearestNeighbor)
            .ok()?;
        if nn == f64::INFINITY {
            Some(1e9)
        } else if nn.is_finite() {
            Some(nn)
        } else {
            None
        }
    }

    fn state_at(&self, vars: &[f64], k: usize) -> crate::robot::WholeBodyState {
        let nv = self.nv();
        crate::robot::WholeBodyState {
            base_pose: self.base_pose_at(vars, k),
            q: vars[k * nv + 6..(k + 1) * nv].to_vec(),
            contacts: self.knots[k].contacts.clone(),
            contact_points: vec![None; self.model.limbs.len()],
        }
    }
}

// --- constraint terms ---------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    /// Contact-point height above the interpolated surface (equality).
    ContactHeight { k: usize, limb: usize },
    /// Hinge on required signed-distance clearance at the contact.
    Traversability { k: usize, limb: usize },
    /// Lateral slip of a rolling contact between knots k and k+1.
    RollingLateral { k: usize, limb: usize },
    /// Vertical slip relative to the terrain tangent between knots.
    RollingVertical { k: usize, limb: usize },
    /// Hinge on the minimum distance between collision bodies.
    Collision { k: usize },
}

impl Term {
    fn terrain_coupled(&self) -> bool {
        !matches!(self, Term::Collision { .. })
    }

    fn is_hinge(&self) -> bool {
        matches!(self, Term::Traversability { .. } | Term::Collision { .. })
    }
}

pub struct ConstraintReport {
    pub contact_height: Vec<f64>,
    pub traversability: Vec<f64>,
    /// Per knot pair and wheeled contact limb: |lateral| + |vertical|.
    pub rolling: Vec<f64>,
    pub collision: Vec<f64>,
    pub joint_limits: Vec<f64>,
}

impl ConstraintReport {
    pub fn violations(&self) -> FamilyViolations {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        FamilyViolations {
            contact_height: m(&self.contact_height),
            traversability: self.traversability.iter().fold(0.0f64, |a, &b| a.max(b)),
            rolling: self.rolling.iter().fold(0.0f64, |a, &b| a.max(b)),
            collision: self.collision.iter().fold(0.0f64, |a, &b| a.max(b)),
            joint_limits: self.joint_limits.iter().fold(0.0f64, |a, &b| a.max(b)),
        }
    }
}

impl<'a> RefinementProblem<'a> {
    fn terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        let n = self.knots.len();
        for k in 0..n {
            for (l, _) in self.model.limbs.iter().enumerate() {
                if self.knots[k].contacts[l] {
                    out.push(Term::ContactHeight { k, limb: l });
                    out.push(Term::Traversability { k, limb: l });
                }
            }
            out.push(Term::Collision { k });
        }
        for k in 0..n.saturating_sub(1) {
            for (l, limb) in self.model.limbs.iter().enumerate() {
                if limb.wheeled && self.knots[k].contacts[l] && self.knots[k + 1].contacts[l] {
                    out.push(Term::RollingLateral { k, limb: l });
                    out.push(Term::RollingVertical { k, limb: l });
                }
            }
        }
        out
    }

    fn residual(&self, term: Term, vars: &[f64]) -> f64 {
        match term {
            Term::ContactHeight { k, limb } => {
                let (p, _) = self.contact_and_heading(vars, k, limb);
                match self.elevation([p.x, p.y]) {
                    Some(h) => p.z - h,
                    None => MISSING_TERRAIN_RESIDUAL,
                }
            }
            Term::Traversability { k, limb } => {
                let (p, _) = self.contact_and_heading(vars, k, limb);
                match self.sdf([p.x, p.y]) {
                    Some(s) => (self.trav_delta - s).max(0.0),
                    None => self.trav_delta + MISSING_TERRAIN_RESIDUAL,
                }
            }
            Term::RollingLateral { k, limb } => {
                let (p0, h0) = self.contact_and_heading(vars, k, limb);
                let (p1, h1) = self.contact_and_heading(vars, k + 1, limb);
                let lat = match (h0, h1) {
                    (Some(a), Some(b)) => {
                        let h = (a + b).normalize();
                        let lateral = Vector3::z().cross(&h);
                        (p1 - p0).dot(&lateral)
                    }
                    _ => 0.0,
                };
                lat
            }
            Term::RollingVertical { k, limb } => {
                let (p0, _) = self.contact_and_heading(vars, k, limb);
                let (p1, _) = self.contact_and_heading(vars, k + 1, limb);
                match (self.elevation([p0.x, p0.y]), self.elevation([p1.x, p1.y])) {
                    (Some(a), Some(b)) => (p1.z - p0.z) - (b - a),
                    _ => 0.0, // covered by the ContactHeight sentinel
                }
            }
            Term::Collision { k } => {
                let state = self.state_at(vars, k);
                let (d, _) = min_pair_distance(self.model, &state);
                (self.d_min - d).max(0.0)
            }
        }
    }

    fn joint_hinges(&self, vars: &[f64]) -> Vec<f64> {
        let nv = self.nv();
        let mut out = Vec::new();
        for k in 0..self.knots.len() {
            let mut j = 0;
            for limb in &self.model.limbs {
                for joint in &limb.joints {
                    let q = vars[k * nv + 6 + j];
                    out.push((q - joint.max).max(0.0) + (joint.min - q).max(0.0));
                    j += 1;
                }
            }
        }
        out
    }

    /// Evaluates every constraint family on a variable vector.
    pub fn eval_constraints(&self, vars: &[f64]) -> ConstraintReport {
        let mut report = ConstraintReport {
            contact_height: Vec::new(),
            traversability: Vec::new(),
            rolling: Vec::new(),
            collision: Vec::new(),
            joint_limits: self.joint_hinges(vars),
        };
        let n = self.knots.len();
        // rolling reported as combined slip per (knot pair, limb)
        for k in 0..n.saturating_sub(1) {
            for (l, limb) in self.model.limbs.iter().enumerate() {
                if limb.wheeled && self.knots[k].contacts[l] && self.knots[k + 1].contacts[l] {
                    let lat = self.residual(Term::RollingLateral { k, limb: l }, vars);
                    let ver = self.residual(Term::RollingVertical { k, limb: l }, vars);
                    report.rolling.push(lat.abs() + ver.abs());
                }
            }
        }
        for term in self.terms() {
            let r = self.residual(term, vars);
            match term {
                Term::ContactHeight { .. } => report.contact_height.push(r),
                Term::Traversability { .. } => report.traversability.push(r),
                Term::Collision { .. } => report.collision.push(r),
                _ => {}
            }
        }
        report
    }

    /// Coordinates a term's residual can depend on.
    fn support(&self, term: Term) -> Vec<usize> {
        let nv = self.nv();
        let block = |k: usize, limb: Option<usize>| -> Vec<usize> {
            let mut c: Vec<usize> = (k * nv..k * nv + 6).collect();
            match limb {
                Some(l) => {
                    let (a, b) = self.limb_q_range(l);
                    c.extend(k * nv + a..k * nv + b);
                }
                None => c.extend(k * nv + 6..(k + 1) * nv),
            }
            c
        };
        match term {
            Term::ContactHeight { k, limb } | Term::Traversability { k, limb } => {
                block(k, Some(limb))
            }
            Term::RollingLateral { k, limb } | Term::RollingVertical { k, limb } => {
                let mut c = block(k, Some(limb));
                c.extend(block(k + 1, Some(limb)));
                c
            }
            Term::Collision { k } => block(k, None),
        }
    }

    /// Scaled penalty value: w · Σ r² over all constraint terms.
    pub fn penalty(&self, vars: &[f64], w: f64) -> f64 {
        let mut p = 0.0;
        for term in self.terms() {
            let r = self.residual(term, vars);
            p += r * r;
        }
        for r in self.joint_hinges(vars) {
            p += r * r;
        }
        w * p
    }

    /// Assembled penalty gradient. Each term's contribution is computed
    /// by central finite differences of its residual over its support,
    /// and terrain-coupled terms are norm-clipped at `clip` before
    /// accumulation. Endpoint base poses are pinned (zero gradient).
    pub fn gradient(&self, vars: &[f64], w: f64, clip: f64, fd_step: f64) -> Vec<f64> {
        let mut g = vec![0.0; vars.len()];
        let mut work = vars.to_vec();
        for term in self.terms() {
            let r = self.residual(term, vars);
            if term.is_hinge() && r <= 0.0 {
                continue;
            }
            if r.abs() < 1e-14 {
                continue;
            }
            let coords = self.support(term);
            let mut contrib = vec![0.0; coords.len()];
            for (i, &c) in coords.iter().enumerate() {
                let orig = work[c];
                work[c] = orig + fd_step;
                let rp = self.residual(term, &work);
                work[c] = orig - fd_step;
                let rm = self.residual(term, &work);
                work[c] = orig;
                contrib[i] = 2.0 * w * r * (rp - rm) / (2.0 * fd_step);
            }
            if term.terrain_coupled() {
                let norm = contrib.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    for x in contrib.iter_mut() {
                        *x *= s;
                    }
                }
            }
            for (i, &c) in coords.iter().enumerate() {
                g[c] += contrib[i];
            }
        }
        // joint-limit hinges: analytic
        let nv = self.nv();
        for k in 0..self.knots.len() {
            let mut j = 0;
            for limb in &self.model.limbs {
                for joint in &limb.joints {
                    let idx = k * nv + 6 + j;
                    let q = vars[idx];
                    if q > joint.max {
                        g[idx] += 2.0 * w * (q - joint.max);
                    } else if q < joint.min {
                        g[idx] -= 2.0 * w * (joint.min - q);
                    }
                    j += 1;
                }
            }
        }
        // pin first/last base poses
        let last = self.knots.len() - 1;
        for j in 0..6 {
            g[j] = 0.0;
            g[last * nv + j] = 0.0;
        }
        g
    }
}

// --- solver -------------------------------------------------------------

/// Quadratic-penalty solve to constraint feasibility. Failure is a
/// structured report, not an error.
pub fn solve(prob: &RefinementProblem, cfg: &SolverConfig) -> (Vec<Knot>, SolveReport) {
    let t_start = std::time::Instant::now();
    let mut vars = prob.pack();
    let initial = prob.eval_constraints(&vars).violations();
    let mut outer_records = Vec::new();

    if initial.within(&prob.tolerances) {
        return (
            prob.unpack(&vars),
            SolveReport {
                success: true,
                initial,
                final_violations: initial,
                outer: outer_records,
                wall_time_s: t_start.elapsed().as_secs_f64(),
            },
        );
    }

    let mut w = cfg.initial_weight;
    let mut best_vars = vars.clone();
    let mut best_viol = initial;
    let mut success = false;
    for _outer in 0..cfg.max_outer {
        let mut alpha = cfg.step_init;
        let mut inner_done = 0;
        for _inner in 0..cfg.max_inner {
            inner_done += 1;
            let g = prob.gradient(&vars, w, cfg.clip_threshold, cfg.fd_step);
            let gn2: f64 = g.iter().map(|x| x * x).sum();
            if gn2 < 1e-20 {
                break;
            }
            let p0 = prob.penalty(&vars, w);
            if p0 < 1e-18 {
                break;
            }
            let mut accepted = false;
            let mut a = alpha;
            for _bt in 0..40 {
                let trial: Vec<f64> = vars.iter().zip(&g).map(|(v, gi)| v - a * gi).collect();
                let p1 = prob.penalty(&trial, w);
                if p1 <= p0 - 1e-4 * a * gn2 {
                    vars = trial;
                    alpha = (a * 1.5).min(cfg.step_max);
                    accepted = true;
                    break;
                }
                a *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let viol = prob.eval_constraints(&vars).violations();
        // keep outer progress monotone in max violation
        if viol.max() <= best_viol.max() + 1e-12 {
            best_vars = vars.clone();
            best_viol = viol;
        } else {
            vars = best_vars.clone();
        }
        outer_records.push(OuterRecord {
            weight: w,
            inner_iterations: inner_done,
            violations: best_viol,
        });
        if best_viol.within(&prob.tolerances) {
            success = true;
            break;
        }
        w *= cfg.growth;
    }

    (
        prob.unpack(&best_vars),
        SolveReport {
            success,
            initial,
            final_violations: best_viol,
            outer: outer_records,
            wall_time_s: t_start.elapsed().as_secs_f64(),
        },
    )
}

/// Compares the assembled (unclipped) penalty gradient against central
/// finite differences of the penalty value on a random coordinate
/// subset; returns the max relative error.
pub fn check_gradients(
    prob: &RefinementProblem,
    vars: &[f64],
    step: f64,
    n_samples: usize,
    seed: u64,
) -> f64 {
    let g = prob.gradient(vars, 1.0, f64::INFINITY, step);
    let nv = 6 + prob.model.limbs.iter().map(|l| l.joints.len()).sum::<usize>();
    let last = prob.knots.len() - 1;
    let free: Vec<usize> = (0..vars.len())
        .filter(|&i| !(i < 6 || (i >= last * nv && i < last * nv + 6)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = vars.to_vec();
    let mut max_err = 0.0f64;
    for _ in 0..n_samples {
        let c = free[rng.gen_range(0..free.len())];
        let orig = work[c];
        work[c] = orig + step;
        let pp = prob.penalty(&work, 1.0);
        work[c] = orig - step;
        let pm = prob.penalty(&work, 1.0);
        work[c] = orig;
        let fd = (pp - pm) / (2.0 * step);
        let denom = g[c].abs().max(fd.abs()).max(1e-6);
        max_err = max_err.max((g[c] - fd).abs() / denom);
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::map_from_fn;
    use crate::init_planner::{PlanMetrics, PlanPhase, Planner, PlannerConfig, WholeBodyPath};
    use crate::reeds_shepp::SE2Pose;
    use crate::robot::{default_model, WholeBodyState};
    use crate::roadmap::{build, LimbRoadmap};
    use crate::sampler::{SamplerContext, SamplerParams};
    use crate::terrain::{
        classify_traversability, compute_sdf, derive_layers, TraversabilityParams, RADIUS_LARGE,
        RADIUS_SMALL,
    };
    use approx::assert_abs_diff_eq;
    use std::sync::OnceLock;

    fn model() -> &'static RobotModel {
        static CELL: OnceLock<RobotModel> = OnceLock::new();
        CELL.get_or_init(default_model)
    }

    fn shared_roadmaps() -> &'static Vec<LimbRoadmap> {
        static CELL: OnceLock<Vec<LimbRoadmap>> = OnceLock::new();
        CELL.get_or_init(|| {
            model()
                .limbs
                .iter()
                .map(|l| {
                    let (n, d) = if l.wheeled { (250, 0.4) } else { (1200, 1.0) };
                    build(model(), &l.name, n, 8, d, 7).unwrap()
                })
                .collect()
        })
    }

    fn prepared_map(
        res: f64,
        origin: [f64; 2],
        rows: usize,
        cols: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> GridMap {
        let mut map = map_from_fn(res, origin, rows, cols, LAYER_ELEVATION, f).unwrap();
        derive_layers(&mut map, RADIUS_SMALL, RADIUS_LARGE).unwrap();
        classify_traversability(&mut map, &TraversabilityParams::default()).unwrap();
        compute_sdf(&mut map).unwrap();
        map
    }

    /// A planner run on flat ground shared across tests.
    fn flat_plan() -> &'static (GridMap, WholeBodyPath) {
        static CELL: OnceLock<(GridMap, WholeBodyPath)> = OnceLock::new();
        CELL.get_or_init(|| {
            let map = prepared_map(0.1, [-2.0, -2.0], 60, 120, |_, _| 0.0);
            let ctx = SamplerContext {
                model: model(),
                map: &map,
                roadmaps: shared_roadmaps(),
                params: SamplerParams::default(),
            };
            let planner = Planner::new(
                &ctx,
                PlannerConfig {
                    iteration_budget: Some(80),
                    seed: 3,
                    ..Default::default()
                },
            );
            let plan = planner
                .plan(&SE2Pose::new(0.0, 0.5, 0.0), &SE2Pose::new(5.0, 0.5, 0.0))
                .expect("flat plan");
            drop(ctx);
            (map, plan)
        })
    }

    fn synthetic_path(duration: f64) -> WholeBodyPath {
        let m = model();
        let mk = |x: f64| WholeBodyState {
            base_pose: Isometry3::translation(x, 0.0, 1.2),
            q: m.limbs.iter().flat_map(|l| l.default_config.clone()).collect(),
            contacts: vec![true, true, true, true, false],
            contact_points: vec![None; 5],
        };
        WholeBodyPath {
            phases: vec![PlanPhase {
                duration,
                contacts: vec![true, true, true, true, false],
                states: vec![mk(0.0), mk(1.0), mk(2.0)],
            }],
            metrics: PlanMetrics::default(),
        }
    }

    #[test]
    fn transcribe_knot_count_and_errors() {
        let map = prepared_map(0.1, [-3.0, -3.0], 64, 64, |_, _| 0.0);
        let prob = transcribe(&synthetic_path(10.0), &map, model(), 0.5).unwrap();
        assert_eq!(prob.knots.len(), 21);
        assert!(matches!(
            transcribe(&synthetic_path(10.0), &map, model(), 0.0),
            Err(RefineError::InvalidDt(_))
        ));
        let empty = WholeBodyPath {
            phases: vec![],
            metrics: PlanMetrics::default(),
        };
        assert!(matches!(
            transcribe(&empty, &map, model(), 0.5),
            Err(RefineError::EmptyPath)
        ));
    }

    #[test]
    fn seed_from_planner_has_small_violations() {
        let (map, plan) = flat_plan();
        let prob = transcribe(plan, map, model(), 0.5).unwrap();
        let vars = prob.pack();
        let report = prob.eval_constraints(&vars);
        let v = report.violations();
        assert!(
            v.contact_height <= 0.1,
            "contact height {}",
            v.contact_height
        );
        // turning segments induce bounded lateral wheel slip at the
        // 0.5 s knot spacing; straight segments contribute none
        assert!(v.rolling <= 0.2, "rolling {}", v.rolling);
        assert!(v.joint_limits <= 1e-9);
        assert!(v.collision <= 1e-9);
    }

    #[test]
    fn contact_on_surface_gives_zero_residual() {
        let map = prepared_map(0.1, [-3.0, -3.0], 80, 80, |_, _| 0.25);
        // place a knot whose wheel sits exactly on the surface
        let mut prob = transcribe(&synthetic_path(1.0), &map, model(), 0.5).unwrap();
        // adjust base height so front-left contact is exactly at 0.25
        let vars0 = prob.pack();
        let (p, _) = prob.contact_and_heading(&vars0, 0, 0);
        let shift = 0.25 - p.z;
        for k in prob.knots.iter_mut() {
            k.base[2] += shift;
        }
        let vars = prob.pack();
        let r = prob.residual(Term::ContactHeight { k: 0, limb: 0 }, &vars);
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn sideways_contact_motion_is_rolling_slip() {
        let map = prepared_map(0.1, [-3.0, -3.0], 80, 80, |_, _| 0.0);
        let mut prob = transcribe(&synthetic_path(0.5), &map, model(), 0.5).unwrap();
        // knot 1: same configuration shifted 0.1 m sideways
        prob.knots.truncate(2);
        prob.knots[1] = prob.knots[0].clone();
        prob.knots[1].base[1] += 0.1;
        let vars = prob.pack();
        let lat = prob.residual(Term::RollingLateral { k: 0, limb: 0 }, &vars);
        let ver = prob.residual(Term::RollingVertical { k: 0, limb: 0 }, &vars);
        assert_abs_diff_eq!(lat.abs(), 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(ver, 0.0, epsilon = 1e-9);
        // forward motion rolls freely
        prob.knots[1] = prob.knots[0].clone();
        prob.knots[1].base[0] += 0.1;
        let vars = prob.pack();
        let lat = prob.residual(Term::RollingLateral { k: 0, limb: 0 }, &vars);
        assert_abs_diff_eq!(lat, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences_on_smooth_terrain() {
        let map = prepared_map(0.1, [-3.0, -3.0], 100, 100, |x, y| {
            0.2 * (0.8 * x).sin() * (0.6 * y).cos()
        });
        let mut prob = transcribe(&synthetic_path(2.0), &map, model(), 0.5).unwrap();
        prob.trav_delta = 0.0;
        let mut vars = prob.pack();
        // random interior perturbation so hinges and equalities are active
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in vars.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let err6 = check_gradients(&prob, &vars, 1e-6, 60, 4);
        assert!(err6 <= 1e-4, "relative error {err6}");
        let err4 = check_gradients(&prob, &vars, 1e-4, 60, 4);
        assert!(err6 <= err4 + 1e-12, "err(1e-6)={err6} err(1e-4)={err4}");
    }

    #[test]
    fn flat_terrain_has_no_horizontal_terrain_gradient() {
        let map = prepared_map(0.1, [-3.0, -3.0], 80, 80, |_, _| 0.0);
        let mut prob = transcribe(&synthetic_path(1.0), &map, model(), 0.5).unwrap();
        prob.knots.truncate(3); // retain an interior free knot
        let mut vars = prob.pack();
        let nv = prob.nv();
        vars[nv + 2] += 0.1; // raise interior knot: contact-height residual active
        let g = prob.gradient(&vars, 1.0, f64::INFINITY, 1e-6);
        // height error pulls on z but not on x/y (flat surface)
        assert!(g[nv + 2].abs() > 1e-3);
        assert!(g[nv].abs() <= 1e-6, "gx {}", g[nv]);
        assert!(g[nv + 1].abs() <= 1e-6, "gy {}", g[nv + 1]);
    }

    #[test]
    fn solve_converges_from_planner_seed_on_flat() {
        let (map, plan) = flat_plan();
        let prob = transcribe(plan, map, model(), 0.5).unwrap();
        let cfg = SolverConfig::default();
        let (knots, report) = solve(&prob, &cfg);
        assert!(report.success, "final {:?}", report.final_violations);
        // schedule preserved
        for (a, b) in knots.iter().zip(&prob.knots) {
            assert_eq!(a.contacts, b.contacts);
        }
        // endpoints pinned
        for j in 0..6 {
            assert_abs_diff_eq!(knots[0].base[j], prob.knots[0].base[j], epsilon = 1e-9);
            let l = knots.len() - 1;
            assert_abs_diff_eq!(knots[l].base[j], prob.knots[l].base[j], epsilon = 1e-9);
        }
        // accepted outer progress is monotone
        for w in report.outer.windows(2) {
            assert!(w[1].violations.max() <= w[0].violations.max() + 1e-12);
        }
    }

    #[test]
    fn satisfied_seed_succeeds_immediately() {
        let (map, plan) = flat_plan();
        let prob = transcribe(plan, map, model(), 0.5).unwrap();
        // solve once, then re-solve from the refined knots
        let (knots, report) = solve(&prob, &SolverConfig::default());
        assert!(report.success);
        let prob2 = RefinementProblem {
            knots,
            dt: prob.dt,
            map: prob.map,
            model: prob.model,
            d_min: prob.d_min,
            trav_delta: prob.trav_delta,
            tolerances: prob.tolerances,
        };
        let (_, report2) = solve(&prob2, &SolverConfig::default());
        assert!(report2.success);
        assert_eq!(report2.outer.len(), 0, "expected immediate success");
    }

    #[test]
    fn missing_terrain_under_contact_is_a_stuck_violation() {
        // all-contact schedule with a contact over a no-data chasm
        let map = prepared_map(0.1, [-8.0, -8.0], 160, 160, |x, _| {
            if (2.0..5.0).contains(&x) {
                f64::NAN
            } else {
                0.0
            }
        });
        let mut prob = transcribe(&synthetic_path(0.5), &map, model(), 0.5).unwrap();
        prob.knots.truncate(2);
        for k in prob.knots.iter_mut() {
            k.base[0] = 1.3; // front contacts land in the chasm
        }
        let vars = prob.pack();
        let r = prob.residual(Term::ContactHeight { k: 0, limb: 0 }, &vars);
        assert_abs_diff_eq!(r, MISSING_TERRAIN_RESIDUAL, epsilon = 1e-12);
        // no gradient information flows from the sentinel
        let g = prob.gradient(&vars, 1.0, f64::INFINITY, 1e-6);
        let nv = prob.nv();
        // knot 1 (free) still has the sentinel but no pull toward data
        let (_, report) = solve(
            &prob,
            &SolverConfig {
                max_outer: 3,
                max_inner: 50,
                ..Default::default()
            },
        );
        assert!(!report.success);
        assert!(report.final_violations.contact_height >= MISSING_TERRAIN_RESIDUAL - 1e-9);
        let _ = g[nv];
    }

    #[test]
    fn linear_seed_replaces_interior_knots() {
        let (map, plan) = flat_plan();
        let prob = transcribe(plan, map, model(), 0.5).unwrap();
        let lin = prob.with_linear_seed();
        assert_eq!(lin.knots.len(), prob.knots.len());
        for j in 0..6 {
            assert_abs_diff_eq!(lin.knots[0].base[j], prob.knots[0].base[j], epsilon = 1e-12);
        }
        let n = lin.knots.len();
        let mid = &lin.knots[n / 2];
        let expect =
            prob.knots[0].base[0] + (prob.knots[n - 1].base[0] - prob.knots[0].base[0]) * (n / 2) as f64 / (n - 1) as f64;
        assert_abs_diff_eq!(mid.base[0], expect, epsilon = 1e-9);
        // schedule copied
        for (a, b) in lin.knots.iter().zip(&prob.knots) {
            assert_eq!(a.contacts, b.contacts);
        }
    }
}
