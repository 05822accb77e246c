//! Reeds-Shepp shortest paths between SE(2) poses under a minimum
//! turning radius, with arc-length interpolation and discretization.
//!
//! The solver enumerates the full word family set of the original
//! Reeds-Shepp construction: the base formulas cover the canonical
//! words and the remaining ones are reached through the timeflip,
//! reflect, and backwards symmetries, 48 words in total.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RsError {
    #[error("turning radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("arc length {s} outside [0, {total}]")]
    ArcOutOfRange { s: f64, total: f64 },
}

pub type Result<T> = std::result::Result<T, RsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE2Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl SE2Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn planar_distance(&self, other: &SE2Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Wraps into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Steer {
    Left,
    Straight,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Fwd,
    Rev,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsSegment {
    pub steer: Steer,
    pub direction: Direction,
    /// Arc length in meters, non-negative.
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSPath {
    pub segments: Vec<RsSegment>,
    pub turning_radius: f64,
    pub total_length: f64,
    /// Index of the word family that produced the path; ties in length
    /// break toward the lowest index.
    pub family: usize,
}

// --- canonical word formulas -------------------------------------------
//
// All formulas work in normalized units (turning radius 1) on the goal
// (x, y, phi) relative to a start at the origin with zero heading. Each
// returns up to five signed segment lengths; the sign encodes driving
// direction.

const EPS: f64 = 1e-10;

fn polar(x: f64, y: f64) -> (f64, f64) {
    ((x * x + y * y).sqrt(), y.atan2(x))
}

fn mod2pi(a: f64) -> f64 {
    let mut v = a % (2.0 * PI);
    if v < -PI {
        v += 2.0 * PI;
    } else if v > PI {
        v -= 2.0 * PI;
    }
    v
}

fn lp_sp_lp(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let (u, t) = polar(x - phi.sin(), y - 1.0 + phi.cos());
    if t >= -EPS {
        let v = mod2pi(phi - t);
        if v >= -EPS {
            return Some((t, u, v));
        }
    }
    None
}

fn lp_sp_rp(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let (u1, t1) = polar(x + phi.sin(), y - 1.0 - phi.cos());
    if u1 * u1 >= 4.0 {
        let u = (u1 * u1 - 4.0).sqrt();
        let theta = 2f64.atan2(u);
        let t = mod2pi(t1 + theta);
        let v = mod2pi(t - phi);
        if t >= -EPS && v >= -EPS {
            return Some((t, u, v));
        }
    }
    None
}

fn lp_rm_l(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let xi = x - phi.sin();
    let eta = y - 1.0 + phi.cos();
    let (u1, theta) = polar(xi, eta);
    if u1 <= 4.0 {
        let u = -2.0 * (0.25 * u1).asin();
        let t = mod2pi(theta + 0.5 * u + PI);
        let v = mod2pi(phi - t + u);
        if t >= -EPS && u <= EPS {
            return Some((t, u, v));
        }
    }
    None
}

fn tau_omega(u: f64, v: f64, xi: f64, eta: f64, phi: f64) -> (f64, f64) {
    let delta = mod2pi(u - v);
    let a = u.sin() - delta.sin();
    let b = u.cos() - delta.cos() - 1.0;
    let t1 = (eta * a - xi * b).atan2(xi * a + eta * b);
    let t2 = 2.0 * (delta.cos() - v.cos() - u.cos()) + 3.0;
    let tau = if t2 < 0.0 { mod2pi(t1 + PI) } else { mod2pi(t1) };
    let omega = mod2pi(tau - u + v - phi);
    (tau, omega)
}

fn lp_rup_lum_rm(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let rho = 0.25 * (2.0 + (xi * xi + eta * eta).sqrt());
    if rho <= 1.0 {
        let u = rho.acos();
        let (t, v) = tau_omega(u, -u, xi, eta, phi);
        if t >= -EPS && v <= EPS {
            return Some((t, u, v));
        }
    }
    None
}

fn lp_rum_lum_rp(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let rho = (20.0 - xi * xi - eta * eta) / 16.0;
    if (0.0..=1.0).contains(&rho) {
        let u = -rho.acos();
        if u >= -FRAC_PI_2 {
            let (t, v) = tau_omega(u, u, xi, eta, phi);
            if t >= -EPS && v >= -EPS {
                return Some((t, u, v));
            }
        }
    }
    None
}

fn lp_rm_sm_lm(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let xi = x - phi.sin();
    let eta = y - 1.0 + phi.cos();
    let (rho, theta) = polar(xi, eta);
    if rho >= 2.0 {
        let r = (rho * rho - 4.0).sqrt();
        let u = 2.0 - r;
        let t = mod2pi(theta + r.atan2(-2.0));
        let v = mod2pi(phi - FRAC_PI_2 - t);
        if t >= -EPS && u <= EPS && v <= EPS {
            return Some((t, u, v));
        }
    }
    None
}

fn lp_rm_sm_rm(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let (rho, theta) = polar(-eta, xi);
    if rho >= 2.0 {
        let t = theta;
        let u = 2.0 - rho;
        let v = mod2pi(t + FRAC_PI_2 - phi);
        if t >= -EPS && u <= EPS && v <= EPS {
            return Some((t, u, v));
        }
    }
    None
}

fn lp_rm_slm_rp(x: f64, y: f64, phi: f64) -> Option<(f64, f64, f64)> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let (rho, _) = polar(xi, eta);
    if rho >= 2.0 {
        let u = 4.0 - (rho * rho - 4.0).sqrt();
        if u <= EPS {
            let t = mod2pi(((4.0 - u) * xi - 2.0 * eta).atan2(-2.0 * xi + (4.0 - u) * eta));
            let v = mod2pi(t - phi);
            if t >= -EPS && v >= -EPS {
                return Some((t, u, v));
            }
        }
    }
    None
}

// --- candidate assembly -------------------------------------------------

use Steer::{Left as L, Right as R, Straight as S};

/// One candidate: steering pattern plus signed normalized lengths.
#[derive(Debug, Clone)]
struct Candidate {
    steers: Vec<Steer>,
    lengths: Vec<f64>,
    family: usize,
}

impl Candidate {
    fn total(&self) -> f64 {
        self.lengths.iter().map(|l| l.abs()).sum()
    }
}

fn flip_steer(s: Steer) -> Steer {
    match s {
        L => R,
        R => L,
        S => S,
    }
}

/// Generates every word candidate for the normalized goal, tagged with a
/// stable family index for deterministic tie-breaking.
fn candidates(x: f64, y: f64, phi: f64) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    let mut family = 0usize;
    // The four symmetries of each base formula: identity, timeflip
    // (negate x, phi and all lengths), reflect (negate y, phi and swap
    // left/right), and both composed.
    let variants: [(f64, f64, f64, bool, bool); 4] = [
        (x, y, phi, false, false),
        (-x, y, -phi, true, false),
        (x, -y, -phi, false, true),
        (-x, -y, phi, true, true),
    ];
    let push = |steers: &[Steer],
                    lengths: &[f64],
                    timeflip: bool,
                    reflect: bool,
                    family: usize,
                    out: &mut Vec<Candidate>| {
        let steers: Vec<Steer> = steers
            .iter()
            .map(|&s| if reflect { flip_steer(s) } else { s })
            .collect();
        let lengths: Vec<f64> = lengths
            .iter()
            .map(|&l| if timeflip { -l } else { l })
            .collect();
        out.push(Candidate {
            steers,
            lengths,
            family,
        });
    };

    for &(vx, vy, vphi, tf, rf) in &variants {
        // C S C, same steering sense
        if let Some((t, u, v)) = lp_sp_lp(vx, vy, vphi) {
            push(&[L, S, L], &[t, u, v], tf, rf, family, &mut out);
        }
        family += 1;
        // C S C, opposite steering sense
        if let Some((t, u, v)) = lp_sp_rp(vx, vy, vphi) {
            push(&[L, S, R], &[t, u, v], tf, rf, family, &mut out);
        }
        family += 1;
        // C C C
        if let Some((t, u, v)) = lp_rm_l(vx, vy, vphi) {
            push(&[L, R, L], &[t, u, v], tf, rf, family, &mut out);
        }
        family += 1;
        // C C C driven backwards: solve for the reversed goal frame and
        // flip the segment order
        let xb = vx * vphi.cos() + vy * vphi.sin();
        let yb = vx * vphi.sin() - vy * vphi.cos();
        if let Some((t, u, v)) = lp_rm_l(xb, yb, vphi) {
            push(&[L, R, L], &[v, u, t], tf, rf, family, &mut out);
        }
        family += 1;
        // C Cu Cu C
        if let Some((t, u, v)) = lp_rup_lum_rm(vx, vy, vphi) {
            push(&[L, R, L, R], &[t, u, -u, v], tf, rf, family, &mut out);
        }
        family += 1;
        if let Some((t, u, v)) = lp_rum_lum_rp(vx, vy, vphi) {
            push(&[L, R, L, R], &[t, u, u, v], tf, rf, family, &mut out);
        }
        family += 1;
        // C C S C
        if let Some((t, u, v)) = lp_rm_sm_lm(vx, vy, vphi) {
            push(&[L, R, S, L], &[t, -FRAC_PI_2, u, v], tf, rf, family, &mut out);
        }
        family += 1;
        if let Some((t, u, v)) = lp_rm_sm_rm(vx, vy, vphi) {
            push(&[L, R, S, R], &[t, -FRAC_PI_2, u, v], tf, rf, family, &mut out);
        }
        family += 1;
        // C S C C (backwards of C C S C)
        if let Some((t, u, v)) = lp_rm_sm_lm(xb, yb, vphi) {
            push(&[L, S, R, L], &[v, u, -FRAC_PI_2, t], tf, rf, family, &mut out);
        }
        family += 1;
        if let Some((t, u, v)) = lp_rm_sm_rm(xb, yb, vphi) {
            push(&[R, S, R, L], &[v, u, -FRAC_PI_2, t], tf, rf, family, &mut out);
        }
        family += 1;
        // C C S C C
        if let Some((t, u, v)) = lp_rm_slm_rp(vx, vy, vphi) {
            push(
                &[L, R, S, L, R],
                &[t, -FRAC_PI_2, u, -FRAC_PI_2, v],
                tf,
                rf,
                family,
                &mut out,
            );
        }
        family += 1;
    }
    out
}

/// Forward-simulates a candidate in normalized units (radius 1, start at
/// the origin) and checks it reaches the normalized goal.
fn closes_on(c: &Candidate, x: f64, y: f64, phi: f64) -> bool {
    let start = SE2Pose::new(0.0, 0.0, 0.0);
    let mut pose = start;
    for (&steer, &len) in c.steers.iter().zip(&c.lengths) {
        let direction = if len >= 0.0 {
            Direction::Fwd
        } else {
            Direction::Rev
        };
        pose = advance(&pose, steer, direction, len.abs(), 1.0);
    }
    let dx = pose.x - x;
    let dy = pose.y - y;
    (dx * dx + dy * dy).sqrt() <= 1e-8 && normalize_angle(pose.yaw - phi).abs() <= 1e-8
}

fn candidate_to_path(c: &Candidate, radius: f64) -> RSPath {
    let mut segments = Vec::new();
    for (&steer, &len) in c.steers.iter().zip(&c.lengths) {
        if len.abs() <= 1e-12 {
            continue;
        }
        segments.push(RsSegment {
            steer,
            direction: if len >= 0.0 {
                Direction::Fwd
            } else {
                Direction::Rev
            },
            length: len.abs() * radius,
        });
    }
    let total_length = segments.iter().map(|s| s.length).sum();
    RSPath {
        segments,
        turning_radius: radius,
        total_length,
        family: c.family,
    }
}

/// Shortest Reeds-Shepp path from `from` to `to` with the given minimum
/// turning radius. Ties in length break toward the lower family index.
pub fn shortest_path(from: &SE2Pose, to: &SE2Pose, radius: f64) -> Result<RSPath> {
    if !(radius > 0.0) {
        return Err(RsError::BadRadius(radius));
    }
    // normalize: rotate/translate the goal into the start frame, scale
    // by 1/radius
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    let c = from.yaw.cos();
    let s = from.yaw.sin();
    let x = (c * dx + s * dy) / radius;
    let y = (-s * dx + c * dy) / radius;
    let phi = normalize_angle(to.yaw - from.yaw);

    let mut best: Option<Candidate> = None;
    for cand in candidates(x, y, phi) {
        // every candidate must actually close on the goal; formulas whose
        // validity window admits a spurious branch are filtered here
        if !closes_on(&cand, x, y, phi) {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                cand.total() < b.total() - 1e-12
                    || (cand.total() < b.total() + 1e-12 && cand.family < b.family)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    // the zero-motion path when start == goal (no formula may fire)
    let best = best.unwrap_or(Candidate {
        steers: vec![],
        lengths: vec![],
        family: usize::MAX,
    });
    Ok(candidate_to_path(&best, radius))
}

/// Pose after driving distance `d` (meters, signed by the direction)
/// along one primitive from `p`.
fn advance(p: &SE2Pose, steer: Steer, direction: Direction, length: f64, radius: f64) -> SE2Pose {
    let d = match direction {
        Direction::Fwd => length,
        Direction::Rev => -length,
    };
    match steer {
        S => SE2Pose::new(p.x + d * p.yaw.cos(), p.y + d * p.yaw.sin(), p.yaw),
        L | R => {
            let sign = if steer == L { 1.0 } else { -1.0 };
            let dyaw = sign * d / radius;
            // circle center lies at radius to the steering side
            let cx = p.x - sign * radius * p.yaw.sin();
            let cy = p.y + sign * radius * p.yaw.cos();
            let yaw = p.yaw + dyaw;
            SE2Pose::new(
                cx + sign * radius * yaw.sin(),
                cy - sign * radius * yaw.cos(),
                yaw,
            )
        }
    }
}

/// Pose after traversing arc length `s` of the path starting at `from`.
pub fn interpolate(path: &RSPath, from: &SE2Pose, s: f64) -> Result<SE2Pose> {
    if s < -1e-9 || s > path.total_length + 1e-9 {
        return Err(RsError::ArcOutOfRange {
            s,
            total: path.total_length,
        });
    }
    let mut remaining = s.clamp(0.0, path.total_length);
    let mut pose = *from;
    for seg in &path.segments {
        let step = remaining.min(seg.length);
        pose = advance(&pose, seg.steer, seg.direction, step, path.turning_radius);
        remaining -= step;
        if remaining <= 1e-12 {
            break;
        }
    }
    Ok(pose)
}

/// Endpoint reached by driving the whole path.
pub fn endpoint(path: &RSPath, from: &SE2Pose) -> SE2Pose {
    let mut pose = *from;
    for seg in &path.segments {
        pose = advance(&pose, seg.steer, seg.direction, seg.length, path.turning_radius);
    }
    pose
}

/// Poses spaced uniformly at most `max_step` apart in arc length,
/// including both endpoints; `ceil(total/max_step) + 1` entries.
pub fn discretize(path: &RSPath, from: &SE2Pose, max_step: f64) -> Vec<SE2Pose> {
    assert!(max_step > 0.0, "max_step must be positive");
    if path.total_length <= 1e-12 {
        return vec![*from];
    }
    let n = (path.total_length / max_step).ceil() as usize;
    (0..=n)
        .map(|i| {
            let s = path.total_length * i as f64 / n as f64;
            interpolate(path, from, s).expect("s within range")
        })
        .collect()
}
